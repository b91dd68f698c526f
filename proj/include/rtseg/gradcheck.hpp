#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rtseg/tensor.hpp"

namespace rtseg {

struct GradCheckReport {
  std::string op_name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool passed = false;
  std::int64_t coords_checked = 0;
};

// Central-difference verification of the reverse pass.
//
// f must be a pure scalar-valued function of x (it is re-evaluated at
// perturbed copies). x0 should be F64; eps defaults to 1e-4. Relative error
// uses denominator max(|analytic|, |numeric|, 1e-8). When max_coords > 0 and
// x0 has more elements, a seeded random subset of coordinates is probed.
GradCheckReport finite_diff_check(const std::string& op_name,
                                  const std::function<Tensor(const Tensor&)>& f,
                                  const Tensor& x0, double eps = 1e-4,
                                  double tolerance = 1e-4, int max_coords = 0,
                                  std::uint64_t probe_seed = 17);

}  // namespace rtseg
