#include "rtseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rtseg/rng.hpp"

namespace rtseg {

GradCheckReport finite_diff_check(const std::string& op_name,
                                  const std::function<Tensor(const Tensor&)>& f,
                                  const Tensor& x0, double eps, double tolerance,
                                  int max_coords, std::uint64_t probe_seed) {
  GradCheckReport rep;
  rep.op_name = op_name;

  Tensor x = x0.clone();
  x.set_requires_grad(true);
  Tensor loss = f(x);
  if (loss.numel() != 1)
    throw NumericError("finite_diff_check(" + op_name + "): f must return a scalar");
  backward(loss);
  Tensor analytic = x.grad();

  std::vector<std::int64_t> coords;
  if (max_coords > 0 && x0.numel() > max_coords) {
    Rng rng(probe_seed);
    coords.resize(static_cast<std::size_t>(max_coords));
    for (auto& c : coords) c = static_cast<std::int64_t>(rng.uniform_int(
        static_cast<std::uint64_t>(x0.numel())));
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  } else {
    coords.resize(static_cast<std::size_t>(x0.numel()));
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = static_cast<std::int64_t>(i);
  }

  Tensor probe = x0.clone();
  probe.set_requires_grad(false);
  for (std::int64_t i : coords) {
    const double orig = probe.at(i);
    probe.set(i, orig + eps);
    double fp = f(probe).item();
    probe.set(i, orig - eps);
    double fm = f(probe).item();
    probe.set(i, orig);
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_check(" + op_name + "): non-finite f at probe " +
                         std::to_string(i));
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic.at(i);
    const double abs_err = std::abs(a - numeric);
    const double rel_err =
        abs_err / std::max({std::abs(a), std::abs(numeric), 1e-8});
    rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
    rep.max_rel_err = std::max(rep.max_rel_err, rel_err);
  }
  rep.coords_checked = static_cast<std::int64_t>(coords.size());
  rep.passed = rep.max_rel_err < tolerance;
  return rep;
}

}  // namespace rtseg
