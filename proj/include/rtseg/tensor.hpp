#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rtseg/errors.hpp"
#include "rtseg/rng.hpp"

// Dense row-major N-d tensor with reverse-mode autodiff.
//
// f32 is the training dtype; f64 exists for finite-difference gradient
// verification. Every op validates that its output is finite and throws
// NumericError naming the op otherwise. Tensors are safe to share
// read-only across threads; building one graph (forward + backward) is
// single-threaded.

namespace rtseg {

enum class Scalar : std::uint8_t { F32, F64 };

namespace detail {

struct TensorImpl {
  std::vector<int> shape;
  Scalar scalar = Scalar::F32;
  std::int64_t numel = 0;
  bool requires_grad = false;

  std::vector<float> f32;
  std::vector<double> f64;
  std::vector<float> grad_f32;
  std::vector<double> grad_f64;

  // Reverse pass: reads this node's grad, accumulates into parents' grads.
  std::function<void(TensorImpl&)> backward;
  std::vector<std::shared_ptr<TensorImpl>> parents;

  template <class T> T* data();
  template <class T> const T* data() const;
  // Lazily allocated, zero-initialized gradient buffer.
  template <class T> T* grad();
  bool grad_allocated() const;
};

template <> inline float* TensorImpl::data<float>() { return f32.data(); }
template <> inline double* TensorImpl::data<double>() { return f64.data(); }
template <> inline const float* TensorImpl::data<float>() const { return f32.data(); }
template <> inline const double* TensorImpl::data<double>() const { return f64.data(); }

}  // namespace detail

std::string shape_str(const std::vector<int>& shape);

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, Scalar s = Scalar::F32,
                      bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, Scalar s = Scalar::F32);
  static Tensor from(std::vector<int> shape, std::vector<double> values,
                     Scalar s = Scalar::F32);
  static Tensor eye(int n, Scalar s = Scalar::F32);
  // i.i.d. uniform / normal entries drawn from rng.
  static Tensor uniform(std::vector<int> shape, double lo, double hi, Rng& rng,
                        Scalar s = Scalar::F32);
  static Tensor normal(std::vector<int> shape, double stddev, Rng& rng,
                       Scalar s = Scalar::F32);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int axis) const;
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t numel() const { return impl_->numel; }
  Scalar scalar_type() const { return impl_->scalar; }
  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  template <class T> std::span<T> data() {
    return {impl_->data<T>(), static_cast<std::size_t>(impl_->numel)};
  }
  template <class T> std::span<const T> data() const {
    return {impl_->data<T>(), static_cast<std::size_t>(impl_->numel)};
  }

  // Element access as double regardless of dtype (test/debug convenience).
  double at(std::int64_t i) const;
  void set(std::int64_t i, double v);
  double item() const;  // numel()==1

  // Gradient of this tensor as a detached Tensor (zeros if never touched).
  Tensor grad() const;
  void zero_grad();

  Tensor clone() const;            // copies data, drops the graph
  Tensor detach() const;           // same data copy, requires_grad=false
  Tensor to(Scalar s) const;       // dtype-converted detached copy

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Scalar-type dispatch helper: invokes f(float{}) or f(double{}).
template <class F>
decltype(auto) dispatch(Scalar s, F&& f) {
  if (s == Scalar::F32) return f(float{});
  return f(double{});
}

// Autograd control. Ops record backward functions only while enabled.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

// Runs the reverse pass from a scalar loss; frees the graph as it goes.
void backward(const Tensor& loss);

// ---- elementwise & broadcast (trailing-dimension broadcasting) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor clamp_min(const Tensor& a, double lo);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, int axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, int axis, bool keepdim = false);
Tensor max(const Tensor& a, int axis, bool keepdim = false);

// ---- linear algebra / shape ----
// A [*,M,K] x B [*,K,N]; leading batch dims must match or be absent on one side.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor transpose_last2(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);

// ---- normalized forms ----
Tensor softmax(const Tensor& a, int axis);
Tensor log_softmax(const Tensor& a, int axis);
Tensor l2_normalize(const Tensor& a, int axis, double eps = 1e-12);

// ---- non-differentiable utilities ----
std::vector<int> argmax(const Tensor& a, int axis);

// Throws NumericError naming `op` if any element of t is not finite.
void check_finite(const char* op, const Tensor& t);

}  // namespace rtseg
