#include "rtseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "rtseg/kern/kernels.hpp"

namespace rtseg {

namespace detail {

template <> float* TensorImpl::grad<float>() {
  if (grad_f32.empty()) grad_f32.assign(static_cast<std::size_t>(numel), 0.0f);
  return grad_f32.data();
}
template <> double* TensorImpl::grad<double>() {
  if (grad_f64.empty()) grad_f64.assign(static_cast<std::size_t>(numel), 0.0);
  return grad_f64.data();
}
bool TensorImpl::grad_allocated() const {
  return !grad_f32.empty() || !grad_f64.empty();
}

}  // namespace detail

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

namespace {

thread_local bool g_grad_enabled = true;

std::int64_t numel_of(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

ImplPtr make_impl(std::vector<int> shape, Scalar s, bool requires_grad) {
  for (int d : shape)
    if (d <= 0) throw NumericError("tensor: non-positive dimension in " + shape_str(shape));
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->scalar = s;
  impl->numel = numel_of(impl->shape);
  impl->requires_grad = requires_grad && g_grad_enabled;
  if (s == Scalar::F32)
    impl->f32.assign(static_cast<std::size_t>(impl->numel), 0.0f);
  else
    impl->f64.assign(static_cast<std::size_t>(impl->numel), 0.0);
  return impl;
}

void require_same_scalar(const char* op, const Tensor& a, const Tensor& b) {
  if (a.scalar_type() != b.scalar_type())
    throw NumericError(std::string(op) + ": mixed dtypes");
}

int normalize_axis(const char* op, int axis, int rank) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw NumericError(std::string(op) + ": axis out of range");
  return axis;
}

// ---- broadcasting (numpy trailing-dimension rules) ----

struct BcastPlan {
  std::vector<int> out_shape;
  std::int64_t out_numel = 0;
  std::vector<std::int64_t> sa, sb;  // per-out-dim strides into a / b (0 = broadcast)
  bool same_shape = false;
};

BcastPlan make_bcast(const char* op, const std::vector<int>& sa_shape,
                     const std::vector<int>& sb_shape) {
  BcastPlan p;
  const int ra = static_cast<int>(sa_shape.size());
  const int rb = static_cast<int>(sb_shape.size());
  const int r = std::max(ra, rb);
  p.out_shape.resize(r);
  std::vector<int> da(r, 1), db(r, 1);
  for (int i = 0; i < ra; ++i) da[r - ra + i] = sa_shape[i];
  for (int i = 0; i < rb; ++i) db[r - rb + i] = sb_shape[i];
  for (int i = 0; i < r; ++i) {
    if (da[i] == db[i]) p.out_shape[i] = da[i];
    else if (da[i] == 1) p.out_shape[i] = db[i];
    else if (db[i] == 1) p.out_shape[i] = da[i];
    else
      throw NumericError(std::string(op) + ": shape mismatch " + shape_str(sa_shape) +
                         " vs " + shape_str(sb_shape));
  }
  p.out_numel = numel_of(p.out_shape);
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  std::int64_t stra = 1, strb = 1;
  for (int i = r - 1; i >= 0; --i) {
    p.sa[i] = (da[i] == 1) ? 0 : stra;
    p.sb[i] = (db[i] == 1) ? 0 : strb;
    stra *= da[i];
    strb *= db[i];
  }
  p.same_shape = (sa_shape == sb_shape);
  return p;
}

// Applies f elementwise over the broadcast product. OffA/OffB advance with
// an odometer so each element costs O(1).
template <class T, class F>
void bcast_apply(const T* a, const T* b, T* o, const BcastPlan& p, F&& f) {
  const int r = static_cast<int>(p.out_shape.size());
  if (r == 0) {
    o[0] = f(a[0], b[0]);
    return;
  }
  std::vector<int> idx(r, 0);
  std::int64_t offa = 0, offb = 0;
  for (std::int64_t lin = 0;;) {
    o[lin] = f(a[offa], b[offb]);
    if (++lin == p.out_numel) break;
    int d = r - 1;
    while (true) {
      ++idx[d];
      offa += p.sa[d];
      offb += p.sb[d];
      if (idx[d] < p.out_shape[d]) break;
      offa -= static_cast<std::int64_t>(idx[d]) * p.sa[d];
      offb -= static_cast<std::int64_t>(idx[d]) * p.sb[d];
      idx[d] = 0;
      --d;
    }
  }
}

// Accumulates per-output-element values g(dout, a, b) into the chosen input's
// grad buffer, reducing over broadcast dimensions.
template <class T, class F>
void bcast_accum(const T* dout, const T* a, const T* b, T* target,
                 bool into_a, const BcastPlan& p, F&& g) {
  const int r = static_cast<int>(p.out_shape.size());
  if (r == 0) {
    target[0] += g(dout[0], a[0], b[0]);
    return;
  }
  std::vector<int> idx(r, 0);
  std::int64_t offa = 0, offb = 0;
  for (std::int64_t lin = 0;;) {
    target[into_a ? offa : offb] += g(dout[lin], a[offa], b[offb]);
    if (++lin == p.out_numel) break;
    int d = r - 1;
    while (true) {
      ++idx[d];
      offa += p.sa[d];
      offb += p.sb[d];
      if (idx[d] < p.out_shape[d]) break;
      offa -= static_cast<std::int64_t>(idx[d]) * p.sa[d];
      offb -= static_cast<std::int64_t>(idx[d]) * p.sb[d];
      idx[d] = 0;
      --d;
    }
  }
}

bool wants_grad(const Tensor& t) { return t.requires_grad(); }

void set_node(Tensor& out, std::vector<ImplPtr> parents,
              std::function<void(TensorImpl&)> fn) {
  if (!out.requires_grad()) return;
  out.impl()->parents = std::move(parents);
  out.impl()->backward = std::move(fn);
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

// ---- Tensor basics ----

Tensor Tensor::wrap(ImplPtr impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

Tensor Tensor::zeros(std::vector<int> shape, Scalar s, bool requires_grad) {
  return wrap(make_impl(std::move(shape), s, requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double value, Scalar s) {
  Tensor t = zeros(std::move(shape), s);
  dispatch(s, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, Scalar s) {
  Tensor t = zeros(std::move(shape), s);
  if (static_cast<std::int64_t>(values.size()) != t.numel())
    throw NumericError("Tensor::from: value count does not match shape");
  dispatch(s, [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::eye(int n, Scalar s) {
  Tensor t = zeros({n, n}, s);
  for (int i = 0; i < n; ++i) t.set(static_cast<std::int64_t>(i) * n + i, 1.0);
  return t;
}

Tensor Tensor::uniform(std::vector<int> shape, double lo, double hi, Rng& rng, Scalar s) {
  Tensor t = zeros(std::move(shape), s);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
  return t;
}

Tensor Tensor::normal(std::vector<int> shape, double stddev, Rng& rng, Scalar s) {
  Tensor t = zeros(std::move(shape), s);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, stddev * rng.normal());
  return t;
}

int Tensor::dim(int axis) const {
  return impl_->shape[static_cast<std::size_t>(normalize_axis("dim", axis, rank()))];
}

double Tensor::at(std::int64_t i) const {
  return impl_->scalar == Scalar::F32 ? static_cast<double>(impl_->f32[static_cast<std::size_t>(i)])
                                      : impl_->f64[static_cast<std::size_t>(i)];
}

void Tensor::set(std::int64_t i, double v) {
  if (impl_->scalar == Scalar::F32)
    impl_->f32[static_cast<std::size_t>(i)] = static_cast<float>(v);
  else
    impl_->f64[static_cast<std::size_t>(i)] = v;
}

double Tensor::item() const {
  if (numel() != 1) throw NumericError("item: tensor has " + std::to_string(numel()) + " elements");
  return at(0);
}

Tensor Tensor::grad() const {
  Tensor g = zeros(impl_->shape, impl_->scalar);
  if (impl_->grad_allocated()) {
    dispatch(impl_->scalar, [&](auto tag) {
      using T = decltype(tag);
      const T* src = impl_->scalar == Scalar::F32
                         ? reinterpret_cast<const T*>(impl_->grad_f32.data())
                         : reinterpret_cast<const T*>(impl_->grad_f64.data());
      std::memcpy(g.data<T>().data(), src, sizeof(T) * static_cast<std::size_t>(numel()));
    });
  }
  return g;
}

void Tensor::zero_grad() {
  impl_->grad_f32.clear();
  impl_->grad_f64.clear();
}

Tensor Tensor::clone() const {
  Tensor t = zeros(impl_->shape, impl_->scalar, impl_->requires_grad);
  dispatch(impl_->scalar, [&](auto tag) {
    using T = decltype(tag);
    std::memcpy(t.data<T>().data(), impl_->data<T>(),
                sizeof(T) * static_cast<std::size_t>(numel()));
  });
  return t;
}

Tensor Tensor::detach() const {
  Tensor t = clone();
  t.impl()->requires_grad = false;
  return t;
}

Tensor Tensor::to(Scalar s) const {
  Tensor t = zeros(impl_->shape, s);
  for (std::int64_t i = 0; i < numel(); ++i) t.set(i, at(i));
  return t;
}

void check_finite(const char* op, const Tensor& t) {
  bool ok = dispatch(t.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    T s = kern::sum_abs(t.impl()->data<T>(), static_cast<std::size_t>(t.numel()));
    return std::isfinite(static_cast<double>(s));
  });
  if (ok) return;
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t.at(i)))
      throw NumericError(std::string(op) + ": non-finite value at flat index " +
                         std::to_string(i) + " of " + shape_str(t.shape()));
  }
  // sum overflowed but every element is finite: treat as overflow error
  throw NumericError(std::string(op) + ": magnitude overflow in " + shape_str(t.shape()));
}

// ---- backward pass ----

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw NumericError("backward: loss must be scalar");
  if (!loss.requires_grad())
    throw NumericError("backward: loss does not require grad");

  // Postorder DFS over parents.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      TensorImpl* next = node->parents[child++].get();
      if (next->requires_grad && seen.insert(next).second)
        stack.emplace_back(next, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  dispatch(loss.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    loss.impl()->grad<T>()[0] = T(1);
  });

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward) {
      node->backward(*node);
      node->backward = nullptr;  // free closure state as we go
    }
    node->parents.clear();
  }
}

// ---- elementwise binary ----

namespace {

enum class BinOp { Add, Sub, Mul, Div };

const char* bin_name(BinOp op) {
  switch (op) {
    case BinOp::Add: return "add";
    case BinOp::Sub: return "sub";
    case BinOp::Mul: return "mul";
    default: return "div";
  }
}

Tensor binary_op(BinOp op, const Tensor& a, const Tensor& b) {
  const char* name = bin_name(op);
  require_same_scalar(name, a, b);
  BcastPlan plan = make_bcast(name, a.shape(), b.shape());
  bool rg = wants_grad(a) || wants_grad(b);
  Tensor out = Tensor::zeros(plan.out_shape, a.scalar_type(), rg);

  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl()->data<T>();
    const T* pb = b.impl()->data<T>();
    T* po = out.impl()->data<T>();
    const std::size_t n = static_cast<std::size_t>(plan.out_numel);
    if (plan.same_shape) {
      switch (op) {
        case BinOp::Add: kern::add(pa, pb, po, n); break;
        case BinOp::Sub: kern::sub(pa, pb, po, n); break;
        case BinOp::Mul: kern::mul(pa, pb, po, n); break;
        case BinOp::Div: kern::div(pa, pb, po, n); break;
      }
    } else {
      switch (op) {
        case BinOp::Add: bcast_apply(pa, pb, po, plan, [](T x, T y) { return x + y; }); break;
        case BinOp::Sub: bcast_apply(pa, pb, po, plan, [](T x, T y) { return x - y; }); break;
        case BinOp::Mul: bcast_apply(pa, pb, po, plan, [](T x, T y) { return x * y; }); break;
        case BinOp::Div: bcast_apply(pa, pb, po, plan, [](T x, T y) { return x / y; }); break;
      }
    }
  });
  check_finite(name, out);

  if (rg) {
    auto ai = a.impl();
    auto bi = b.impl();
    set_node(out, {ai, bi}, [op, ai, bi, plan](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        const T* dout = self.grad<T>();
        const T* pa = ai->data<T>();
        const T* pb = bi->data<T>();
        const std::size_t n = static_cast<std::size_t>(self.numel);
        if (ai->requires_grad) {
          T* da = ai->grad<T>();
          if (plan.same_shape) {
            switch (op) {
              case BinOp::Add:
              case BinOp::Sub: kern::axpy(T(1), dout, da, n); break;
              case BinOp::Mul: kern::mul_acc(dout, pb, da, n); break;
              case BinOp::Div:
                for (std::size_t i = 0; i < n; ++i) da[i] += dout[i] / pb[i];
                break;
            }
          } else {
            switch (op) {
              case BinOp::Add:
              case BinOp::Sub:
                bcast_accum(dout, pa, pb, da, true, plan, [](T d, T, T) { return d; });
                break;
              case BinOp::Mul:
                bcast_accum(dout, pa, pb, da, true, plan, [](T d, T, T y) { return d * y; });
                break;
              case BinOp::Div:
                bcast_accum(dout, pa, pb, da, true, plan, [](T d, T, T y) { return d / y; });
                break;
            }
          }
        }
        if (bi->requires_grad) {
          T* db = bi->grad<T>();
          if (plan.same_shape) {
            switch (op) {
              case BinOp::Add: kern::axpy(T(1), dout, db, n); break;
              case BinOp::Sub: kern::axpy(T(-1), dout, db, n); break;
              case BinOp::Mul: kern::mul_acc(dout, pa, db, n); break;
              case BinOp::Div:
                for (std::size_t i = 0; i < n; ++i)
                  db[i] -= dout[i] * pa[i] / (pb[i] * pb[i]);
                break;
            }
          } else {
            switch (op) {
              case BinOp::Add:
                bcast_accum(dout, pa, pb, db, false, plan, [](T d, T, T) { return d; });
                break;
              case BinOp::Sub:
                bcast_accum(dout, pa, pb, db, false, plan, [](T d, T, T) { return -d; });
                break;
              case BinOp::Mul:
                bcast_accum(dout, pa, pb, db, false, plan, [](T d, T x, T) { return d * x; });
                break;
              case BinOp::Div:
                bcast_accum(dout, pa, pb, db, false, plan,
                            [](T d, T x, T y) { return -d * x / (y * y); });
                break;
            }
          }
        }
      });
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(BinOp::Div, a, b); }

// ---- elementwise unary ----

namespace {

// fwd(x) -> y; dydx(x, y) -> local derivative
template <class Fwd, class Dydx>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Dydx dydx) {
  bool rg = wants_grad(a);
  Tensor out = Tensor::zeros(a.shape(), a.scalar_type(), rg);
  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl()->data<T>();
    T* po = out.impl()->data<T>();
    for (std::int64_t i = 0; i < a.numel(); ++i)
      po[i] = static_cast<T>(fwd(static_cast<double>(pa[i])));
  });
  check_finite(name, out);
  if (rg) {
    auto ai = a.impl();
    set_node(out, {ai}, [ai, dydx](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        const T* dout = self.grad<T>();
        const T* px = ai->data<T>();
        const T* py = self.data<T>();
        T* da = ai->grad<T>();
        for (std::int64_t i = 0; i < self.numel; ++i)
          da[i] += dout[i] * static_cast<T>(dydx(static_cast<double>(px[i]),
                                                 static_cast<double>(py[i])));
      });
    });
  }
  return out;
}

}  // namespace

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op("add_scalar", a, [s](double x) { return x + s; },
                  [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op("mul_scalar", a, [s](double x) { return x * s; },
                  [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary_op("sqrt", a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return y > 0 ? 0.5 / y : 0.0; });
}

Tensor abs(const Tensor& a) {
  // subgradient at 0 is 0
  return unary_op("abs", a, [](double x) { return std::abs(x); },
                  [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& a) {
  bool rg = wants_grad(a);
  Tensor out = Tensor::zeros(a.shape(), a.scalar_type(), rg);
  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    kern::relu(a.impl()->data<T>(), out.impl()->data<T>(),
               static_cast<std::size_t>(a.numel()));
  });
  if (rg) {
    auto ai = a.impl();
    set_node(out, {ai}, [ai](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        const T* dout = self.grad<T>();
        const T* px = ai->data<T>();
        T* da = ai->grad<T>();
        for (std::int64_t i = 0; i < self.numel; ++i)
          if (px[i] > T(0)) da[i] += dout[i];
      });
    });
  }
  return out;
}

Tensor leaky_relu(const Tensor& a, double slope) {
  bool rg = wants_grad(a);
  Tensor out = Tensor::zeros(a.shape(), a.scalar_type(), rg);
  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    kern::leaky_relu(a.impl()->data<T>(), static_cast<T>(slope),
                     out.impl()->data<T>(), static_cast<std::size_t>(a.numel()));
  });
  if (rg) {
    auto ai = a.impl();
    set_node(out, {ai}, [ai, slope](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        const T* dout = self.grad<T>();
        const T* px = ai->data<T>();
        T* da = ai->grad<T>();
        const T s = static_cast<T>(slope);
        for (std::int64_t i = 0; i < self.numel; ++i)
          da[i] += px[i] > T(0) ? dout[i] : s * dout[i];
      });
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  return unary_op("sigmoid", a,
                  [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary_op("tanh", a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor clamp_min(const Tensor& a, double lo) {
  return unary_op("clamp_min", a, [lo](double x) { return x < lo ? lo : x; },
                  [lo](double x, double) { return x < lo ? 0.0 : 1.0; });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
  bool rg = wants_grad(a);
  Tensor out = Tensor::zeros({1}, a.scalar_type(), rg);
  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    out.impl()->data<T>()[0] =
        kern::sum(a.impl()->data<T>(), static_cast<std::size_t>(a.numel()));
  });
  check_finite("sum", out);
  if (rg) {
    auto ai = a.impl();
    set_node(out, {ai}, [ai](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        kern::add_scalar(ai->grad<T>(), self.grad<T>()[0], ai->grad<T>(),
                         static_cast<std::size_t>(ai->numel));
      });
    });
  }
  return out;
}

namespace {

// Decomposes shape around `axis` into outer / n / inner extents.
struct AxisSplit {
  std::int64_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const std::vector<int>& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.n = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    s.inner *= shape[i];
  return s;
}

std::vector<int> reduced_shape(const std::vector<int>& shape, int axis, bool keepdim) {
  std::vector<int> out = shape;
  if (keepdim) out[static_cast<std::size_t>(axis)] = 1;
  else out.erase(out.begin() + axis);
  if (out.empty()) out = {1};
  return out;
}

}  // namespace

Tensor sum(const Tensor& a, int axis, bool keepdim) {
  axis = normalize_axis("sum", axis, a.rank());
  AxisSplit sp = split_axis(a.shape(), axis);
  bool rg = wants_grad(a);
  Tensor out = Tensor::zeros(reduced_shape(a.shape(), axis, keepdim), a.scalar_type(), rg);
  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl()->data<T>();
    T* po = out.impl()->data<T>();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      const T* base = pa + o * sp.n * sp.inner;
      T* obase = po + o * sp.inner;
      if (sp.inner == 1) {
        obase[0] = kern::sum(base, static_cast<std::size_t>(sp.n));
      } else {
        for (std::int64_t k = 0; k < sp.n; ++k)
          kern::add(obase, base + k * sp.inner, obase, static_cast<std::size_t>(sp.inner));
      }
    }
  });
  check_finite("sum", out);
  if (rg) {
    auto ai = a.impl();
    set_node(out, {ai}, [ai, sp](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        const T* dout = self.grad<T>();
        T* da = ai->grad<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
          const T* dbase = dout + o * sp.inner;
          T* abase = da + o * sp.n * sp.inner;
          for (std::int64_t k = 0; k < sp.n; ++k)
            kern::add(abase + k * sp.inner, dbase, abase + k * sp.inner,
                      static_cast<std::size_t>(sp.inner));
        }
      });
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean(const Tensor& a, int axis, bool keepdim) {
  axis = normalize_axis("mean", axis, a.rank());
  double n = a.dim(axis);
  return mul_scalar(sum(a, axis, keepdim), 1.0 / n);
}

Tensor max(const Tensor& a, int axis, bool keepdim) {
  axis = normalize_axis("max", axis, a.rank());
  AxisSplit sp = split_axis(a.shape(), axis);
  bool rg = wants_grad(a);
  Tensor out = Tensor::zeros(reduced_shape(a.shape(), axis, keepdim), a.scalar_type(), rg);
  auto arg = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(sp.outer * sp.inner), 0);
  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl()->data<T>();
    T* po = out.impl()->data<T>();
    for (std::int64_t o = 0; o < sp.outer; ++o)
      for (std::int64_t in = 0; in < sp.inner; ++in) {
        const T* base = pa + o * sp.n * sp.inner + in;
        T best = base[0];
        std::int64_t bi = 0;
        for (std::int64_t k = 1; k < sp.n; ++k) {
          T v = base[k * sp.inner];
          if (v > best) { best = v; bi = k; }
        }
        po[o * sp.inner + in] = best;
        (*arg)[static_cast<std::size_t>(o * sp.inner + in)] = bi;
      }
  });
  if (rg) {
    auto ai = a.impl();
    set_node(out, {ai}, [ai, sp, arg](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        const T* dout = self.grad<T>();
        T* da = ai->grad<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o)
          for (std::int64_t in = 0; in < sp.inner; ++in) {
            std::int64_t k = (*arg)[static_cast<std::size_t>(o * sp.inner + in)];
            da[o * sp.n * sp.inner + k * sp.inner + in] += dout[o * sp.inner + in];
          }
      });
    });
  }
  return out;
}

// ---- matmul ----

namespace {

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
  for (std::int64_t m = 0; m < M; ++m) {
    const T* arow = A + m * K;
    T* crow = C + m * N;
    for (std::int64_t k = 0; k < K; ++k)
      kern::axpy(arow[k], B + k * N, crow, static_cast<std::size_t>(N));
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
  for (std::int64_t m = 0; m < M; ++m)
    for (std::int64_t n = 0; n < N; ++n)
      C[m * N + n] += kern::dot(A + m * K, B + n * K, static_cast<std::size_t>(K));
}

// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, const T* B, T* C) {
  for (std::int64_t k = 0; k < K; ++k) {
    const T* arow = A + k * M;
    const T* brow = B + k * N;
    for (std::int64_t m = 0; m < M; ++m)
      kern::axpy(arow[m], brow, C + m * N, static_cast<std::size_t>(N));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_scalar("matmul", a, b);
  const int ra = a.rank(), rb = b.rank();
  if (ra < 2 || rb < 2 || ra > 3 || rb > 3)
    throw NumericError("matmul: ranks must be 2 or 3, got " + shape_str(a.shape()) +
                       " x " + shape_str(b.shape()));
  const std::int64_t M = a.dim(ra - 2), K = a.dim(ra - 1);
  const std::int64_t Kb = b.dim(rb - 2), N = b.dim(rb - 1);
  if (K != Kb)
    throw NumericError("matmul: inner dimension mismatch " + shape_str(a.shape()) +
                       " x " + shape_str(b.shape()));
  const std::int64_t Ba = ra == 3 ? a.dim(0) : 0;
  const std::int64_t Bb = rb == 3 ? b.dim(0) : 0;
  if (Ba && Bb && Ba != Bb)
    throw NumericError("matmul: batch mismatch " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
  const std::int64_t batch = std::max<std::int64_t>({Ba, Bb, 1});
  std::vector<int> out_shape =
      (ra == 3 || rb == 3)
          ? std::vector<int>{static_cast<int>(batch), static_cast<int>(M), static_cast<int>(N)}
          : std::vector<int>{static_cast<int>(M), static_cast<int>(N)};

  bool rg = wants_grad(a) || wants_grad(b);
  Tensor out = Tensor::zeros(out_shape, a.scalar_type(), rg);
  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl()->data<T>();
    const T* pb = b.impl()->data<T>();
    T* po = out.impl()->data<T>();
    for (std::int64_t i = 0; i < batch; ++i)
      gemm_nn(M, N, K, pa + (Ba ? i * M * K : 0), pb + (Bb ? i * K * N : 0),
              po + i * M * N);
  });
  check_finite("matmul", out);
  if (rg) {
    auto ai = a.impl();
    auto bi = b.impl();
    set_node(out, {ai, bi}, [ai, bi, M, N, K, Ba, Bb, batch](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        const T* dout = self.grad<T>();
        const T* pa = ai->data<T>();
        const T* pb = bi->data<T>();
        for (std::int64_t i = 0; i < batch; ++i) {
          const T* dC = dout + i * M * N;
          if (ai->requires_grad)
            gemm_nt(M, K, N, dC, pb + (Bb ? i * K * N : 0),
                    ai->grad<T>() + (Ba ? i * M * K : 0));
          if (bi->requires_grad)
            gemm_tn(K, N, M, pa + (Ba ? i * M * K : 0), dC,
                    bi->grad<T>() + (Bb ? i * K * N : 0));
        }
      });
    });
  }
  return out;
}

// ---- shape ops ----

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  // one -1 dim is inferred
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw NumericError("reshape: multiple -1 dims");
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || a.numel() % known)
      throw NumericError("reshape: cannot infer dim for " + shape_str(a.shape()));
    shape[static_cast<std::size_t>(infer)] = static_cast<int>(a.numel() / known);
  }
  if (numel_of(shape) != a.numel())
    throw NumericError("reshape: element count mismatch " + shape_str(a.shape()) +
                       " -> " + shape_str(shape));
  bool rg = wants_grad(a);
  Tensor out = Tensor::zeros(shape, a.scalar_type(), rg);
  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    std::memcpy(out.impl()->data<T>(), a.impl()->data<T>(),
                sizeof(T) * static_cast<std::size_t>(a.numel()));
  });
  if (rg) {
    auto ai = a.impl();
    set_node(out, {ai}, [ai](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        kern::add(ai->grad<T>(), self.grad<T>(), ai->grad<T>(),
                  static_cast<std::size_t>(self.numel));
      });
    });
  }
  return out;
}

Tensor transpose_last2(const Tensor& a) {
  if (a.rank() < 2) throw NumericError("transpose_last2: rank < 2");
  std::vector<int> shape = a.shape();
  const int r = a.rank();
  std::swap(shape[static_cast<std::size_t>(r - 2)], shape[static_cast<std::size_t>(r - 1)]);
  const std::int64_t M = a.dim(r - 2), N = a.dim(r - 1);
  const std::int64_t batch = a.numel() / (M * N);
  bool rg = wants_grad(a);
  Tensor out = Tensor::zeros(shape, a.scalar_type(), rg);
  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl()->data<T>();
    T* po = out.impl()->data<T>();
    for (std::int64_t bidx = 0; bidx < batch; ++bidx) {
      const T* src = pa + bidx * M * N;
      T* dst = po + bidx * M * N;
      for (std::int64_t m = 0; m < M; ++m)
        for (std::int64_t n = 0; n < N; ++n) dst[n * M + m] = src[m * N + n];
    }
  });
  if (rg) {
    auto ai = a.impl();
    set_node(out, {ai}, [ai, M, N, batch](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        const T* dout = self.grad<T>();
        T* da = ai->grad<T>();
        for (std::int64_t bidx = 0; bidx < batch; ++bidx) {
          const T* src = dout + bidx * M * N;
          T* dst = da + bidx * M * N;
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t m = 0; m < M; ++m) dst[m * N + n] += src[n * M + m];
        }
      });
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw NumericError("concat: no inputs");
  const Tensor& first = parts.front();
  axis = normalize_axis("concat", axis, first.rank());
  std::vector<int> shape = first.shape();
  int total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.rank() != first.rank())
      throw NumericError("concat: rank mismatch");
    for (int i = 0; i < p.rank(); ++i)
      if (i != axis && p.dim(i) != first.dim(i))
        throw NumericError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                           shape_str(first.shape()));
    require_same_scalar("concat", p, first);
    total += p.dim(axis);
    rg = rg || wants_grad(p);
  }
  shape[static_cast<std::size_t>(axis)] = total;
  Tensor out = Tensor::zeros(shape, first.scalar_type(), rg);

  AxisSplit sp = split_axis(shape, axis);
  dispatch(first.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    T* po = out.impl()->data<T>();
    std::int64_t off = 0;
    for (const Tensor& p : parts) {
      const std::int64_t pn = p.dim(axis);
      const T* ps = p.impl()->data<T>();
      for (std::int64_t o = 0; o < sp.outer; ++o)
        std::memcpy(po + (o * total + off) * sp.inner, ps + o * pn * sp.inner,
                    sizeof(T) * static_cast<std::size_t>(pn * sp.inner));
      off += pn;
    }
  });
  if (rg) {
    std::vector<ImplPtr> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    set_node(out, impls, [impls, sp, total, axis](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        const T* dout = self.grad<T>();
        std::int64_t off = 0;
        for (const auto& pi : impls) {
          const std::int64_t pn = pi->shape[static_cast<std::size_t>(axis)];
          if (pi->requires_grad) {
            T* dp = pi->grad<T>();
            for (std::int64_t o = 0; o < sp.outer; ++o)
              kern::add(dp + o * pn * sp.inner, dout + (o * total + off) * sp.inner,
                        dp + o * pn * sp.inner,
                        static_cast<std::size_t>(pn * sp.inner));
          }
          off += pn;
        }
      });
    });
  }
  return out;
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
  axis = normalize_axis("slice", axis, a.rank());
  if (start < 0 || len <= 0 || start + len > a.dim(axis))
    throw NumericError("slice: range [" + std::to_string(start) + "," +
                       std::to_string(start + len) + ") out of bounds for " +
                       shape_str(a.shape()));
  std::vector<int> shape = a.shape();
  shape[static_cast<std::size_t>(axis)] = len;
  AxisSplit sp = split_axis(a.shape(), axis);
  bool rg = wants_grad(a);
  Tensor out = Tensor::zeros(shape, a.scalar_type(), rg);
  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl()->data<T>();
    T* po = out.impl()->data<T>();
    for (std::int64_t o = 0; o < sp.outer; ++o)
      std::memcpy(po + o * len * sp.inner, pa + (o * sp.n + start) * sp.inner,
                  sizeof(T) * static_cast<std::size_t>(len * sp.inner));
  });
  if (rg) {
    auto ai = a.impl();
    set_node(out, {ai}, [ai, sp, start, len](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        const T* dout = self.grad<T>();
        T* da = ai->grad<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
          T* dst = da + (o * sp.n + start) * sp.inner;
          kern::add(dst, dout + o * len * sp.inner, dst,
                    static_cast<std::size_t>(len * sp.inner));
        }
      });
    });
  }
  return out;
}

// ---- softmax family ----

namespace {

enum class SmKind { Softmax, LogSoftmax };

Tensor softmax_impl(SmKind kind, const Tensor& a, int axis) {
  const char* name = kind == SmKind::Softmax ? "softmax" : "log_softmax";
  axis = normalize_axis(name, axis, a.rank());
  AxisSplit sp = split_axis(a.shape(), axis);
  bool rg = wants_grad(a);
  Tensor out = Tensor::zeros(a.shape(), a.scalar_type(), rg);
  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl()->data<T>();
    T* po = out.impl()->data<T>();
    for (std::int64_t o = 0; o < sp.outer; ++o)
      for (std::int64_t in = 0; in < sp.inner; ++in) {
        const T* x = pa + o * sp.n * sp.inner + in;
        T* y = po + o * sp.n * sp.inner + in;
        T m = x[0];
        for (std::int64_t k = 1; k < sp.n; ++k)
          if (x[k * sp.inner] > m) m = x[k * sp.inner];
        double denom = 0.0;
        for (std::int64_t k = 0; k < sp.n; ++k)
          denom += std::exp(static_cast<double>(x[k * sp.inner] - m));
        if (kind == SmKind::Softmax) {
          for (std::int64_t k = 0; k < sp.n; ++k)
            y[k * sp.inner] = static_cast<T>(
                std::exp(static_cast<double>(x[k * sp.inner] - m)) / denom);
        } else {
          const double logz = std::log(denom);
          for (std::int64_t k = 0; k < sp.n; ++k)
            y[k * sp.inner] =
                static_cast<T>(static_cast<double>(x[k * sp.inner] - m) - logz);
        }
      }
  });
  check_finite(name, out);
  if (rg) {
    auto ai = a.impl();
    set_node(out, {ai}, [ai, sp, kind](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        const T* dout = self.grad<T>();
        const T* y = self.data<T>();
        T* da = ai->grad<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o)
          for (std::int64_t in = 0; in < sp.inner; ++in) {
            const std::int64_t base = o * sp.n * sp.inner + in;
            double acc = 0.0;
            if (kind == SmKind::Softmax) {
              for (std::int64_t k = 0; k < sp.n; ++k)
                acc += static_cast<double>(dout[base + k * sp.inner]) *
                       static_cast<double>(y[base + k * sp.inner]);
              for (std::int64_t k = 0; k < sp.n; ++k) {
                const std::int64_t i = base + k * sp.inner;
                da[i] += static_cast<T>((static_cast<double>(dout[i]) - acc) *
                                        static_cast<double>(y[i]));
              }
            } else {
              for (std::int64_t k = 0; k < sp.n; ++k)
                acc += static_cast<double>(dout[base + k * sp.inner]);
              for (std::int64_t k = 0; k < sp.n; ++k) {
                const std::int64_t i = base + k * sp.inner;
                da[i] += static_cast<T>(
                    static_cast<double>(dout[i]) -
                    acc * std::exp(static_cast<double>(y[i])));
              }
            }
          }
      });
    });
  }
  return out;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) { return softmax_impl(SmKind::Softmax, a, axis); }
Tensor log_softmax(const Tensor& a, int axis) { return softmax_impl(SmKind::LogSoftmax, a, axis); }

Tensor l2_normalize(const Tensor& a, int axis, double eps) {
  axis = normalize_axis("l2_normalize", axis, a.rank());
  AxisSplit sp = split_axis(a.shape(), axis);
  bool rg = wants_grad(a);
  Tensor out = Tensor::zeros(a.shape(), a.scalar_type(), rg);
  auto norms = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(sp.outer * sp.inner));
  dispatch(a.scalar_type(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.impl()->data<T>();
    T* po = out.impl()->data<T>();
    for (std::int64_t o = 0; o < sp.outer; ++o)
      for (std::int64_t in = 0; in < sp.inner; ++in) {
        const std::int64_t base = o * sp.n * sp.inner + in;
        double sq = 0.0;
        for (std::int64_t k = 0; k < sp.n; ++k) {
          double v = pa[base + k * sp.inner];
          sq += v * v;
        }
        double norm = std::sqrt(sq);
        (*norms)[static_cast<std::size_t>(o * sp.inner + in)] = norm;
        const double inv = 1.0 / (norm + eps);
        for (std::int64_t k = 0; k < sp.n; ++k)
          po[base + k * sp.inner] = static_cast<T>(pa[base + k * sp.inner] * inv);
      }
  });
  check_finite("l2_normalize", out);
  if (rg) {
    auto ai = a.impl();
    set_node(out, {ai}, [ai, sp, norms, eps](TensorImpl& self) {
      dispatch(self.scalar, [&](auto tag) {
        using T = decltype(tag);
        const T* dout = self.grad<T>();
        const T* px = ai->data<T>();
        T* da = ai->grad<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o)
          for (std::int64_t in = 0; in < sp.inner; ++in) {
            const std::int64_t base = o * sp.n * sp.inner + in;
            const double n = (*norms)[static_cast<std::size_t>(o * sp.inner + in)];
            const double denom = n + eps;
            double xd = 0.0;
            for (std::int64_t k = 0; k < sp.n; ++k)
              xd += static_cast<double>(px[base + k * sp.inner]) *
                    static_cast<double>(dout[base + k * sp.inner]);
            const double nsafe = n > 1e-30 ? n : 1e-30;
            const double coef = xd / (nsafe * denom * denom);
            for (std::int64_t k = 0; k < sp.n; ++k) {
              const std::int64_t i = base + k * sp.inner;
              da[i] += static_cast<T>(static_cast<double>(dout[i]) / denom -
                                      static_cast<double>(px[i]) * coef);
            }
          }
      });
    });
  }
  return out;
}

std::vector<int> argmax(const Tensor& a, int axis) {
  int ax = normalize_axis("argmax", axis, a.rank());
  AxisSplit sp = split_axis(a.shape(), ax);
  std::vector<int> out(static_cast<std::size_t>(sp.outer * sp.inner));
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t in = 0; in < sp.inner; ++in) {
      double best = a.at(o * sp.n * sp.inner + in);
      int bi = 0;
      for (std::int64_t k = 1; k < sp.n; ++k) {
        double v = a.at(o * sp.n * sp.inner + k * sp.inner + in);
        if (v > best) { best = v; bi = static_cast<int>(k); }
      }
      out[static_cast<std::size_t>(o * sp.inner + in)] = bi;
    }
  return out;
}

}  // namespace rtseg
