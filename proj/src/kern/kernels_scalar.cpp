#include "kern/table.hpp"

#include <cmath>

// Scalar reference kernels. These define the semantics; the AVX2 variants
// must match them (bit-exact for elementwise ops, tolerance for reductions).

namespace rtseg::kern::detail {

namespace {

template <class T>
void s_add(const T* a, const T* b, T* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = a[i] + b[i];
}

template <class T>
void s_sub(const T* a, const T* b, T* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = a[i] - b[i];
}

template <class T>
void s_mul(const T* a, const T* b, T* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = a[i] * b[i];
}

template <class T>
void s_div(const T* a, const T* b, T* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = a[i] / b[i];
}

template <class T>
void s_scale(const T* a, T s, T* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = a[i] * s;
}

template <class T>
void s_add_scalar(const T* a, T s, T* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = a[i] + s;
}

template <class T>
void s_axpy(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
void s_mul_acc(const T* a, const T* b, T* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] += a[i] * b[i];
}

template <class T>
T s_dot(const T* x, const T* y, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <class T>
T s_sum(const T* x, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <class T>
T s_sum_abs(const T* x, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(x[i]);
  return acc;
}

template <class T>
T s_max_val(const T* x, std::size_t n) {
  T m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

template <class T>
void s_relu(const T* x, T* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void s_leaky_relu(const T* x, T slope, T* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = x[i] > T(0) ? x[i] : slope * x[i];
}

template <class T>
void fill(Table<T>& t) {
  t.add = s_add<T>;
  t.sub = s_sub<T>;
  t.mul = s_mul<T>;
  t.div = s_div<T>;
  t.scale = s_scale<T>;
  t.add_scalar = s_add_scalar<T>;
  t.axpy = s_axpy<T>;
  t.mul_acc = s_mul_acc<T>;
  t.dot = s_dot<T>;
  t.sum = s_sum<T>;
  t.sum_abs = s_sum_abs<T>;
  t.max_val = s_max_val<T>;
  t.relu = s_relu<T>;
  t.leaky_relu = s_leaky_relu<T>;
}

}  // namespace

void fill_scalar(Table<float>& t) { fill(t); }
void fill_scalar(Table<double>& t) { fill(t); }

}  // namespace rtseg::kern::detail
