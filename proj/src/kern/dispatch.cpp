#include "rtseg/kern/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "kern/table.hpp"

namespace rtseg::kern {

namespace {

detail::Table<float> g_f32;
detail::Table<double> g_f64;
Backend g_backend = Backend::Scalar;

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

void apply(Backend b) {
  switch (b) {
    case Backend::Scalar:
      detail::fill_scalar(g_f32);
      detail::fill_scalar(g_f64);
      break;
    case Backend::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
      detail::fill_avx2(g_f32);
      detail::fill_avx2(g_f64);
      break;
#else
      throw std::runtime_error("kern: AVX2 backend not built on this architecture");
#endif
  }
  g_backend = b;
}

// One-time init: CPUID probe, RTSEG_BACKEND env override.
struct Init {
  Init() {
    Backend b = cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
    if (const char* env = std::getenv("RTSEG_BACKEND")) {
      if (std::strcmp(env, "scalar") == 0) b = Backend::Scalar;
      else if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) b = Backend::Avx2;
    }
    apply(b);
  }
};
Init g_init;

}  // namespace

Backend active_backend() { return g_backend; }

const char* backend_name() {
  return g_backend == Backend::Avx2 ? "avx2" : "scalar";
}

bool avx2_supported() { return cpu_has_avx2(); }

void set_backend(Backend b) {
  if (b == Backend::Avx2 && !cpu_has_avx2())
    throw std::runtime_error("kern: AVX2 not supported on this CPU");
  apply(b);
}

namespace {
template <class T> detail::Table<T>& table();
template <> detail::Table<float>& table() { return g_f32; }
template <> detail::Table<double>& table() { return g_f64; }
}  // namespace

template <class T> void add(const T* a, const T* b, T* o, std::size_t n) { table<T>().add(a, b, o, n); }
template <class T> void sub(const T* a, const T* b, T* o, std::size_t n) { table<T>().sub(a, b, o, n); }
template <class T> void mul(const T* a, const T* b, T* o, std::size_t n) { table<T>().mul(a, b, o, n); }
template <class T> void div(const T* a, const T* b, T* o, std::size_t n) { table<T>().div(a, b, o, n); }
template <class T> void scale(const T* a, T s, T* o, std::size_t n) { table<T>().scale(a, s, o, n); }
template <class T> void add_scalar(const T* a, T s, T* o, std::size_t n) { table<T>().add_scalar(a, s, o, n); }
template <class T> void axpy(T a, const T* x, T* y, std::size_t n) { table<T>().axpy(a, x, y, n); }
template <class T> void mul_acc(const T* a, const T* b, T* o, std::size_t n) { table<T>().mul_acc(a, b, o, n); }
template <class T> T dot(const T* x, const T* y, std::size_t n) { return table<T>().dot(x, y, n); }
template <class T> T sum(const T* x, std::size_t n) { return table<T>().sum(x, n); }
template <class T> T sum_abs(const T* x, std::size_t n) { return table<T>().sum_abs(x, n); }
template <class T> T max_val(const T* x, std::size_t n) { return table<T>().max_val(x, n); }
template <class T> void relu(const T* x, T* o, std::size_t n) { table<T>().relu(x, o, n); }
template <class T> void leaky_relu(const T* x, T slope, T* o, std::size_t n) { table<T>().leaky_relu(x, slope, o, n); }

#define RTSEG_INSTANTIATE(T)                                              \
  template void add<T>(const T*, const T*, T*, std::size_t);              \
  template void sub<T>(const T*, const T*, T*, std::size_t);              \
  template void mul<T>(const T*, const T*, T*, std::size_t);              \
  template void div<T>(const T*, const T*, T*, std::size_t);              \
  template void scale<T>(const T*, T, T*, std::size_t);                   \
  template void add_scalar<T>(const T*, T, T*, std::size_t);              \
  template void axpy<T>(T, const T*, T*, std::size_t);                    \
  template void mul_acc<T>(const T*, const T*, T*, std::size_t);          \
  template T dot<T>(const T*, const T*, std::size_t);                     \
  template T sum<T>(const T*, std::size_t);                               \
  template T sum_abs<T>(const T*, std::size_t);                           \
  template T max_val<T>(const T*, std::size_t);                           \
  template void relu<T>(const T*, T*, std::size_t);                       \
  template void leaky_relu<T>(const T*, T, T*, std::size_t);

RTSEG_INSTANTIATE(float)
RTSEG_INSTANTIATE(double)

#undef RTSEG_INSTANTIATE

}  // namespace rtseg::kern
