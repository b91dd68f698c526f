#pragma once

#include <cstddef>

// Internal dispatch table shared by the scalar and AVX2 translation units.

namespace rtseg::kern::detail {

template <class T>
struct Table {
  void (*add)(const T*, const T*, T*, std::size_t);
  void (*sub)(const T*, const T*, T*, std::size_t);
  void (*mul)(const T*, const T*, T*, std::size_t);
  void (*div)(const T*, const T*, T*, std::size_t);
  void (*scale)(const T*, T, T*, std::size_t);
  void (*add_scalar)(const T*, T, T*, std::size_t);
  void (*axpy)(T, const T*, T*, std::size_t);
  void (*mul_acc)(const T*, const T*, T*, std::size_t);
  T (*dot)(const T*, const T*, std::size_t);
  T (*sum)(const T*, std::size_t);
  T (*sum_abs)(const T*, std::size_t);
  T (*max_val)(const T*, std::size_t);
  void (*relu)(const T*, T*, std::size_t);
  void (*leaky_relu)(const T*, T, T*, std::size_t);
};

void fill_scalar(Table<float>& t);
void fill_scalar(Table<double>& t);

// Defined in kernels_avx2.cpp; only linked on x86-64 builds.
#if defined(__x86_64__) || defined(_M_X64)
void fill_avx2(Table<float>& t);
void fill_avx2(Table<double>& t);
#endif

}  // namespace rtseg::kern::detail
