#pragma once

#include <cstddef>
#include <string>

// Arithmetic inner-loop kernels. Every kernel exists as a scalar reference
// implementation and, on x86-64 with AVX2+FMA, as a vectorized variant.
// The backend is chosen once at startup (CPUID probe, overridable through
// the RTSEG_BACKEND environment variable or set_backend) and stays fixed,
// so a run is deterministic for a given machine + backend.
//
// Exactness contract, checked by the equivalence tests:
//   - add/sub/mul/div/scale/add_scalar/relu/leaky_relu/mul_acc/axpy are
//     elementwise and bit-identical across backends.
//   - dot/sum/sum_abs/max_val reassociate the reduction; backends agree to
//     a small relative tolerance only.

namespace rtseg::kern {

enum class Backend { Scalar, Avx2 };

Backend active_backend();
const char* backend_name();

// Throws std::runtime_error if the requested backend is not available.
void set_backend(Backend b);

bool avx2_supported();

template <class T> void add(const T* a, const T* b, T* o, std::size_t n);
template <class T> void sub(const T* a, const T* b, T* o, std::size_t n);
template <class T> void mul(const T* a, const T* b, T* o, std::size_t n);
template <class T> void div(const T* a, const T* b, T* o, std::size_t n);

// o = a * s
template <class T> void scale(const T* a, T s, T* o, std::size_t n);
// o = a + s
template <class T> void add_scalar(const T* a, T s, T* o, std::size_t n);
// y += a * x
template <class T> void axpy(T a, const T* x, T* y, std::size_t n);
// o += a * b
template <class T> void mul_acc(const T* a, const T* b, T* o, std::size_t n);

template <class T> T dot(const T* x, const T* y, std::size_t n);
template <class T> T sum(const T* x, std::size_t n);
template <class T> T sum_abs(const T* x, std::size_t n);
template <class T> T max_val(const T* x, std::size_t n);

template <class T> void relu(const T* x, T* o, std::size_t n);
template <class T> void leaky_relu(const T* x, T slope, T* o, std::size_t n);

}  // namespace rtseg::kern
