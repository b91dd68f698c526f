#pragma once

#include <cmath>
#include <cstdint>
#include <string>

namespace rtseg {

// splitmix64 step (Steele et al. constants).
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic, fork-able RNG. Distributions are hand-rolled so sequences
// are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // decorrelate trivially related seeds
    splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    return n ? next_u64() % n : 0;  // modulo bias negligible for desk-scale n
  }

  // Box-Muller, one value per call (the pair's second half is discarded to
  // keep fork semantics simple).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Independent child stream derived from (this stream's seed, tag, index).
  Rng fork(std::uint64_t index, std::uint64_t tag = 0) const {
    std::uint64_t s = state_;
    s ^= 0x8e9c1ce6302f1f25ULL * (tag + 1);
    splitmix64(s);
    s ^= 0xd1342543de82ef95ULL * (index + 1);
    return Rng(s);
  }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

// Stable 64-bit content hash (FNV-1a) used for taxonomy fingerprints.
inline std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rtseg
