#pragma once
// Deterministic random source. xoshiro256** state seeded by splitmix64;
// the exact update rules are documented here and in the README because
// reproducibility of every artifact depends on them.
//
//   seed expansion: s[i] = splitmix64(seed), applied four times in sequence
//   next_u64:       xoshiro256** (Blackman/Vigna)
//   next_double:    (next_u64() >> 11) * 2^-53, in [0, 1)
//   next_gaussian:  Box-Muller, u1 = ((x >> 11) + 1) * 2^-53 in (0, 1],
//                   u2 = next_double(); returns sqrt(-2 ln u1) cos(2 pi u2);
//                   consumes exactly two draws, the sine twin is discarded
//   next_below(n):  rejection sampling on the top multiple of n, then modulo
//   shuffle:        Fisher-Yates from the back using next_below(i + 1)

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "conceptgcd/errors.hpp"

namespace conceptgcd {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class RngState {
 public:
  explicit RngState(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  // Independent stream for a (seed, stream) pair; used to give each pipeline
  // stage and utility its own sequence.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t sm = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    return splitmix64(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) {
    if (!(lo <= hi)) throw ParameterError("next_uniform: lo > hi");
    return lo + (hi - lo) * next_double();
  }

  double next_gaussian() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw ParameterError("next_below: n must be positive");
    const std::uint64_t threshold = (UINT64_MAX / n) * n;
    std::uint64_t x = next_u64();
    while (x >= threshold) x = next_u64();
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  const std::array<std::uint64_t, 4>& state() const { return s_; }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace conceptgcd
