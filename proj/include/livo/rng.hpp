// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>

namespace livo {

/// Counter-based deterministic generator: every draw is a pure function of
/// (seed, stream, index), so regenerating any stream element is order- and
/// platform-independent.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1) + 0xbf58476d1ce4e5b9ull * index;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  double uniform(std::uint64_t index) const {
    return (mix(seed_, stream_, index) >> 11) * 0x1.0p-53;
  }

  /// Uniform in [lo, hi).
  double uniform(std::uint64_t index, double lo, double hi) const {
    return lo + (hi - lo) * uniform(index);
  }

  /// Standard normal via Box-Muller on two counter draws.
  double normal(std::uint64_t index) const {
    const double u1 = (mix(seed_, stream_, 2 * index) >> 11) * 0x1.0p-53;
    const double u2 = (mix(seed_, stream_, 2 * index + 1) >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1 + 0x1.0p-60));
    return r * std::cos(2.0 * M_PI * u2);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
};

}  // namespace livo
