// Deterministic random source: SplitMix64.
//
// Every random decision in the project (weight init, fold shuffles,
// augmentation draws, synthetic data) flows through this generator, so a
// (seed, draw order) pair pins the whole experiment. Sub-streams derived via
// Rng::stream(index) are independent of consumption order of the parent.
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "leukonet/common.hpp"

namespace leukonet {

class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed), seed_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Lemire multiply-shift; deterministic, unbiased
  // enough for shuffles at our scale.
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one value per call (the sine twin is discarded to keep the
  // draw count independent of call parity).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derived generator for per-item streams; seeded from the parent's original
  // seed, so results do not depend on how much the parent has been consumed.
  Rng stream(std::uint64_t index) const {
    Rng r(seed_ ^ (0x632be59bd9b4e019ull + index * 0x9e3779b97f4a7c15ull));
    r.next_u64();
    return r;
  }

  std::uint64_t seed() const { return seed_; }

private:
  std::uint64_t state_;
  std::uint64_t seed_;
};

}  // namespace leukonet
