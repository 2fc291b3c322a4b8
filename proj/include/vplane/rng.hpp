#pragma once

#include <cmath>
#include <cstdint>

namespace vplane {

// Deterministic generator used everywhere a seed appears in a contract.
// splitmix64 core with hand-rolled uniform/normal transforms so that the
// produced streams do not depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller; one value per call, the mate is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  template <typename Container>
  void shuffle(Container& c) {
    if (c.empty()) return;
    for (std::size_t i = c.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i + 1));
      std::swap(c[i], c[j]);
    }
  }

 private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Stable per-sample sub-seed: mixes a base seed with stream tags so that the
// sequence for one sample never depends on batch composition or worker count.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag_a, std::uint64_t tag_b = 0) {
  Rng r(base ^ (tag_a * 0xA24BAED4963EE407ULL) ^ (tag_b * 0x9FB21C651E98DF25ULL));
  return r.next_u64();
}

}  // namespace vplane
