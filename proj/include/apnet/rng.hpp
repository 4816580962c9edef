#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace apnet {

/// Deterministic random stream. Distribution code is written out here instead
/// of using <random> distributions, whose output is implementation-defined;
/// mt19937_64 itself is bit-exact everywhere. Streams can be forked by tag
/// without consuming state, which is what makes per-image / per-epoch replay
/// work: every consumer derives its stream from (seed, tags...) functionally.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix(seed)) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Unbiased via rejection.
  std::int64_t uniform_int(std::int64_t n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return static_cast<std::int64_t>(r % bound);
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal, Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  /// Fisher-Yates; fixed algorithm so shuffles are reproducible across
  /// standard libraries.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent stream derived from this stream's seed and a tag. Does not
  /// advance or depend on this stream's consumption state.
  Rng fork(std::uint64_t tag) const { return Rng(splitmix(seed_ ^ splitmix(tag))); }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(splitmix(a) ^ b); }
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix(mix(a, b), c);
  }

private:
  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_ = 0;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace apnet
