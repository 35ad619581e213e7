#pragma once
#include <cstdint>
#include <cmath>
#include <string_view>

namespace sivsim::rng {

/// Splittable counter-style PRNG (splitmix64 core). Every stochastic stage
/// derives its own stream from one master seed and a named path, so results
/// do not depend on execution order or thread count.
class Stream {
public:
  explicit Stream(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1], safe as a log() argument.
  double uniform_pos() { return 1.0 - uniform(); }

  double exponential(double rate) { return -std::log(uniform_pos()) / rate; }

  /// Standard normal via Box-Muller (pairwise cached).
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 6.283185307179586 * u2;
    cached_ = r * std::sin(phi);
    have_cached_ = true;
    return r * std::cos(phi);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Exact Poisson sampling via cumulative exponential waiting times.
  /// Stable for any lambda (cost is O(lambda)).
  std::uint64_t poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    std::uint64_t k = 0;
    double acc = 0.0;
    for (;;) {
      acc += -std::log(uniform_pos());
      if (acc >= lambda) return k;
      ++k;
    }
  }

  std::uint64_t state() const { return state_; }

private:
  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

/// 64-bit FNV-1a of a path string; used to key derived streams.
std::uint64_t hash_path(std::string_view path);

/// Derive the seed of a named sub-stream, e.g. "transport/ion/42".
std::uint64_t derive_seed(std::uint64_t master, std::string_view path);

/// Convenience: stream for a named sub-path.
inline Stream derive(std::uint64_t master, std::string_view path) {
  return Stream(derive_seed(master, path));
}

} // namespace sivsim::rng
