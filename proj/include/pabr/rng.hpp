#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace pabr {

// Counter-based deterministic generator (splitmix64 finalizer). Every random
// choice in the project goes through this so that a seed reproduces the same
// bytes on any platform; the standard <random> distributions are not portable
// across library implementations.
namespace rng {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stateless draw: hash of (seed, stream, counter). Streams decorrelate
// independent random maps derived from one user-facing seed.
inline std::uint64_t at(std::uint64_t seed, std::uint64_t stream,
                        std::uint64_t counter) {
  std::uint64_t z = mix64(seed ^ 0x8f1bbcdcb7a56463ULL);
  z = mix64(z ^ mix64(stream));
  return mix64(z ^ counter * 0x9e3779b97f4a7c15ULL);
}

class Engine {
 public:
  explicit Engine(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64() { return at(seed_, stream_, counter_++); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in {0, ..., n-1}. Modulo bias is below 2^-60 for the n used here.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  // Uniform in {lo, ..., hi} inclusive.
  std::int64_t next_between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(
                    next_below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Box-Muller; one draw discarded to stay counter-aligned.
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

  std::int8_t next_sign() { return (next_u64() >> 63) ? 1 : -1; }

  // Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace rng
}  // namespace pabr
