#pragma once

// Seeded randomness with a fully specified bit stream.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. Uniform and Gaussian variates are derived here rather than through
// the <random> distributions, whose algorithms are implementation-defined:
//   uniform: top 53 bits of one engine draw, scaled to [0, 1)
//   normal:  Marsaglia polar method, caching the second variate
//   below(n): rejection sampling on the engine output (unbiased)

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace bifurnode {

inline constexpr std::string_view kRngAlgorithm = "mt19937_64+polar-normal";

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double scale = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * scale;
    has_spare_ = true;
    return u * scale;
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return r % n;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// splitmix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over the bytes of `s`.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed for series `index` of the dataset called `name`.
inline std::uint64_t derive_seed(std::string_view name, std::uint64_t index) {
  return mix64(fnv1a64(name) ^ mix64(index));
}

}  // namespace bifurnode
