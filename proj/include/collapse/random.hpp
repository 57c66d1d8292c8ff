#pragma once

// Seed derivation and a portable random stream.
//
// Seeds: trial i of a run with master seed M uses derive_seed(M, i), where
// derive_seed feeds M + (i + 1) * 0x9E3779B97F4A7C15 through the SplitMix64
// finalizer. Streams are std::mt19937_64 (fully specified by the standard);
// uniforms take the top 53 bits and normals use the Marsaglia polar method,
// so a seed produces the same numbers under any conforming toolchain.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>

namespace collapse {

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64_mix(master + (index + 1) * 0x9E3779B97F4A7C15ULL);
}

/// Mixes the bit pattern of a double into a seed (used for setting-dependent streams).
inline std::uint64_t derive_seed_from_value(std::uint64_t master, double value) {
  std::uint64_t bits = 0;
  if (value == 0.0) value = 0.0;  // fold -0.0 onto +0.0
  std::memcpy(&bits, &value, sizeof bits);
  return splitmix64_mix(master ^ splitmix64_mix(bits + 0x632BE59BD9B4E019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

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
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Exponential waiting time with the given rate.
  double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace collapse
