#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ehrjoint {

// splitmix64; used to mix (seed, domain, index) into substream keys.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t substream_key(std::uint64_t seed, std::uint64_t domain, std::uint64_t index) {
  return splitmix64(splitmix64(splitmix64(seed) ^ domain) ^ index);
}

// RNG domains; parallel and serial runs agree because every consumer owns a
// stream keyed by (seed, domain, index) rather than sharing a global engine.
namespace rngdom {
constexpr std::uint64_t kSubject = 0x5b6a1e03u;
constexpr std::uint64_t kReplication = 0x9c37f2b1u;
constexpr std::uint64_t kBootstrap = 0x3d48c5a7u;
constexpr std::uint64_t kOptimizer = 0x71e9d04fu;
constexpr std::uint64_t kThreshold = 0xa1b2c3d4u;  // fixed internal stream, not user-seeded
}  // namespace rngdom

// All samplers are written out explicitly (not std::*_distribution) so results
// are identical across standard libraries.
class Stream {
 public:
  explicit Stream(std::uint64_t key) : eng_(key) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform on [0,1) with 53-bit resolution
  double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // uniform on (0,1], safe under log()
  double uniform_pos() { return 1.0 - uniform01(); }

  bool bernoulli(double p) { return uniform01() < p; }

  int uniform_int(int n) { return static_cast<int>(uniform01() * n); }

  double exponential(double rate) { return -std::log(uniform_pos()) / rate; }

  // Box-Muller; consumes two uniforms per call, no cached spare.
  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Marsaglia-Tsang; shape<1 handled by the boost u^(1/a) identity.
  double gamma(double shape, double scale) {
    if (shape < 1.0) {
      const double u = uniform_pos();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform_pos();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v * scale;
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace ehrjoint
