#pragma once

// Reproducible random variates. The generator is xoshiro256** seeded through
// SplitMix64; every sampler below is implemented here so streams are
// identical across standard libraries.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "minb/nbcore.hpp"

namespace minb {

inline constexpr const char* kRngAlgorithm = "xoshiro256**/splitmix64";

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::uint64_t sm = seed;
    const std::uint64_t mix = splitmix64(sm) ^ (stream * 0xd1342543de82ef95ULL + 0x632be59bd9b4e019ULL);
    std::uint64_t st = mix;
    for (auto& w : s_) w = splitmix64(st);
  }

  std::uint64_t next() {
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

  /// Uniform on (0, 1).
  double uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

  double normal(double mean = 0.0, double sd = 1.0) {
    // Marsaglia polar method, no cached spare so the stream position is simple.
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    return mean + sd * u * std::sqrt(-2.0 * std::log(s) / s);
  }

  /// Gamma(shape, scale) via Marsaglia-Tsang.
  double gamma(double shape, double scale) {
    if (shape < 1.0) {
      const double u = uniform();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
  }

  Count poisson(double mu) {
    if (!(mu > 0.0)) return 0;
    if (mu < 10.0) {
      // inversion by sequential search
      double p = std::exp(-mu);
      double cdf = p;
      const double u = uniform();
      Count k = 0;
      while (u > cdf && k < 1000) {
        ++k;
        p *= mu / static_cast<double>(k);
        cdf += p;
      }
      return k;
    }
    // PTRS transformed rejection (Hormann 1993)
    const double log_mu = std::log(mu);
    const double b = 0.931 + 2.53 * std::sqrt(mu);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    while (true) {
      const double u = uniform() - 0.5;
      const double v = uniform();
      const double us = 0.5 - std::abs(u);
      const double kf = std::floor((2.0 * a / us + b) * u + mu + 0.43);
      if (us >= 0.07 && v <= vr) return static_cast<Count>(kf);
      if (kf < 0.0 || (us < 0.013 && v > us)) continue;
      const double lhs = std::log(v * inv_alpha / (a / (us * us) + b));
      const double rhs = -mu + kf * log_mu - log_gamma(kf + 1.0);
      if (lhs <= rhs) return static_cast<Count>(kf);
    }
  }

  /// NB(mu, phi) as a Gamma-Poisson mixture; phi below the Poisson threshold draws Poisson(mu).
  Count negative_binomial(double mu, double phi) {
    if (phi < kPoissonPhiThreshold) return poisson(mu);
    const double rate = gamma(1.0 / phi, mu * phi);
    return poisson(rate);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace minb
