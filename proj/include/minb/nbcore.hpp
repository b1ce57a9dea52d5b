#pragma once

// Count-distribution primitives: log-gamma family, NB and Poisson log-pmfs,
// and the derivatives the EM solver needs. Everything here is a pure function.

#include <algorithm>
#include <cmath>
#include <vector>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>

#include "minb/error.hpp"

namespace minb {

using Count = std::int64_t;

/// Dispersion values below this are evaluated as the Poisson limit.
inline constexpr double kPoissonPhiThreshold = 1e-8;

/// Linear predictors are clamped to this range before exponentiation.
inline constexpr double kEtaClamp = 30.0;

// Rising-factorial sums are done term by term up to this many terms; beyond
// it the gamma-function differences are used.
inline constexpr Count kDirectSumLimit = 256;

/// Log of the gamma function for x > 0 (Lanczos, g = 7, n = 9).
inline double log_gamma(double x) {
  static constexpr double kCoef[9] = {
      0.99999999999980993,     676.5203681218851,     -1259.1392167224028,
      771.32342877765313,      -176.61502916214059,   12.507343278686905,
      -0.13857109526572012,    9.9843695780195716e-6, 1.5056327351493116e-7};
  if (!(x > 0.0)) throw DomainError("log_gamma: argument must be positive");
  if (x < 0.5) {
    // reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
    return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - log_gamma(1.0 - x);
  }
  if (x == 1.0 || x == 2.0) return 0.0;
  const double z = x - 1.0;
  double a = kCoef[0];
  for (int i = 1; i < 9; ++i) a += kCoef[i] / (z + i);
  const double t = z + 7.5;
  return 0.5 * std::log(2.0 * std::numbers::pi) + (z + 0.5) * std::log(t) - t + std::log(a);
}

inline double digamma(double x) {
  if (!(x > 0.0)) throw DomainError("digamma: argument must be positive");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  return acc + std::log(x) - 0.5 * inv -
         inv2 * (1.0 / 12 -
                 inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132 - inv2 * (691.0 / 32760))))));
}

inline double trigamma(double x) {
  if (!(x > 0.0)) throw DomainError("trigamma: argument must be positive");
  double acc = 0.0;
  while (x < 10.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  return acc + inv + 0.5 * inv2 +
         inv * inv2 *
             (1.0 / 6 - inv2 * (1.0 / 30 - inv2 * (1.0 / 42 - inv2 * (1.0 / 30 - inv2 * (5.0 / 66 - inv2 * (691.0 / 2730))))));
}

/// log Gamma(r + y) - log Gamma(r).
inline double log_rising(double r, Count y) {
  if (y <= kDirectSumLimit) {
    double s = 0.0;
    for (Count k = 0; k < y; ++k) s += std::log(r + static_cast<double>(k));
    return s;
  }
  return log_gamma(r + static_cast<double>(y)) - log_gamma(r);
}

/// sum_{k<y} 1/(r+k) = digamma(r+y) - digamma(r).
inline double rising_digamma(double r, Count y) {
  if (y <= kDirectSumLimit) {
    double s = 0.0;
    for (Count k = 0; k < y; ++k) s += 1.0 / (r + static_cast<double>(k));
    return s;
  }
  return digamma(r + static_cast<double>(y)) - digamma(r);
}

/// sum_{k<y} 1/(r+k)^2 = trigamma(r) - trigamma(r+y).
inline double rising_trigamma(double r, Count y) {
  if (y <= kDirectSumLimit) {
    double s = 0.0;
    for (Count k = 0; k < y; ++k) {
      const double d = r + static_cast<double>(k);
      s += 1.0 / (d * d);
    }
    return s;
  }
  return trigamma(r) - trigamma(r + static_cast<double>(y));
}

inline double log_factorial(Count y) { return log_rising(1.0, y); }

/// Distinct counts of a sample and the position of each observation among them.
struct CountIndex {
  std::vector<Count> values;       // ascending, unique
  std::vector<std::size_t> index;  // values[index[i]] == y[i]

  CountIndex() = default;
  explicit CountIndex(const std::vector<Count>& y) : values(y) {
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    index.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
      index[i] = static_cast<std::size_t>(std::lower_bound(values.begin(), values.end(), y[i]) - values.begin());
  }
};

/// log_rising, rising_digamma and rising_trigamma at one r for every value of
/// a CountIndex, sharing the running sums. Entries are bit-identical to the
/// scalar functions.
struct RisingTable {
  std::vector<double> log_rising;
  std::vector<double> digamma_sum;
  std::vector<double> trigamma_sum;

  void evaluate(const std::vector<Count>& values, double r, bool derivatives) {
    const std::size_t m = values.size();
    log_rising.assign(m, 0.0);
    if (derivatives) {
      digamma_sum.assign(m, 0.0);
      trigamma_sum.assign(m, 0.0);
    }
    double s0 = 0.0, s1 = 0.0, s2 = 0.0;
    Count k = 0;
    for (std::size_t v = 0; v < m; ++v) {
      const Count y = values[v];
      if (y > kDirectSumLimit) {
        log_rising[v] = ::minb::log_rising(r, y);
        if (derivatives) {
          digamma_sum[v] = rising_digamma(r, y);
          trigamma_sum[v] = rising_trigamma(r, y);
        }
        continue;
      }
      for (; k < y; ++k) {
        const double d = r + static_cast<double>(k);
        s0 += std::log(d);
        if (derivatives) {
          s1 += 1.0 / d;
          s2 += 1.0 / (d * d);
        }
      }
      log_rising[v] = s0;
      if (derivatives) {
        digamma_sum[v] = s1;
        trigamma_sum[v] = s2;
      }
    }
  }
};

/// Mean and dispersion of a negative binomial; phi == 0 is the Poisson limit.
struct NbParams {
  double mu = 1.0;
  double phi = 0.0;

  void validate() const {
    if (!(mu > 0.0) || !std::isfinite(mu)) throw DomainError("NbParams: mu must be positive and finite");
    if (!(phi >= 0.0) || !std::isfinite(phi)) throw DomainError("NbParams: phi must be non-negative and finite");
  }
  bool is_poisson() const { return phi < kPoissonPhiThreshold; }
};

inline double mean_from_eta(double eta) { return std::exp(std::clamp(eta, -kEtaClamp, kEtaClamp)); }

inline double poisson_log_pmf(Count y, double mu) {
  if (y < 0) throw DomainError("poisson_log_pmf: y must be non-negative");
  if (!(mu > 0.0)) throw DomainError("poisson_log_pmf: mu must be positive");
  return static_cast<double>(y) * std::log(mu) - mu - log_factorial(y);
}

inline double nb_log_pmf(Count y, const NbParams& p) {
  if (y < 0) throw DomainError("nb_log_pmf: y must be non-negative");
  p.validate();
  if (p.is_poisson()) return poisson_log_pmf(y, p.mu);
  const double r = 1.0 / p.phi;
  const double mp = p.mu * p.phi;
  const double yd = static_cast<double>(y);
  return log_rising(r, y) - log_factorial(y) + yd * std::log(mp) - (yd + r) * std::log1p(mp);
}

/// Overflow-safe log(sum(exp(terms))).
inline double log_sum_exp(std::span<const double> terms) {
  if (terms.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  const double m = *std::max_element(terms.begin(), terms.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

inline double log_sum_exp(double a, double b) {
  if (a < b) std::swap(a, b);
  if (std::isinf(a)) return a;
  return a + std::log1p(std::exp(b - a));
}

// Derivatives of log f_NB with respect to the linear predictor eta = log(mu).
struct EtaDerivatives {
  double score;      // (y - mu) / (1 + mu phi)
  double curvature;  // -mu (1 + y phi) / (1 + mu phi)^2
};

inline EtaDerivatives nb_eta_derivatives(Count y, double mu, double phi) {
  const double yd = static_cast<double>(y);
  if (phi < kPoissonPhiThreshold) return {yd - mu, -mu};
  const double d = 1.0 + mu * phi;
  return {(yd - mu) / d, -mu * (1.0 + yd * phi) / (d * d)};
}

/// The mu-dependent part of log f_NB, y*eta - (y + 1/phi) log(1 + mu phi).
inline double nb_eta_kernel(Count y, double eta, double mu, double phi) {
  const double yd = static_cast<double>(y);
  if (phi < kPoissonPhiThreshold) return yd * eta - mu;
  return yd * eta - (yd + 1.0 / phi) * std::log1p(mu * phi);
}

// First and second derivatives of log f_NB with respect to phi.
struct PhiDerivatives {
  double score;
  double curvature;
};

inline PhiDerivatives nb_phi_derivatives(Count y, double mu, double phi) {
  const double r = 1.0 / phi;
  const double yd = static_cast<double>(y);
  const double mp = mu * phi;
  const double a = std::log1p(mp) - rising_digamma(r, y);
  const double b = (yd - mu) / (phi * (1.0 + mp));
  const double score = r * r * a + b;
  const double da = mu / (1.0 + mp) - r * r * rising_trigamma(r, y);
  const double db = -(yd - mu) * (1.0 + 2.0 * mp) / ((phi * (1.0 + mp)) * (phi * (1.0 + mp)));
  const double curvature = -2.0 * r * r * r * a + r * r * da + db;
  return {score, curvature};
}

}  // namespace minb
