#pragma once

// Goodness-of-fit helpers for the generator tests: a chi-square test with
// low-expectation bins pooled into the upper tail, and marginal count
// probabilities of a scenario by quadrature over the linear predictor.

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <map>
#include <vector>

#include "minb/simbench.hpp"
#include "oracle.hpp"

namespace gof {

struct ChiSquare {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
};

/// `probs[k]` is P(y = k) for k below probs.size(); the remaining mass forms the
/// last bin. Adjacent bins are merged from the top until each expects >= 5.
inline ChiSquare chi_square(const std::vector<minb::Count>& y, const std::vector<double>& probs) {
  const double n = static_cast<double>(y.size());
  std::vector<double> observed(probs.size() + 1, 0.0), expected(probs.size() + 1, 0.0);
  for (minb::Count v : y) observed[std::min<std::size_t>(static_cast<std::size_t>(v), probs.size())] += 1.0;
  double mass = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    expected[k] = n * probs[k];
    mass += probs[k];
  }
  expected.back() = n * std::max(0.0, 1.0 - mass);
  std::vector<double> o, e;
  double acc_o = 0.0, acc_e = 0.0;
  for (std::size_t k = 0; k < expected.size(); ++k) {
    acc_o += observed[k];
    acc_e += expected[k];
    if (acc_e >= 5.0) {
      o.push_back(acc_o);
      e.push_back(acc_e);
      acc_o = acc_e = 0.0;
    }
  }
  if (acc_e > 0.0 || acc_o > 0.0) {
    o.back() += acc_o;
    e.back() += acc_e;
  }
  ChiSquare c;
  for (std::size_t k = 0; k < o.size(); ++k) c.statistic += (o[k] - e[k]) * (o[k] - e[k]) / e[k];
  c.dof = static_cast<int>(o.size()) - 1;
  c.p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(c.dof), c.statistic));
  return c;
}

/// P(y = k), k < kmax, for a scenario with N(0, sd^2) covariates: the NB
/// component is integrated over eta ~ N(alpha, sd^2 |beta|^2) by the trapezoid
/// rule and mixed with the point masses.
inline std::vector<double> scenario_marginal(const minb::Scenario& s, std::size_t kmax) {
  double b2 = 0.0;
  for (double b : s.beta) b2 += b * b;
  const double sd = s.covariate_sd * std::sqrt(b2);
  const double phi = s.true_phi();
  std::vector<double> probs(kmax, 0.0);
  double inflated = 0.0;
  for (double w : s.inflated_props) inflated += w;
  const int nodes = 4001;
  const double lo = s.alpha - 10.0 * sd, hi = s.alpha + 10.0 * sd;
  const double h = sd > 0.0 ? (hi - lo) / (nodes - 1) : 0.0;
  for (int q = 0; q < (sd > 0.0 ? nodes : 1); ++q) {
    const double eta = sd > 0.0 ? lo + h * q : s.alpha;
    double weight = 1.0;
    if (sd > 0.0) {
      const double z = (eta - s.alpha) / sd;
      weight = h * std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * M_PI));
      if (q == 0 || q == nodes - 1) weight *= 0.5;
    }
    const double mu = std::exp(eta);
    for (std::size_t k = 0; k < kmax; ++k) {
      const auto kc = static_cast<minb::Count>(k);
      const double lp = phi > 0.0 ? oracle::nb_log_pmf_plain(kc, mu, phi) : oracle::poisson_log_pmf_plain(kc, mu);
      probs[k] += weight * std::exp(lp);
    }
  }
  for (double& p : probs) p *= 1.0 - inflated;
  for (std::size_t j = 0; j < s.inflated_values.size(); ++j) {
    const auto v = static_cast<std::size_t>(s.inflated_values[j]);
    if (v < kmax) probs[v] += s.inflated_props[j];
  }
  return probs;
}

}  // namespace gof
