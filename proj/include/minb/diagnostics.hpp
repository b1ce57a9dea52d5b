#pragma once

// Post-fit diagnostics: corrected Pearson residuals, model-implied count
// frequencies and the Vuong comparison of two fits.

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <vector>

#include "minb/em_solver.hpp"
#include "minb/error.hpp"
#include "minb/model.hpp"

namespace minb {

inline constexpr double kPsiFloor = 1e-12;

struct ResidualReport {
  std::vector<double> residuals;
  std::vector<double> expected;
  double psi_hat = kPsiFloor;
  int df = 0;
  std::map<Count, double> per_value_sd;  // sample SD; 0 for a single observation
};

/// E_i = sum_j omega_j k_j + omega_{J+1} mu_i; psi = sum (O - E)^2 / E / (n - df),
/// floored at 1e-12; P_i = (O_i - E_i) / sqrt(psi E_i).
inline ResidualReport pearson_residuals(const Dataset& data, const FitResult& fit) {
  const ModelParams& params = fit.params;
  detail::check_dims(data.p(), params, fit.candidates);
  ResidualReport rep;
  rep.df = model_degrees_of_freedom(params, fit.family);
  const std::size_t n = data.n();
  if (n <= static_cast<std::size_t>(rep.df)) throw DomainError("pearson_residuals: n must exceed the model degrees of freedom");

  double inflated_mean = 0.0;
  for (std::size_t j = 0; j < fit.candidates.size(); ++j)
    inflated_mean += params.omega()[static_cast<Eigen::Index>(j)] * static_cast<double>(fit.candidates[j]);
  const auto eta = detail::linear_predictors(data, params.alpha(), params.beta());
  rep.expected.resize(n);
  double chi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = inflated_mean + params.nb_weight() * mean_from_eta(eta[i]);
    if (!(e > 0.0)) throw NumericalError("pearson_residuals: expected count is not positive");
    rep.expected[i] = e;
    const double d = static_cast<double>(data.y(i)) - e;
    chi += d * d / e;
  }
  rep.psi_hat = std::max(chi / static_cast<double>(n - static_cast<std::size_t>(rep.df)), kPsiFloor);
  rep.residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    rep.residuals[i] = (static_cast<double>(data.y(i)) - rep.expected[i]) / std::sqrt(rep.psi_hat * rep.expected[i]);

  std::map<Count, std::pair<std::size_t, double>> sums;
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = sums[data.y(i)];
    ++s.first;
    s.second += rep.residuals[i];
  }
  std::map<Count, double> ss;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = sums[data.y(i)];
    const double d = rep.residuals[i] - s.second / static_cast<double>(s.first);
    ss[data.y(i)] += d * d;
  }
  for (const auto& [value, s] : sums)
    rep.per_value_sd[value] = s.first > 1 ? std::sqrt(ss[value] / static_cast<double>(s.first - 1)) : 0.0;
  return rep;
}

/// (1/n) sum_i P(Y = y | x_i) for y = 0..y_max. y_max must cover every
/// candidate carrying positive weight.
inline std::vector<double> fitted_distribution(const Dataset& data, const FitResult& fit, Count y_max) {
  const ModelParams& params = fit.params;
  detail::check_dims(data.p(), params, fit.candidates);
  if (y_max < 0) throw DomainError("fitted_distribution: y_max must be non-negative");
  for (std::size_t j = 0; j < fit.candidates.size(); ++j)
    if (params.omega()[static_cast<Eigen::Index>(j)] > 0.0 && fit.candidates[j] > y_max)
      throw DomainError("fitted_distribution: y_max is below a weighted candidate value");

  const auto len = static_cast<std::size_t>(y_max) + 1;
  std::vector<double> freq(len, 0.0);
  const auto eta = detail::linear_predictors(data, params.alpha(), params.beta());
  const double phi = params.phi();
  const double log_w = std::log(params.nb_weight());
  for (std::size_t i = 0; i < data.n(); ++i) {
    const double mu = mean_from_eta(eta[i]);
    // log pmf by the ratio recurrence f(y+1)/f(y)
    double lf = nb_log_pmf(0, {mu, phi});
    const bool poisson = phi < kPoissonPhiThreshold;
    const double r = poisson ? 0.0 : 1.0 / phi;
    const double log_ratio = poisson ? std::log(mu) : std::log(mu * phi) - std::log1p(mu * phi);
    for (std::size_t y = 0; y < len; ++y) {
      if (y > 0) {
        const double yd = static_cast<double>(y);
        lf += poisson ? log_ratio - std::log(yd) : std::log(yd - 1.0 + r) - std::log(yd) + log_ratio;
      }
      freq[y] += std::exp(log_w + lf);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(data.n());
  for (double& f : freq) f *= inv_n;
  for (std::size_t j = 0; j < fit.candidates.size(); ++j) {
    const Count k = fit.candidates[j];
    if (k <= y_max) freq[static_cast<std::size_t>(k)] += params.omega()[static_cast<Eigen::Index>(j)];
  }
  return freq;
}

struct VuongResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Non-nested Vuong test on m_i = log f_A(y_i) - log f_B(y_i):
/// z = sqrt(n) mean(m) / sd(m) with the 1/n variance, two-sided normal p-value.
/// Positive z favors fit A.
inline VuongResult vuong(const Dataset& data, const FitResult& fit_a, const FitResult& fit_b) {
  const auto la = pointwise_log_likelihood(data, fit_a.params, fit_a.candidates);
  const auto lb = pointwise_log_likelihood(data, fit_b.params, fit_b.candidates);
  const double n = static_cast<double>(data.n());
  std::vector<double> m(la.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = la[i] - lb[i];
    sum += m[i];
  }
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : m) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > 0.0) || !std::isfinite(sd)) throw NumericalError("vuong: log-likelihood differences have zero spread");
  VuongResult r;
  r.statistic = std::sqrt(n) * mean / sd;
  r.p_value = std::erfc(std::abs(r.statistic) / std::sqrt(2.0));
  return r;
}

}  // namespace minb
