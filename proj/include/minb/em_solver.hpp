#pragma once

// Penalized EM for the multiple-inflated NB model.
//
// One iteration: E-step responsibilities, closed-form omega update with
// truncation at zero (M1), cyclic IRLS / soft-threshold updates of alpha and
// beta (M2), Newton-Raphson for phi (M3). Every accepted iterate has a
// penalized objective no lower than the previous one.

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "minb/error.hpp"
#include "minb/glm.hpp"
#include "minb/model.hpp"
#include "minb/nbcore.hpp"

namespace minb {

inline constexpr double kOmegaInitFloor = 1e-4;
inline constexpr double kOmegaInitMass = 0.95;
inline constexpr double kSelectionThreshold = 1e-8;
// phi above this counts as a free dispersion parameter in the model size.
inline constexpr double kPhiActiveThreshold = 1e-6;
inline constexpr double kAscentSlack = 1e-9;

struct EmOptions {
  int max_iters = 1000;
  double rel_tol = 1e-3;
  double inner_irls_tol = 1e-3;
  int inner_irls_max_iters = 50;
  int phi_newton_max_iters = 100;
  Family family = Family::NegativeBinomial;  // Poisson pins phi at zero

  void validate() const {
    if (max_iters < 1 || inner_irls_max_iters < 1 || phi_newton_max_iters < 1)
      throw DomainError("EmOptions: iteration limits must be positive");
    if (!(rel_tol > 0.0) || !(inner_irls_tol > 0.0)) throw DomainError("EmOptions: tolerances must be positive");
  }
};

/// Posterior memberships. Observation i can belong to at most one point mass
/// (the candidate equal to y_i) or to the NB component, so each row is stored
/// as (candidate index, weight on NB component).
class Responsibilities {
 public:
  Responsibilities(std::size_t num_candidates, std::vector<long> candidate, std::vector<double> nb_weight)
      : num_candidates_(num_candidates), candidate_(std::move(candidate)), nb_weight_(std::move(nb_weight)) {}

  std::size_t n() const { return nb_weight_.size(); }
  std::size_t num_candidates() const { return num_candidates_; }

  /// gamma_ij for j in [0, J]; j == J is the NB component.
  double operator()(std::size_t i, std::size_t j) const {
    if (j == num_candidates_) return nb_weight_[i];
    return candidate_[i] == static_cast<long>(j) ? 1.0 - nb_weight_[i] : 0.0;
  }

  const std::vector<double>& nb_weights() const { return nb_weight_; }
  const std::vector<long>& candidate_of() const { return candidate_; }

  Eigen::VectorXd column_sums() const {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_candidates_) + 1);
    for (std::size_t i = 0; i < n(); ++i) {
      g[static_cast<Eigen::Index>(num_candidates_)] += nb_weight_[i];
      if (candidate_[i] >= 0) g[candidate_[i]] += 1.0 - nb_weight_[i];
    }
    return g;
  }

  Eigen::MatrixXd dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n()), static_cast<Eigen::Index>(num_candidates_) + 1);
    for (std::size_t i = 0; i < n(); ++i)
      for (std::size_t j = 0; j <= num_candidates_; ++j)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (*this)(i, j);
    return m;
  }

 private:
  std::size_t num_candidates_;
  std::vector<long> candidate_;
  std::vector<double> nb_weight_;
};

struct EmTrace {
  // Entry 0 is the objective at the starting point, entry m after iteration m.
  std::vector<double> objective_per_iter;
  int iters = 0;
  bool converged = false;
  int omega_kkt_steps = 0;   // iterations where the closed-form omega step was replaced
  int omega_kept_steps = 0;  // iterations where omega was left unchanged
  int phi_fallbacks = 0;
  int omega_pruned = 0;      // inflation weights set to zero by the support move

  /// Largest drop between consecutive objective values (0 when monotone).
  double max_descent() const {
    double worst = 0.0;
    for (std::size_t m = 1; m < objective_per_iter.size(); ++m)
      worst = std::max(worst, objective_per_iter[m - 1] - objective_per_iter[m]);
    return worst;
  }
};

struct FitResult {
  ModelParams params;
  CandidateSet candidates;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  Family family = Family::NegativeBinomial;
  EmTrace trace;
  std::vector<bool> selected_values;      // omega_j > 1e-8, j < J
  std::vector<bool> selected_covariates;  // |beta_j| > 1e-8
  double penalized_objective = 0.0;
  double log_likelihood = 0.0;
  int df = 0;
  double bic = 0.0;
  std::size_t n = 0;

  bool converged() const { return trace.converged; }

  std::vector<Count> selected_inflated_values() const {
    std::vector<Count> v;
    for (std::size_t j = 0; j < selected_values.size(); ++j)
      if (selected_values[j]) v.push_back(candidates[j]);
    return v;
  }
};

/// Intercept + phi (when the NB dispersion is free and away from the Poisson
/// boundary) + nonzero coefficients + selected inflated values.
inline int model_degrees_of_freedom(const ModelParams& params, Family family) {
  int df = 1;
  if (family == Family::NegativeBinomial && params.phi() > kPhiActiveThreshold) ++df;
  for (Eigen::Index j = 0; j < params.beta().size(); ++j)
    if (std::abs(params.beta()[j]) > kSelectionThreshold) ++df;
  for (std::size_t j = 0; j < params.num_candidates(); ++j)
    if (params.omega()[static_cast<Eigen::Index>(j)] > kSelectionThreshold) ++df;
  return df;
}

inline double bic_value(double loglik, int df, std::size_t n) {
  return -2.0 * loglik + static_cast<double>(df) * std::log(static_cast<double>(n));
}

struct Initialization {
  ModelParams params;
  Eigen::VectorXd rho1;
  Eigen::VectorXd rho2;
  bool poisson_fallback = false;

  PenaltyConfig penalty(double lambda1, double lambda2) const {
    PenaltyConfig pen{lambda1, lambda2, rho1, rho2};
    pen.validate();
    return pen;
  }
};

/// Basis of the inflation weights rho2_j: 1 / (relative frequency of k_j), or
/// 1 / omega_j^(0) with omega^(0) from initial_omega.
enum class OmegaWeightRule { Frequency, InitialOmega };

inline Eigen::VectorXd relative_frequencies(const Dataset& data, const CandidateSet& k) {
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k.size()));
  for (Count y : data.y()) {
    const long j = k.index_of(y);
    if (j >= 0) freq[j] += 1.0;
  }
  return freq / static_cast<double>(data.n());
}

/// omega_j = f_j - f_1/2 on relative frequencies, floored at 1e-4, scaled so the
/// inflated mass is at most 0.95; the NB component takes the rest.
inline Eigen::VectorXd initial_omega(const Dataset& data, const CandidateSet& k) {
  const std::size_t nk = k.size();
  Eigen::VectorXd omega(static_cast<Eigen::Index>(nk) + 1);
  if (nk == 0) {
    omega[0] = 1.0;
    return omega;
  }
  const Eigen::VectorXd freq = relative_frequencies(data, k);
  double mass = 0.0;
  for (std::size_t j = 0; j < nk; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    omega[jj] = std::max(freq[jj] - freq[0] / 2.0, kOmegaInitFloor);
    mass += omega[jj];
  }
  if (mass > kOmegaInitMass) {
    omega.head(static_cast<Eigen::Index>(nk)) *= kOmegaInitMass / mass;
    mass = kOmegaInitMass;
  }
  omega[static_cast<Eigen::Index>(nk)] = 1.0 - mass;
  return omega;
}

/// Starting values and adaptive weights. (alpha, beta, phi) come from an
/// unpenalized NB regression on all observations; if that fit fails a Poisson
/// fit with phi = 0.5 is used instead and `poisson_fallback` is set.
inline Initialization initialize(const Dataset& data, const CandidateSet& k, Family family = Family::NegativeBinomial,
                                 OmegaWeightRule rule = OmegaWeightRule::Frequency) {
  Eigen::VectorXd omega = initial_omega(data, k);
  GlmOptions gopts;
  gopts.family = family;
  GlmFit g = fit_glm(data, gopts);
  bool fallback = false;
  if (family == Family::NegativeBinomial && !g.converged) {
    gopts.family = Family::Poisson;
    g = fit_glm(data, gopts);
    g.phi = 0.5;
    fallback = true;
  }
  const double alpha = std::clamp(g.alpha, -kEtaClamp, kEtaClamp);
  Eigen::VectorXd beta = g.beta.unaryExpr([](double b) { return std::isfinite(b) ? std::clamp(b, -1e3, 1e3) : 0.0; });
  const double phi = family == Family::Poisson ? 0.0 : std::clamp(g.phi, kPhiMin, kPhiMax);

  Initialization init{ModelParams(phi, alpha, beta, omega), Eigen::VectorXd(beta.size()),
                      Eigen::VectorXd(static_cast<Eigen::Index>(k.size())), fallback};
  for (Eigen::Index j = 0; j < beta.size(); ++j) init.rho1[j] = adaptive_weight(beta[j]);
  const Eigen::VectorXd basis = rule == OmegaWeightRule::Frequency ? relative_frequencies(data, k)
                                                                    : Eigen::VectorXd(omega.head(omega.size() - 1));
  for (Eigen::Index j = 0; j < basis.size(); ++j) init.rho2[j] = adaptive_weight(basis[j]);
  return init;
}

namespace detail {

// Per-fit constants: candidate index, distinct-count index and log(y!) of
// every observation.
struct ObservationCache {
  std::vector<long> candidate;
  CountIndex counts;
  std::vector<double> log_fact;

  ObservationCache(const Dataset& data, const CandidateSet& k)
      : candidate(k.index_observations(data)), counts(data.y()) {
    log_fact.resize(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) log_fact[i] = log_factorial(data.y(i));
  }
};

inline double nb_log_pmf_cached(Count y, double mu, double phi, double log_fact) {
  const double yd = static_cast<double>(y);
  if (phi < kPoissonPhiThreshold) return yd * std::log(mu) - mu - log_fact;
  const double r = 1.0 / phi;
  const double mp = mu * phi;
  return log_rising(r, y) - log_fact + yd * std::log(mp) - (yd + r) * std::log1p(mp);
}

inline std::vector<double> linear_predictors(const Dataset& data, double alpha, const Eigen::VectorXd& beta) {
  std::vector<double> eta(data.n(), alpha);
  if (beta.size() > 0) {
    Eigen::VectorXd xb = data.x() * beta;
    for (std::size_t i = 0; i < data.n(); ++i) eta[i] += xb[static_cast<Eigen::Index>(i)];
  }
  return eta;
}

// log f_NB(y_i; mu_i, phi) for every observation.
inline std::vector<double> nb_log_terms(const Dataset& data, const ObservationCache& cache, const ModelParams& params) {
  const auto eta = linear_predictors(data, params.alpha(), params.beta());
  std::vector<double> lf(data.n());
  const double phi = params.phi();
  if (phi < kPoissonPhiThreshold) {
    for (std::size_t i = 0; i < data.n(); ++i)
      lf[i] = nb_log_pmf_cached(data.y(i), mean_from_eta(eta[i]), phi, cache.log_fact[i]);
    return lf;
  }
  RisingTable table;
  table.evaluate(cache.counts.values, 1.0 / phi, false);
  const double log_phi = std::log(phi);
  for (std::size_t i = 0; i < data.n(); ++i) {
    // log_rising - log y! + y log(mu phi) - (y + r) log1p(mu phi)
    const double yd = static_cast<double>(data.y(i));
    const double e = std::clamp(eta[i], -kEtaClamp, kEtaClamp);
    const double mp = std::exp(e) * phi;
    lf[i] = table.log_rising[cache.counts.index[i]] - cache.log_fact[i] + yd * (e + log_phi) -
            (yd + 1.0 / phi) * std::log1p(mp);
  }
  return lf;
}

inline double mixture_loglik_from_terms(const std::vector<double>& lf, const std::vector<long>& candidate,
                                        const Eigen::VectorXd& omega) {
  const double log_nb_weight = std::log(omega[omega.size() - 1]);
  double s = 0.0;
  for (std::size_t i = 0; i < lf.size(); ++i) {
    const double nb_term = log_nb_weight + lf[i];
    const long j = candidate[i];
    s += (j >= 0 && omega[j] > 0.0) ? log_sum_exp(std::log(omega[j]), nb_term) : nb_term;
  }
  return s;
}

inline Responsibilities responsibilities_from_terms(const std::vector<double>& lf, const std::vector<long>& candidate,
                                                    const Eigen::VectorXd& omega) {
  const std::size_t nk = static_cast<std::size_t>(omega.size()) - 1;
  const double log_nb_weight = std::log(omega[omega.size() - 1]);
  std::vector<double> w(lf.size(), 1.0);
  for (std::size_t i = 0; i < lf.size(); ++i) {
    const long j = candidate[i];
    if (j < 0 || !(omega[j] > 0.0)) continue;
    // gamma_{i,J+1} = 1 / (1 + omega_j / (omega_{J+1} f_i))
    w[i] = 1.0 / (1.0 + std::exp(std::log(omega[j]) - (log_nb_weight + lf[i])));
  }
  return Responsibilities(nk, candidate, std::move(w));
}

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

}  // namespace detail

inline Responsibilities e_step(const Dataset& data, const ModelParams& params, const CandidateSet& k) {
  detail::check_dims(data.p(), params, k);
  const detail::ObservationCache cache(data, k);
  return detail::responsibilities_from_terms(detail::nb_log_terms(data, cache, params), cache.candidate,
                                             params.omega());
}

/// sum_j rho2_j omega_j over the penalized entries; the closed-form omega step
/// needs lambda2 times this to be below one.
inline double weighted_inflation_mass(const Eigen::VectorXd& omega, const PenaltyConfig& pen) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < pen.rho2.size(); ++j) s += pen.rho2[j] * omega[j];
  return s;
}

/// Closed-form omega update with truncation at zero. Entries whose numerator
/// and multiplier disagree in sign are set to 0; the NB weight then absorbs
/// the residual mass. If the residual is not positive the whole vector is
/// rescaled onto the simplex instead. Throws NumericalError when the Lagrange
/// multiplier is not negative (lambda2 * sum rho2 omega >= 1).
inline Eigen::VectorXd m_step_omega(const Responsibilities& resp, const ModelParams& params,
                                    const PenaltyConfig& pen) {
  const std::size_t nk = resp.num_candidates();
  if (params.num_candidates() != nk || static_cast<std::size_t>(pen.rho2.size()) != nk)
    throw DimensionError("m_step_omega: candidate dimensions differ");
  const double n = static_cast<double>(resp.n());
  const Eigen::VectorXd& old = params.omega();
  const Eigen::VectorXd g = resp.column_sums();
  const double delta = n * (pen.lambda2 * weighted_inflation_mass(old, pen) - 1.0);
  if (!(delta < 0.0)) throw NumericalError("m_step_omega: Lagrange multiplier is not negative");

  Eigen::VectorXd omega(static_cast<Eigen::Index>(nk) + 1);
  double mass = 0.0;
  for (std::size_t j = 0; j < nk; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double num = n * pen.lambda2 * pen.rho2[jj] * old[jj] - g[jj];
    omega[jj] = num * delta > 0.0 ? num / delta : 0.0;
    mass += omega[jj];
  }
  const auto last = static_cast<Eigen::Index>(nk);
  const double residual = 1.0 - mass;
  const double closed_form_last = -g[last] / delta;
  if (residual > 0.0) {
    omega[last] = residual;
  } else {
    omega[last] = closed_form_last;
    omega /= omega.sum();
  }
  return omega;
}

/// Exact maximizer of sum_j G_j log omega_j - n lambda2 sum_j rho2_j omega_j
/// over the simplex. Support-preserving: entries with G_j = 0 stay at zero.
inline Eigen::VectorXd maximize_expected_omega(const Responsibilities& resp, const PenaltyConfig& pen) {
  const std::size_t nk = resp.num_candidates();
  const double n = static_cast<double>(resp.n());
  const Eigen::VectorXd g = resp.column_sums();
  const auto last = static_cast<Eigen::Index>(nk);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(last + 1);
  for (Eigen::Index j = 0; j < last; ++j) c[j] = n * pen.lambda2 * pen.rho2[j];
  auto total = [&](double nu) { return (g.array() / (c.array() + nu)).sum(); };
  // total() is decreasing in nu; the root lies in [G_{J+1}, n].
  double lo = std::max(g[last], 1e-300), hi = std::max(n, lo);
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (total(mid) > 1.0 ? lo : hi) = mid;
  }
  const double nu = 0.5 * (lo + hi);
  Eigen::VectorXd omega = (g.array() / (c.array() + nu)).matrix();
  omega /= omega.sum();
  return omega;
}

namespace detail {

// State of the cyclic IRLS sweep over (alpha, beta) with phi and the
// responsibilities fixed. Observations with zero weight are dropped.
class IrlsSweep {
 public:
  IrlsSweep(const Dataset& data, const std::vector<double>& w, double phi, double alpha, Eigen::VectorXd beta,
            const PenaltyConfig& pen)
      : phi_(phi < kPoissonPhiThreshold ? 0.0 : phi), alpha_(alpha), beta_(std::move(beta)), pen_(pen),
        n_total_(static_cast<double>(data.n())) {
    std::vector<Eigen::Index> keep;
    for (std::size_t i = 0; i < data.n(); ++i)
      if (w[i] > 0.0) keep.push_back(static_cast<Eigen::Index>(i));
    const auto m = static_cast<Eigen::Index>(keep.size());
    y_.resize(m);
    w_.resize(m);
    x_.resize(m, data.x().cols());
    for (Eigen::Index r = 0; r < m; ++r) {
      y_[r] = static_cast<double>(data.y(static_cast<std::size_t>(keep[static_cast<std::size_t>(r)])));
      w_[r] = w[static_cast<std::size_t>(keep[static_cast<std::size_t>(r)])];
      x_.row(r) = data.x().row(keep[static_cast<std::size_t>(r)]);
    }
    eta_ = Eigen::ArrayXd::Constant(m, alpha_);
    if (beta_.size() > 0) eta_ += (x_ * beta_).array();
    refresh_mean();
    kernel_ = kernel();
  }

  double alpha() const { return alpha_; }
  const Eigen::VectorXd& beta() const { return beta_; }

  /// One pass: intercept, then every coefficient in order. The pass is first
  /// taken with plain coordinate steps; if it lowers the objective it is
  /// redone with every coordinate step checked and halved.
  void sweep() {
    const double before = objective();
    const double alpha0 = alpha_;
    const Eigen::VectorXd beta0 = beta_;
    const Eigen::ArrayXd eta0 = eta_;
    const Eigen::ArrayXd mu0 = mu_;
    const double kernel0 = kernel_;
    update_coordinate(-1, false);
    for (Eigen::Index j = 0; j < beta_.size(); ++j) update_coordinate(j, false);
    kernel_ = kernel();
    if (objective() >= before) return;
    alpha_ = alpha0;
    beta_ = beta0;
    eta_ = eta0;
    mu_ = mu0;
    kernel_ = kernel0;
    update_coordinate(-1, true);
    for (Eigen::Index j = 0; j < beta_.size(); ++j) update_coordinate(j, true);
  }

  /// Weighted objective sum_i w_i (y_i eta_i - (y_i + 1/phi) log(1 + mu_i phi)) - penalty.
  double objective() const { return kernel_ - penalty(); }

 private:
  double penalty() const {
    double s = 0.0;
    for (Eigen::Index j = 0; j < beta_.size(); ++j) s += pen_.rho1[j] * std::abs(beta_[j]);
    return n_total_ * pen_.lambda1 * s;
  }

  void refresh_mean() { mu_ = eta_.cwiseMax(-kEtaClamp).cwiseMin(kEtaClamp).exp(); }

  // kernel at the current eta_, mu_
  double kernel() const {
    const Eigen::ArrayXd e = eta_.cwiseMax(-kEtaClamp).cwiseMin(kEtaClamp);
    double s;
    if (phi_ == 0.0) {
      s = (w_ * (y_ * e - mu_)).sum();
    } else {
      const Eigen::ArrayXd l = (mu_ * phi_).log1p();
      s = (w_ * (y_ * e - (y_ + 1.0 / phi_) * l)).sum();
    }
    return std::isfinite(s) ? s : -std::numeric_limits<double>::infinity();
  }

  void update_coordinate(Eigen::Index j, bool guarded) {
    // score (y - mu)/(1 + mu phi) and curvature mu (1 + y phi)/(1 + mu phi)^2 along x_j
    const Eigen::ArrayXd d = 1.0 + mu_ * phi_;
    const Eigen::ArrayXd score = w_ * (y_ - mu_) / d;
    const Eigen::ArrayXd curv = w_ * mu_ * (1.0 + y_ * phi_) / (d * d);
    double g, c;
    if (j < 0) {
      g = score.sum();
      c = curv.sum();
    } else {
      const auto x = x_.col(j).array();
      g = (score * x).sum();
      c = (curv * x.square()).sum();
    }
    if (!(c > 0.0) || !std::isfinite(c) || !std::isfinite(g)) return;

    const double current = j < 0 ? alpha_ : beta_[j];
    const double newton = current + g / c;
    const double weight = j < 0 ? 0.0 : n_total_ * pen_.lambda1 * pen_.rho1[j];
    const double target = j < 0 ? newton : soft_threshold(newton, weight / c);
    if (target == current) return;

    if (!guarded) {
      move(j, target - current);
      (j < 0 ? alpha_ : beta_[j]) = target;
      return;
    }
    const double f_old = kernel_ - weight * std::abs(current);
    const Eigen::ArrayXd eta_old = eta_;
    const Eigen::ArrayXd mu_old = mu_;
    double step = target - current;
    for (int halving = 0; halving < 40; ++halving) {
      move(j, step);
      const double k_new = kernel();
      if (k_new - weight * std::abs(current + step) >= f_old) {
        kernel_ = k_new;
        (j < 0 ? alpha_ : beta_[j]) = current + step;
        return;
      }
      eta_ = eta_old;
      step *= 0.5;
    }
    mu_ = mu_old;
  }

  void move(Eigen::Index j, double step) {
    if (j < 0)
      eta_ += step;
    else
      eta_ += step * x_.col(j).array();
    refresh_mean();
  }

  double phi_;
  double alpha_;
  Eigen::VectorXd beta_;
  const PenaltyConfig& pen_;
  double n_total_;
  Eigen::ArrayXd y_, w_, eta_, mu_;
  Eigen::MatrixXd x_;
  double kernel_ = 0.0;
};

}  // namespace detail

struct CoefficientUpdate {
  double alpha = 0.0;
  Eigen::VectorXd beta;
  int sweeps = 0;
};

/// Cyclic IRLS with soft-thresholding for (alpha, beta), phi and the
/// responsibilities held fixed. Each coordinate takes the Newton step of the
/// NB log-likelihood in that coordinate (soft-thresholded for beta); the step
/// is halved if it would lower the weighted penalized objective.
inline CoefficientUpdate m_step_beta(const Dataset& data, const Responsibilities& resp, const ModelParams& params,
                                     const PenaltyConfig& pen, const EmOptions& opts) {
  if (resp.n() != data.n() || params.p() != data.p() || static_cast<std::size_t>(pen.rho1.size()) != data.p())
    throw DimensionError("m_step_beta: dimensions differ");
  const double phi = opts.family == Family::Poisson ? 0.0 : params.phi();
  detail::IrlsSweep irls(data, resp.nb_weights(), phi, params.alpha(), params.beta(), pen);
  CoefficientUpdate out;
  for (int q = 0; q < opts.inner_irls_max_iters; ++q) {
    const double a0 = irls.alpha();
    const Eigen::VectorXd b0 = irls.beta();
    irls.sweep();
    out.sweeps = q + 1;
    const double change = std::max(std::abs(irls.alpha() - a0), (irls.beta() - b0).norm());
    if (!std::isfinite(change)) throw NumericalError("m_step_beta: non-finite coefficient update");
    if (change < opts.inner_irls_tol) break;
  }
  out.alpha = irls.alpha();
  out.beta = irls.beta();
  return out;
}

/// Newton-Raphson for phi on sum_i gamma_{i,J+1} log f_NB(y_i; mu_i, phi).
inline PhiSolveResult m_step_phi(const Dataset& data, const Responsibilities& resp, const ModelParams& params,
                                 const EmOptions& opts) {
  if (resp.n() != data.n()) throw DimensionError("m_step_phi: dimensions differ");
  const auto eta = detail::linear_predictors(data, params.alpha(), params.beta());
  std::vector<double> mu(eta.size());
  for (std::size_t i = 0; i < eta.size(); ++i) mu[i] = mean_from_eta(eta[i]);
  return maximize_weighted_phi(data.y(), mu, resp.nb_weights(), params.phi(), opts.phi_newton_max_iters);
}

/// Gradient of sum_i w_i log f_NB(y_i; mu_i, phi) in (alpha, beta_1..beta_p, phi),
/// the quantities M2 and M3 climb.
inline Eigen::VectorXd weighted_nb_score(const Dataset& data, const std::vector<double>& w, double alpha,
                                         const Eigen::VectorXd& beta, double phi) {
  const auto eta = detail::linear_predictors(data, alpha, beta);
  const Eigen::Index p = beta.size();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(p + 2);
  for (std::size_t i = 0; i < data.n(); ++i) {
    const double mu = mean_from_eta(eta[i]);
    const auto de = nb_eta_derivatives(data.y(i), mu, phi);
    g[0] += w[i] * de.score;
    for (Eigen::Index j = 0; j < p; ++j) g[1 + j] += w[i] * de.score * data.x()(static_cast<Eigen::Index>(i), j);
    g[p + 1] += w[i] * nb_phi_derivatives(data.y(i), mu, phi).score;
  }
  return g;
}

namespace detail {

inline double relative_change(double now, double before) {
  const double d = std::abs(now - before);
  return std::abs(before) < 1e-12 ? d : d / std::abs(before);
}

inline double relative_change(const Eigen::VectorXd& now, const Eigen::VectorXd& before) {
  const double d = (now - before).norm();
  const double b = before.norm();
  return b < 1e-12 ? d : d / b;
}

}  // namespace detail

inline FitResult summarize_fit(const Dataset& data, const CandidateSet& k, const ModelParams& params,
                               const PenaltyConfig& pen, Family family, EmTrace trace) {
  FitResult r;
  r.params = params;
  r.candidates = k;
  r.lambda1 = pen.lambda1;
  r.lambda2 = pen.lambda2;
  r.family = family;
  r.trace = std::move(trace);
  r.n = data.n();
  r.selected_values.resize(k.size());
  for (std::size_t j = 0; j < k.size(); ++j)
    r.selected_values[j] = params.omega()[static_cast<Eigen::Index>(j)] > kSelectionThreshold;
  r.selected_covariates.resize(params.p());
  for (std::size_t j = 0; j < params.p(); ++j)
    r.selected_covariates[j] = std::abs(params.beta()[static_cast<Eigen::Index>(j)]) > kSelectionThreshold;
  r.log_likelihood = log_likelihood(data, params, k);
  r.penalized_objective = r.log_likelihood - penalty_value(data.n(), params, pen);
  r.df = model_degrees_of_freedom(params, family);
  r.bic = bic_value(r.log_likelihood, r.df, data.n());
  return r;
}

/// Process-wide tallies over every completed fit(): the number of fits and the
/// largest single-iteration drop of the penalized objective.
struct FitStatistics {
  std::atomic<long> fits{0};
  std::atomic<double> worst_descent{0.0};

  void record(const EmTrace& trace) {
    ++fits;
    const double d = trace.max_descent();
    double seen = worst_descent.load();
    while (d > seen && !worst_descent.compare_exchange_weak(seen, d)) {
    }
  }
};

inline FitStatistics& fit_statistics() {
  static FitStatistics stats;
  return stats;
}

/// Runs the penalized EM from `start` (or from initialize() when absent).
/// Stops when the largest relative parameter change drops below rel_tol or
/// after max_iters; a non-converged run still returns its last iterate.
inline FitResult fit(const Dataset& data, const CandidateSet& k, const PenaltyConfig& pen, const EmOptions& opts,
                     std::optional<ModelParams> start = std::nullopt) {
  opts.validate();
  pen.validate();
  ModelParams cur = start ? *start : initialize(data, k, opts.family).params;
  detail::check_dims(data.p(), cur, k);
  if (static_cast<std::size_t>(pen.rho1.size()) != data.p() || static_cast<std::size_t>(pen.rho2.size()) != k.size())
    throw DimensionError("fit: penalty weights do not match dimensions");
  if (opts.family == Family::Poisson && cur.phi() != 0.0) cur = cur.with_phi(0.0);
  if (opts.family == Family::NegativeBinomial) cur = cur.with_phi(std::clamp(cur.phi(), kPhiMin, kPhiMax));

  const detail::ObservationCache cache(data, k);
  auto penalized = [&](const std::vector<double>& lf, const ModelParams& p) {
    return detail::mixture_loglik_from_terms(lf, cache.candidate, p.omega()) - penalty_value(data.n(), p, pen);
  };

  std::vector<double> lf = detail::nb_log_terms(data, cache, cur);
  double objective = penalized(lf, cur);
  EmTrace trace;
  trace.objective_per_iter.push_back(objective);

  for (int m = 1; m <= opts.max_iters; ++m) {
    const Responsibilities resp = detail::responsibilities_from_terms(lf, cache.candidate, cur.omega());

    const CoefficientUpdate coef = m_step_beta(data, resp, cur, pen, opts);
    ModelParams base = cur.with_coefficients(coef.alpha, coef.beta);
    if (opts.family == Family::NegativeBinomial) {
      const PhiSolveResult ph = m_step_phi(data, resp, base, opts);
      if (ph.used_fallback) ++trace.phi_fallbacks;
      base = base.with_phi(ph.phi);
    }
    std::vector<double> lf_new = detail::nb_log_terms(data, cache, base);

    // Closed-form step first; the exact expected-objective maximizer and the
    // unchanged omega are the fallbacks when the step would lower the objective.
    std::optional<ModelParams> accepted;
    double accepted_obj = 0.0;
    if (!k.empty() && pen.lambda2 * weighted_inflation_mass(cur.omega(), pen) < 1.0) {
      const ModelParams cand = base.with_omega(m_step_omega(resp, cur, pen));
      const double obj = penalized(lf_new, cand);
      if (obj >= objective - kAscentSlack) {
        accepted = cand;
        accepted_obj = obj;
      }
    }
    if (!accepted && !k.empty()) {
      const ModelParams cand = base.with_omega(maximize_expected_omega(resp, pen));
      const double obj = penalized(lf_new, cand);
      if (obj >= objective - kAscentSlack) {
        accepted = cand;
        accepted_obj = obj;
        ++trace.omega_kkt_steps;
      }
    }
    if (!accepted) {
      accepted = base;
      accepted_obj = penalized(lf_new, base);
      if (!k.empty()) ++trace.omega_kept_steps;
    }

    const double change = std::max({detail::relative_change(accepted->alpha(), cur.alpha()),
                                    detail::relative_change(accepted->beta(), cur.beta()),
                                    detail::relative_change(accepted->omega(), cur.omega()),
                                    detail::relative_change(accepted->phi(), cur.phi())});
    cur = *accepted;
    objective = accepted_obj;
    lf = std::move(lf_new);
    trace.objective_per_iter.push_back(objective);
    trace.iters = m;
    if (!std::isfinite(objective)) throw NumericalError("fit: objective became non-finite");
    if (change < opts.rel_tol) {
      // Support move: a weight the omega step only shrinks geometrically is
      // set to zero, its mass going to the NB component, whenever that does
      // not lower the objective. EM resumes after any such move.
      bool pruned = false;
      for (std::size_t j = 0; j < k.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        if (!(cur.omega()[jj] > 0.0)) continue;
        Eigen::VectorXd om = cur.omega();
        om[jj] = 0.0;
        om[om.size() - 1] = 0.0;
        om[om.size() - 1] = 1.0 - om.sum();
        const ModelParams cand = cur.with_omega(std::move(om));
        const double obj = penalized(lf, cand);
        if (obj >= objective) {
          cur = cand;
          objective = obj;
          pruned = true;
          ++trace.omega_pruned;
        }
      }
      if (!pruned) {
        trace.converged = true;
        break;
      }
      trace.objective_per_iter.back() = objective;
    }
  }
  fit_statistics().record(trace);
  return summarize_fit(data, k, cur, pen, opts.family, std::move(trace));
}

/// Fit with fresh initialization and adaptive weights at (lambda1, lambda2).
inline FitResult fit(const Dataset& data, const CandidateSet& k, double lambda1, double lambda2,
                     const EmOptions& opts = {}) {
  const Initialization init = initialize(data, k, opts.family);
  return fit(data, k, init.penalty(lambda1, lambda2), opts, init.params);
}

}  // namespace minb
