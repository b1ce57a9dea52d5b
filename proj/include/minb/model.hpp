#pragma once

// Observations, parameters and the penalized MINB objective.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "minb/error.hpp"
#include "minb/nbcore.hpp"

namespace minb {

/// Response counts with an n x p covariate matrix.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<Count> y, Eigen::MatrixXd x) : y_(std::move(y)), x_(std::move(x)) { validate(); }

  std::size_t n() const { return y_.size(); }
  std::size_t p() const { return static_cast<std::size_t>(x_.cols()); }
  const std::vector<Count>& y() const { return y_; }
  const Eigen::MatrixXd& x() const { return x_; }
  Count y(std::size_t i) const { return y_[i]; }

  /// Rows of `a` followed by rows of `b`.
  static Dataset concat(const Dataset& a, const Dataset& b) {
    if (a.p() != b.p()) throw DimensionError("Dataset::concat: covariate counts differ");
    std::vector<Count> y = a.y_;
    y.insert(y.end(), b.y_.begin(), b.y_.end());
    Eigen::MatrixXd x(a.x_.rows() + b.x_.rows(), a.x_.cols());
    x << a.x_, b.x_;
    return Dataset(std::move(y), std::move(x));
  }

 private:
  void validate() const {
    if (y_.empty()) throw DimensionError("Dataset: need at least one observation");
    if (static_cast<std::size_t>(x_.rows()) != y_.size())
      throw DimensionError("Dataset: covariate rows do not match response length");
    for (Count v : y_)
      if (v < 0) throw DomainError("Dataset: negative response count");
    if (!x_.allFinite()) throw DomainError("Dataset: non-finite covariate value");
  }

  std::vector<Count> y_;
  Eigen::MatrixXd x_;
};

/// Strictly ascending candidate inflated values k_1 < ... < k_J.
class CandidateSet {
 public:
  CandidateSet() = default;
  explicit CandidateSet(std::vector<Count> values) : values_(std::move(values)) {
    for (std::size_t j = 0; j < values_.size(); ++j) {
      if (values_[j] < 0) throw DomainError("CandidateSet: negative value");
      if (j > 0 && values_[j] <= values_[j - 1]) throw DomainError("CandidateSet: values must be strictly ascending");
    }
  }

  /// Every distinct response value observed at least `min_count` times.
  static CandidateSet from_data(const Dataset& data, std::size_t min_count = 1) {
    std::map<Count, std::size_t> freq;
    for (Count v : data.y()) ++freq[v];
    std::vector<Count> values;
    for (const auto& [v, c] : freq)
      if (c >= std::max<std::size_t>(min_count, 1)) values.push_back(v);
    return CandidateSet(std::move(values));
  }

  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  Count operator[](std::size_t j) const { return values_[j]; }
  const std::vector<Count>& values() const { return values_; }

  /// Index of `y` in the set, or -1.
  long index_of(Count y) const {
    auto it = std::lower_bound(values_.begin(), values_.end(), y);
    if (it == values_.end() || *it != y) return -1;
    return static_cast<long>(it - values_.begin());
  }

  /// index_of for every observation of `data`.
  std::vector<long> index_observations(const Dataset& data) const {
    std::vector<long> idx(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) idx[i] = index_of(data.y(i));
    return idx;
  }

  friend bool operator==(const CandidateSet&, const CandidateSet&) = default;

 private:
  std::vector<Count> values_;
};

inline constexpr double kSimplexTolerance = 1e-10;

/// theta = (phi, alpha, beta, omega). omega has J+1 entries, the last being
/// the weight of the NB regression component.
class ModelParams {
 public:
  ModelParams() : omega_(Eigen::VectorXd::Ones(1)) {}
  ModelParams(double phi, double alpha, Eigen::VectorXd beta, Eigen::VectorXd omega)
      : phi_(phi), alpha_(alpha), beta_(std::move(beta)), omega_(std::move(omega)) {
    validate();
  }

  double phi() const { return phi_; }
  double alpha() const { return alpha_; }
  const Eigen::VectorXd& beta() const { return beta_; }
  const Eigen::VectorXd& omega() const { return omega_; }
  std::size_t p() const { return static_cast<std::size_t>(beta_.size()); }
  std::size_t num_candidates() const { return static_cast<std::size_t>(omega_.size()) - 1; }
  double nb_weight() const { return omega_[omega_.size() - 1]; }

  ModelParams with_phi(double phi) const { return {phi, alpha_, beta_, omega_}; }
  ModelParams with_coefficients(double alpha, Eigen::VectorXd beta) const {
    return {phi_, alpha, std::move(beta), omega_};
  }
  ModelParams with_omega(Eigen::VectorXd omega) const { return {phi_, alpha_, beta_, std::move(omega)}; }

  double linear_predictor(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    return alpha_ + (beta_.size() ? x.dot(beta_) : 0.0);
  }

 private:
  void validate() const {
    if (!(phi_ >= 0.0) || !std::isfinite(phi_)) throw DomainError("ModelParams: phi must be finite and >= 0");
    if (!std::isfinite(alpha_)) throw DomainError("ModelParams: alpha must be finite");
    if (!beta_.allFinite()) throw DomainError("ModelParams: beta must be finite");
    if (omega_.size() < 1) throw DimensionError("ModelParams: omega needs the NB component weight");
    double s = 0.0;
    for (Eigen::Index j = 0; j < omega_.size(); ++j) {
      if (!(omega_[j] >= 0.0 && omega_[j] <= 1.0)) throw DomainError("ModelParams: omega entries must lie in [0,1]");
      s += omega_[j];
    }
    if (std::abs(s - 1.0) > kSimplexTolerance) throw DomainError("ModelParams: omega must sum to one");
    if (!(nb_weight() > 0.0)) throw DomainError("ModelParams: NB component weight must be positive");
  }

  double phi_ = 0.0;
  double alpha_ = 0.0;
  Eigen::VectorXd beta_;
  Eigen::VectorXd omega_;
};

inline constexpr double kWeightFloor = 1e-6;

/// 1 / max(|estimate|, 1e-6), the floored adaptive-LASSO weight.
inline double adaptive_weight(double estimate) { return 1.0 / std::max(std::abs(estimate), kWeightFloor); }

/// Tuning parameters and adaptive weights of the two penalties.
struct PenaltyConfig {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  Eigen::VectorXd rho1;  // length p
  Eigen::VectorXd rho2;  // length J

  static PenaltyConfig unpenalized(std::size_t p, std::size_t num_candidates) {
    return {0.0, 0.0, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(p)),
            Eigen::VectorXd::Ones(static_cast<Eigen::Index>(num_candidates))};
  }

  PenaltyConfig with_lambdas(double l1, double l2) const {
    PenaltyConfig c = *this;
    c.lambda1 = l1;
    c.lambda2 = l2;
    c.validate();
    return c;
  }

  void validate() const {
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !std::isfinite(lambda1) || !std::isfinite(lambda2))
      throw DomainError("PenaltyConfig: tuning parameters must be finite and non-negative");
    for (Eigen::Index j = 0; j < rho1.size(); ++j)
      if (!(rho1[j] > 0.0) || !std::isfinite(rho1[j])) throw DomainError("PenaltyConfig: rho1 must be positive");
    for (Eigen::Index j = 0; j < rho2.size(); ++j)
      if (!(rho2[j] > 0.0) || !std::isfinite(rho2[j])) throw DomainError("PenaltyConfig: rho2 must be positive");
  }
};

namespace detail {
inline void check_dims(std::size_t p, const ModelParams& params, const CandidateSet& k) {
  if (params.p() != p) throw DimensionError("covariate dimension does not match beta");
  if (params.num_candidates() != k.size()) throw DimensionError("omega length does not match candidate set");
}
}  // namespace detail

/// log[ sum_j omega_j I(y = k_j) + omega_{J+1} f_NB(y; exp(alpha + x'beta), phi) ].
inline double mixture_log_pmf(Count y, const Eigen::Ref<const Eigen::RowVectorXd>& x, const ModelParams& params,
                              const CandidateSet& k) {
  detail::check_dims(static_cast<std::size_t>(x.size()), params, k);
  const double mu = mean_from_eta(params.linear_predictor(x));
  const double nb_term = std::log(params.nb_weight()) + nb_log_pmf(y, {mu, params.phi()});
  const long j = k.index_of(y);
  if (j < 0 || params.omega()[j] <= 0.0) return nb_term;
  return log_sum_exp(std::log(params.omega()[j]), nb_term);
}

/// Per-observation mixture log-pmf values, in row order.
inline std::vector<double> pointwise_log_likelihood(const Dataset& data, const ModelParams& params,
                                                    const CandidateSet& k) {
  detail::check_dims(data.p(), params, k);
  std::vector<double> out(data.n());
  for (std::size_t i = 0; i < data.n(); ++i)
    out[i] = mixture_log_pmf(data.y(i), data.x().row(static_cast<Eigen::Index>(i)), params, k);
  return out;
}

inline double log_likelihood(const Dataset& data, const ModelParams& params, const CandidateSet& k) {
  double s = 0.0;
  for (double v : pointwise_log_likelihood(data, params, k)) s += v;
  return s;
}

/// The two adaptive-LASSO penalty terms, n*lambda1*sum rho1|beta| + n*lambda2*sum rho2 omega.
inline double penalty_value(std::size_t n, const ModelParams& params, const PenaltyConfig& pen) {
  if (static_cast<std::size_t>(pen.rho1.size()) != params.p() ||
      static_cast<std::size_t>(pen.rho2.size()) != params.num_candidates())
    throw DimensionError("penalty weights do not match parameter dimensions");
  const double nd = static_cast<double>(n);
  double s1 = 0.0;
  for (Eigen::Index j = 0; j < pen.rho1.size(); ++j) s1 += pen.rho1[j] * std::abs(params.beta()[j]);
  double s2 = 0.0;
  for (Eigen::Index j = 0; j < pen.rho2.size(); ++j) s2 += pen.rho2[j] * params.omega()[j];
  return nd * pen.lambda1 * s1 + nd * pen.lambda2 * s2;
}

inline double penalized_objective(const Dataset& data, const ModelParams& params, const CandidateSet& k,
                                  const PenaltyConfig& pen) {
  return log_likelihood(data, params, k) - penalty_value(data.n(), params, pen);
}

/// Column centering/scaling applied before fitting when requested.
struct Standardization {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardization of(const Dataset& data) {
    const auto& x = data.x();
    const double n = static_cast<double>(x.rows());
    Standardization s{x.colwise().mean().transpose(), Eigen::VectorXd::Ones(x.cols())};
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double var = (x.col(j).array() - s.mean[j]).square().sum() / n;
      if (var > 0.0) s.scale[j] = std::sqrt(var);
    }
    return s;
  }

  Dataset apply(const Dataset& data) const {
    Eigen::MatrixXd x = (data.x().rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    return Dataset(data.y(), std::move(x));
  }

  /// Map (alpha, beta) estimated on the standardized scale back to raw covariates.
  std::pair<double, Eigen::VectorXd> to_raw(double alpha, const Eigen::VectorXd& beta) const {
    Eigen::VectorXd raw = beta.array() / scale.array();
    return {alpha - raw.dot(mean), raw};
  }
};

}  // namespace minb
