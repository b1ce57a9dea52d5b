#pragma once

// Unpenalized NB / Poisson regression by full Newton steps, and the scalar
// dispersion maximizer shared with the EM solver.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "minb/model.hpp"
#include "minb/nbcore.hpp"

namespace minb {

inline constexpr double kPhiMin = 1e-8;
inline constexpr double kPhiMax = 1e3;

struct PhiSolveResult {
  double phi = 1.0;
  int iterations = 0;
  bool converged = false;
  bool used_fallback = false;
};

namespace detail {

// sum_i w_i log f_NB(y_i; mu_i, phi) over the positive weights, with the
// rising-factorial terms aggregated per distinct count.
class WeightedPhiObjective {
 public:
  WeightedPhiObjective(const std::vector<Count>& y, const std::vector<double>& mu, const std::vector<double>& w)
      : y_(y), mu_(mu), w_(w), counts_(y), weight_by_value_(counts_.values.size(), 0.0) {
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!(w[i] > 0.0)) continue;
      weight_by_value_[counts_.index[i]] += w[i];
      const double yd = static_cast<double>(y[i]);
      y_log_mu_ += w[i] * yd * std::log(mu[i]);
      wy_ += w[i] * yd;
      log_fact_ += w[i] * log_factorial(y[i]);
    }
  }

  struct Eval {
    double value;
    double score;
    double curvature;
  };

  // Objective, and with `derivatives` its first two phi-derivatives.
  Eval evaluate(double phi, bool derivatives) {
    const double r = 1.0 / phi;
    table_.evaluate(counts_.values, r, derivatives);
    Eval e{y_log_mu_ + wy_ * std::log(phi) - log_fact_, 0.0, 0.0};
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t v = 0; v < weight_by_value_.size(); ++v) {
      e.value += weight_by_value_[v] * table_.log_rising[v];
      if (derivatives) {
        s1 += weight_by_value_[v] * table_.digamma_sum[v];
        s2 += weight_by_value_[v] * table_.trigamma_sum[v];
      }
    }
    e.score = -r * r * s1;
    e.curvature = 2.0 * r * r * r * s1 - r * r * r * r * s2;
    for (std::size_t i = 0; i < y_.size(); ++i) {
      if (!(w_[i] > 0.0)) continue;
      const double yd = static_cast<double>(y_[i]);
      const double mp = mu_[i] * phi;
      const double l = std::log1p(mp);
      e.value -= w_[i] * (yd + r) * l;
      if (!derivatives) continue;
      const double q = phi * (1.0 + mp);
      e.score += w_[i] * (r * r * l + (yd - mu_[i]) / q);
      e.curvature += w_[i] * (-2.0 * r * r * r * l + r * r * mu_[i] / (1.0 + mp) -
                              (yd - mu_[i]) * (1.0 + 2.0 * mp) / (q * q));
    }
    return e;
  }

 private:
  const std::vector<Count>& y_;
  const std::vector<double>& mu_;
  const std::vector<double>& w_;
  CountIndex counts_;
  std::vector<double> weight_by_value_;
  RisingTable table_;
  double y_log_mu_ = 0.0;
  double wy_ = 0.0;
  double log_fact_ = 0.0;
};

}  // namespace detail

/// Maximizes sum_i w_i log f_NB(y_i; mu_i, phi) over [kPhiMin, kPhiMax] by
/// Newton-Raphson in log(phi) with step halving, starting from `phi_start`.
/// Never returns a point worse than the start. Falls back to golden-section
/// search when Newton does not settle within `max_iters`.
inline PhiSolveResult maximize_weighted_phi(const std::vector<Count>& y, const std::vector<double>& mu,
                                            const std::vector<double>& w, double phi_start, int max_iters) {
  const double lo = std::log(kPhiMin);
  const double hi = std::log(kPhiMax);
  detail::WeightedPhiObjective obj(y, mu, w);
  auto objective = [&](double u) { return obj.evaluate(std::exp(u), false).value; };

  const double u_start = std::clamp(std::log(std::max(phi_start, kPhiMin)), lo, hi);
  double u = u_start;
  auto d = obj.evaluate(std::exp(u), true);
  double f = d.value;
  const double f_start = f;
  PhiSolveResult res;
  for (int it = 0; it < max_iters; ++it) {
    res.iterations = it + 1;
    const double phi = std::exp(u);
    const double su = phi * d.score;
    const double hu = phi * phi * d.curvature + phi * d.score;
    if (!std::isfinite(su) || !std::isfinite(hu)) break;
    double step = hu < 0.0 ? -su / hu : (su > 0.0 ? 1.0 : -1.0);
    step = std::clamp(step, -5.0, 5.0);
    double u_new = std::clamp(u + step, lo, hi);
    if (std::abs(u_new - u) < 1e-9) {
      res.converged = true;  // stationary, or pinned at a bound with the score pointing outward
      break;
    }
    auto d_new = obj.evaluate(std::exp(u_new), true);
    int halvings = 0;
    while (!(d_new.value >= f) && halvings < 50) {
      step *= 0.5;
      u_new = std::clamp(u + step, lo, hi);
      d_new = obj.evaluate(std::exp(u_new), true);
      ++halvings;
    }
    if (!(d_new.value >= f)) {
      res.converged = true;  // no ascent left at working precision
      break;
    }
    const double du = std::abs(u_new - u);
    u = u_new;
    d = d_new;
    f = d.value;
    if (du < 1e-9) {
      res.converged = true;
      break;
    }
  }

  if (!res.converged) {
    res.used_fallback = true;
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), e = a + g * (b - a);
    double fc = objective(c), fe = objective(e);
    for (int it = 0; it < 200 && (b - a) > 1e-10; ++it) {
      if (fc >= fe) {
        b = e;
        e = c;
        fe = fc;
        c = b - g * (b - a);
        fc = objective(c);
      } else {
        a = c;
        c = e;
        fc = fe;
        e = a + g * (b - a);
        fe = objective(e);
      }
    }
    const double ug = fc >= fe ? c : e;
    const double fg = std::max(fc, fe);
    if (fg > f) {
      u = ug;
      f = fg;
    }
    res.converged = true;
  }
  if (!(f >= f_start)) u = u_start;
  res.phi = std::exp(u);
  return res;
}

enum class Family { NegativeBinomial, Poisson };

struct GlmOptions {
  Family family = Family::NegativeBinomial;
  bool intercept = true;
  int max_outer_iters = 200;
  int max_newton_iters = 100;
  double tol = 1e-10;
};

struct GlmFit {
  double alpha = 0.0;
  Eigen::VectorXd beta;
  double phi = 0.0;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Maximum-likelihood NB (or Poisson) regression with optional observation weights.
inline GlmFit fit_glm(const Dataset& data, const GlmOptions& opts, const std::vector<double>* weights = nullptr) {
  const std::size_t n = data.n();
  const Eigen::Index p = static_cast<Eigen::Index>(data.p());
  const Eigen::Index off = opts.intercept ? 1 : 0;
  const Eigen::Index dim = p + off;
  std::vector<double> w = weights ? *weights : std::vector<double>(n, 1.0);
  const bool nb = opts.family == Family::NegativeBinomial;

  double wsum = 0.0, ysum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    wsum += w[i];
    ysum += w[i] * static_cast<double>(data.y(i));
  }
  const double ybar = wsum > 0.0 ? ysum / wsum : 0.0;
  double var = 0.0;
  for (std::size_t i = 0; i < n; ++i) var += w[i] * std::pow(static_cast<double>(data.y(i)) - ybar, 2);
  var = wsum > 1.0 ? var / (wsum - 1.0) : 0.0;

  Eigen::VectorXd coef = Eigen::VectorXd::Zero(dim);
  if (opts.intercept) coef[0] = std::log(std::max(ybar, 1e-3));
  double phi = nb ? std::clamp(ybar > 0.0 ? (var - ybar) / (ybar * ybar) : 1.0, 0.1, 10.0) : 0.0;

  std::vector<double> eta(n), mu(n);
  auto update_mean = [&](const Eigen::VectorXd& c) {
    for (std::size_t i = 0; i < n; ++i) {
      double e = opts.intercept ? c[0] : 0.0;
      if (p > 0) e += data.x().row(static_cast<Eigen::Index>(i)).dot(c.tail(p));
      eta[i] = std::clamp(e, -kEtaClamp, kEtaClamp);
      mu[i] = std::exp(eta[i]);
    }
  };
  auto kernel = [&](const Eigen::VectorXd& c) {
    update_mean(c);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += w[i] * nb_eta_kernel(data.y(i), eta[i], mu[i], phi);
    return s;
  };

  GlmFit out;
  bool converged = false;
  int outer = 0;
  for (; outer < opts.max_outer_iters && !converged; ++outer) {
    const Eigen::VectorXd coef_before = coef;
    const double phi_before = phi;
    double f = kernel(coef);
    for (int it = 0; it < opts.max_newton_iters; ++it) {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
      Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
      Eigen::VectorXd z(dim);
      for (std::size_t i = 0; i < n; ++i) {
        const auto d = nb_eta_derivatives(data.y(i), mu[i], phi);
        if (opts.intercept) z[0] = 1.0;
        if (p > 0) z.tail(p) = data.x().row(static_cast<Eigen::Index>(i)).transpose();
        g.noalias() += (w[i] * d.score) * z;
        h.noalias() -= (w[i] * d.curvature) * z * z.transpose();
      }
      h.diagonal().array() += 1e-12;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
      Eigen::VectorXd step = ldlt.solve(g);
      if (!step.allFinite()) break;
      double t = 1.0;
      Eigen::VectorXd cand = coef + step;
      double f_new = kernel(cand);
      while (!(f_new >= f) && t > 1e-10) {
        t *= 0.5;
        cand = coef + t * step;
        f_new = kernel(cand);
      }
      if (!(f_new >= f)) {
        update_mean(coef);
        break;
      }
      coef = cand;
      f = f_new;
      if ((t * step).cwiseAbs().maxCoeff() < opts.tol) break;
    }
    update_mean(coef);
    if (nb) phi = maximize_weighted_phi(data.y(), mu, w, phi, 100).phi;
    const double dc = (coef - coef_before).cwiseAbs().maxCoeff();
    const double dphi = std::abs(phi - phi_before) / std::max(phi_before, 1e-8);
    converged = dc < std::sqrt(opts.tol) * 1e-2 && dphi < std::sqrt(opts.tol) * 1e-2;
  }
  update_mean(coef);
  out.alpha = opts.intercept ? coef[0] : 0.0;
  out.beta = coef.tail(p);
  out.phi = phi;
  out.iterations = outer;
  double ll = 0.0;
  for (std::size_t i = 0; i < n; ++i) ll += w[i] * nb_log_pmf(data.y(i), {mu[i], nb ? phi : 0.0});
  out.log_likelihood = ll;
  const bool finite = std::isfinite(out.alpha) && out.beta.allFinite() && std::isfinite(ll);
  const bool clamped = std::any_of(eta.begin(), eta.end(), [](double e) { return std::abs(e) >= kEtaClamp; });
  const bool phi_at_bound = nb && phi >= kPhiMax * 0.999;
  out.converged = converged && finite && !clamped && !phi_at_bound;
  return out;
}

}  // namespace minb
