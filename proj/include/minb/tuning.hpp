#pragma once

// (lambda1, lambda2) grid search scored by BIC.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "minb/em_solver.hpp"
#include "minb/parallel.hpp"

namespace minb {

/// Descending, strictly positive tuning values for each penalty.
struct TuningGrid {
  std::vector<double> lambda1_values;
  std::vector<double> lambda2_values;

  void validate() const {
    auto check = [](const std::vector<double>& v, const char* name) {
      if (v.empty()) throw DomainError(std::string("TuningGrid: ") + name + " is empty");
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(v[i] > 0.0) || !std::isfinite(v[i])) throw DomainError(std::string("TuningGrid: ") + name + " must be positive");
        if (i > 0 && !(v[i] < v[i - 1])) throw DomainError(std::string("TuningGrid: ") + name + " must be strictly descending");
      }
    };
    check(lambda1_values, "lambda1_values");
    check(lambda2_values, "lambda2_values");
  }
};

struct GridSpec {
  std::size_t size1 = 20;
  std::size_t size2 = 20;
  double min_ratio = 1e-3;
  // Explicit values override the data-driven range when non-empty.
  std::vector<double> lambda1_values;
  std::vector<double> lambda2_values;
};

inline double bic(const FitResult& fit, std::size_t n) {
  if (!std::isfinite(fit.log_likelihood)) throw NumericalError("bic: non-finite log-likelihood");
  return bic_value(fit.log_likelihood, model_degrees_of_freedom(fit.params, fit.family), n);
}

inline std::vector<double> log_spaced_descending(double top, double min_ratio, std::size_t count) {
  std::vector<double> v(count);
  if (count == 1) {
    v[0] = top;
    return v;
  }
  const double span = std::log(min_ratio);
  for (std::size_t i = 0; i < count; ++i)
    v[i] = top * std::exp(span * static_cast<double>(i) / static_cast<double>(count - 1));
  return v;
}

struct LambdaMax {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
};

/// Smallest tuning values that zero every penalized parameter from the
/// initial point. For beta: |score_j| <= n lambda1 rho1_j at beta = 0 with the
/// intercept re-optimized. For omega: the truncation condition
/// G_j <= n lambda2 rho2_j omega_j, capped so the omega step's Lagrange
/// multiplier stays negative (lambda2 < 1 / sum rho2 omega).
inline LambdaMax lambda_max(const Dataset& data, const CandidateSet& k, const Initialization& init,
                            Family family = Family::NegativeBinomial) {
  const double n = static_cast<double>(data.n());
  const Responsibilities resp = e_step(data, init.params, k);
  const auto& w = resp.nb_weights();
  const double phi = family == Family::Poisson ? 0.0 : init.params.phi();

  // weighted intercept-only fit
  double alpha = init.params.alpha();
  for (int it = 0; it < 100; ++it) {
    const double mu = mean_from_eta(alpha);
    double g = 0.0, h = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i) {
      const auto d = nb_eta_derivatives(data.y(i), mu, phi);
      g += w[i] * d.score;
      h -= w[i] * d.curvature;
    }
    if (!(h > 0.0)) break;
    const double step = std::clamp(g / h, -5.0, 5.0);
    alpha = std::clamp(alpha + step, -kEtaClamp, kEtaClamp);
    if (std::abs(step) < 1e-12) break;
  }
  LambdaMax out;
  double l1 = 0.0;
  const double mu = mean_from_eta(alpha);
  for (std::size_t j = 0; j < data.p(); ++j) {
    double g = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i)
      g += w[i] * nb_eta_derivatives(data.y(i), mu, phi).score * data.x()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    l1 = std::max(l1, std::abs(g) / (n * init.rho1[static_cast<Eigen::Index>(j)]));
  }
  out.lambda1 = l1 > 0.0 ? l1 : 1.0;

  if (!k.empty()) {
    const Eigen::VectorXd g = resp.column_sums();
    double l2 = 0.0;
    for (std::size_t j = 0; j < k.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      l2 = std::max(l2, g[jj] / (n * init.rho2[jj] * init.params.omega()[jj]));
    }
    const double cap = 1.0 / weighted_inflation_mass(init.params.omega(), init.penalty(0.0, 0.0));
    out.lambda2 = std::min(l2, cap);
    if (!(out.lambda2 > 0.0)) out.lambda2 = cap;
  }
  return out;
}

inline TuningGrid default_grid(const Dataset& data, const CandidateSet& k, const Initialization& init,
                               const GridSpec& spec = {}, Family family = Family::NegativeBinomial) {
  TuningGrid grid;
  if (spec.lambda1_values.empty() || spec.lambda2_values.empty()) {
    const LambdaMax top = lambda_max(data, k, init, family);
    grid.lambda1_values = log_spaced_descending(top.lambda1, spec.min_ratio, spec.size1);
    grid.lambda2_values = log_spaced_descending(top.lambda2, spec.min_ratio, spec.size2);
  }
  if (!spec.lambda1_values.empty()) grid.lambda1_values = spec.lambda1_values;
  if (!spec.lambda2_values.empty()) grid.lambda2_values = spec.lambda2_values;
  grid.validate();
  return grid;
}

struct TunedFit {
  FitResult best;
  TuningGrid grid;
  Eigen::MatrixXd bic_surface;  // rows: lambda1 values, columns: lambda2 values
  Eigen::MatrixXi nonzero_beta;
  Eigen::MatrixXi nonzero_omega;
  std::size_t best_row = 0;
  std::size_t best_col = 0;
  double chosen_lambda1 = 0.0;
  double chosen_lambda2 = 0.0;
  int failed_cells = 0;
  long total_iterations = 0;  // EM iterations summed over cells
  double max_descent = 0.0;  // worst objective drop over every cell's trace
};

struct TuneOptions {
  bool warm_start = true;
  std::size_t threads = default_thread_count();
};

/// Fits every cell, walking each lambda1 column from the largest value down;
/// columns run concurrently. A cell starts from the previous cell's
/// (alpha, beta, phi) and the initial omega. The BIC minimizer wins, ties
/// going to the larger (lambda1, lambda2).
inline TunedFit tune(const Dataset& data, const CandidateSet& k, const TuningGrid& grid, const EmOptions& opts,
                     const Initialization& init, const TuneOptions& topts = {}) {
  grid.validate();
  const std::size_t rows = grid.lambda1_values.size();
  const std::size_t cols = grid.lambda2_values.size();
  std::vector<std::optional<FitResult>> cells(rows * cols);

  parallel_for(
      cols,
      [&](std::size_t c) {
        std::optional<ModelParams> warm;
        for (std::size_t r = 0; r < rows; ++r) {
          const PenaltyConfig pen = init.penalty(grid.lambda1_values[r], grid.lambda2_values[c]);
          try {
            FitResult f = fit(data, k, pen, opts, topts.warm_start && warm ? *warm : init.params);
            warm = f.params.with_omega(init.params.omega());
            cells[r * cols + c] = std::move(f);
          } catch (const std::exception&) {
            warm.reset();
          }
        }
      },
      topts.threads);

  TunedFit out;
  out.grid = grid;
  out.bic_surface = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                                              std::numeric_limits<double>::infinity());
  out.nonzero_beta = Eigen::MatrixXi::Constant(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols), -1);
  out.nonzero_omega = out.nonzero_beta;
  std::optional<std::size_t> best;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const auto& cell = cells[r * cols + c];
      const auto ri = static_cast<Eigen::Index>(r), ci = static_cast<Eigen::Index>(c);
      if (!cell) {
        ++out.failed_cells;
        continue;
      }
      out.max_descent = std::max(out.max_descent, cell->trace.max_descent());
      out.total_iterations += cell->trace.iters;
      out.nonzero_beta(ri, ci) = static_cast<int>(std::count(cell->selected_covariates.begin(), cell->selected_covariates.end(), true));
      out.nonzero_omega(ri, ci) = static_cast<int>(std::count(cell->selected_values.begin(), cell->selected_values.end(), true));
      if (!cell->converged() || !std::isfinite(cell->bic)) {
        ++out.failed_cells;
        continue;
      }
      out.bic_surface(ri, ci) = cell->bic;
      if (!best || cell->bic < out.bic_surface(static_cast<Eigen::Index>(*best / cols), static_cast<Eigen::Index>(*best % cols)))
        best = r * cols + c;
    }
  }
  if (!best) throw NumericalError("tune: no grid cell produced a converged fit");
  out.best_row = *best / cols;
  out.best_col = *best % cols;
  out.best = std::move(*cells[*best]);
  out.chosen_lambda1 = grid.lambda1_values[out.best_row];
  out.chosen_lambda2 = grid.lambda2_values[out.best_col];
  return out;
}

}  // namespace minb
