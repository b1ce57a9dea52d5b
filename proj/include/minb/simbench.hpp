#pragma once

// Simulation scenarios, data generation and the replicate harness.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <type_traits>
#include <vector>

#include "minb/em_solver.hpp"
#include "minb/error.hpp"
#include "minb/glm.hpp"
#include "minb/model.hpp"
#include "minb/parallel.hpp"
#include "minb/rng.hpp"
#include "minb/tuning.hpp"

namespace minb {

struct Scenario {
  int id = 0;  // 0 for custom scenarios
  Family family = Family::NegativeBinomial;
  double alpha = -2.0;
  std::vector<double> beta;
  double phi = 1.0;
  std::vector<Count> inflated_values;
  std::vector<double> inflated_props;
  std::size_t n = 500;
  std::size_t p = 15;
  double covariate_sd = 0.5;

  void validate() const {
    if (n < 1) throw DomainError("Scenario: n must be positive");
    if (beta.size() != p) throw DimensionError("Scenario: beta length differs from p");
    if (inflated_values.size() != inflated_props.size())
      throw DimensionError("Scenario: inflated values and proportions differ in length");
    double s = 0.0;
    for (double w : inflated_props) {
      if (!(w >= 0.0)) throw DomainError("Scenario: inflated proportions must be non-negative");
      s += w;
    }
    if (!(s < 1.0)) throw DomainError("Scenario: inflated proportions must sum below 1");
    for (std::size_t j = 1; j < inflated_values.size(); ++j)
      if (!(inflated_values[j] > inflated_values[j - 1]))
        throw DomainError("Scenario: inflated values must be strictly ascending");
    if (!inflated_values.empty() && inflated_values.front() < 0) throw DomainError("Scenario: inflated values must be non-negative");
    if (family == Family::NegativeBinomial && !(phi >= 0.0)) throw DomainError("Scenario: phi must be non-negative");
    if (!(covariate_sd > 0.0)) throw DomainError("Scenario: covariate_sd must be positive");
    if (!std::isfinite(alpha)) throw DomainError("Scenario: alpha must be finite");
  }

  double true_phi() const { return family == Family::Poisson ? 0.0 : phi; }
};

/// The fifteen built-in settings. 9-14 repeat 3-8 with a Poisson
/// response; 15 is Poisson without inflation.
inline Scenario builtin_scenario(int id, std::size_t n) {
  if (id < 1 || id > 15) throw DomainError("builtin_scenario: id must be in 1..15");
  const std::vector<double> beta_base{3, 1, -0.5, 2, -2, 2, 1, -1, 0.5, -0.5, 0, 0, 0, 0, 0};
  const std::vector<double> beta_strong{3, 1, 0.5, 2, -2, 2, -2, 1, 1, 0, 0, 0, 0, 0, 0};
  const std::vector<double> beta_dense{3, 1, -0.5, 2, -2, 2, 1, -1, 0.5, -0.5, 1, 1, 1, 1, 1};
  const std::vector<Count> k_base{0, 1, 3, 5, 10};

  Scenario s;
  s.id = id;
  s.n = n;
  s.beta = beta_base;
  s.inflated_values = k_base;
  s.inflated_props = {0.3, 0.05, 0.05, 0.01, 0.01};
  const int shape = id >= 9 && id <= 14 ? id - 6 : id;
  switch (shape) {
    case 1: break;
    case 2: s.phi = 0.5; break;
    case 3: s.phi = 2.0; break;
    case 4: s.inflated_props = {0.5, 0.1, 0.1, 0.02, 0.02}; break;
    case 5:
      s.inflated_values = {0, 1, 3};
      s.inflated_props = {0.3, 0.1, 0.1};
      break;
    case 6: s.beta = beta_strong; break;
    case 7: s.beta = beta_dense; break;
    case 8:
      s.inflated_values = {0};
      s.inflated_props = {0.45};
      break;
    case 15:
      s.inflated_values.clear();
      s.inflated_props.clear();
      break;
    default: break;
  }
  if (id >= 9) {
    s.family = Family::Poisson;
    s.phi = 0.0;
  }
  return s;
}

struct Truth {
  ModelParams params;
  CandidateSet candidates;
};

inline Truth scenario_truth(const Scenario& scn) {
  scn.validate();
  Eigen::VectorXd omega(static_cast<Eigen::Index>(scn.inflated_props.size()) + 1);
  double s = 0.0;
  for (std::size_t j = 0; j < scn.inflated_props.size(); ++j) {
    omega[static_cast<Eigen::Index>(j)] = scn.inflated_props[j];
    s += scn.inflated_props[j];
  }
  omega[omega.size() - 1] = 1.0 - s;
  const Eigen::VectorXd beta = Eigen::Map<const Eigen::VectorXd>(scn.beta.data(), static_cast<Eigen::Index>(scn.beta.size()));
  return {ModelParams(scn.true_phi(), scn.alpha, beta, omega), CandidateSet(scn.inflated_values)};
}

struct Simulated {
  Dataset data;
  Truth truth;
};

/// Draws n observations: covariate row, then the mixture component, then the
/// count. With `covariates` set, rows are resampled uniformly from it instead
/// of drawn from N(0, covariate_sd^2).
inline Simulated generate(const Scenario& scn, std::uint64_t seed, std::uint64_t stream = 0,
                          const Eigen::MatrixXd* covariates = nullptr) {
  Truth truth = scenario_truth(scn);
  if (covariates && static_cast<std::size_t>(covariates->cols()) != scn.p)
    throw DimensionError("generate: covariate matrix width differs from p");
  if (covariates && covariates->rows() == 0) throw DimensionError("generate: covariate matrix is empty");
  Rng rng(seed, stream);
  const auto p = static_cast<Eigen::Index>(scn.p);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(scn.n), p);
  std::vector<Count> y(scn.n);
  const double phi = scn.true_phi();
  for (std::size_t i = 0; i < scn.n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (covariates) {
      const auto rows = static_cast<std::uint64_t>(covariates->rows());
      x.row(ii) = covariates->row(static_cast<Eigen::Index>(rng.next() % rows));
    } else {
      for (Eigen::Index j = 0; j < p; ++j) x(ii, j) = rng.normal(0.0, scn.covariate_sd);
    }
    const double u = rng.uniform();
    double cum = 0.0;
    std::optional<Count> inflated;
    for (std::size_t j = 0; j < scn.inflated_props.size(); ++j) {
      cum += scn.inflated_props[j];
      if (u < cum) {
        inflated = scn.inflated_values[j];
        break;
      }
    }
    if (inflated) {
      y[i] = *inflated;
    } else {
      const double mu = mean_from_eta(truth.params.linear_predictor(x.row(ii)));
      y[i] = rng.negative_binomial(mu, phi);
    }
  }
  return {Dataset(std::move(y), std::move(x)), std::move(truth)};
}

struct MetricsRow {
  double rsse_c = 0.0;
  double tpr_c = 0.0;
  double fpr_c = 0.0;
  double rsse_i = 0.0;
  double tpr_i = 0.0;
  double fpr_i = 0.0;
  double ae_d = 0.0;

  static constexpr std::size_t kCount = 7;
  static const std::array<const char*, kCount>& names() {
    static const std::array<const char*, kCount> n{"RSSE:C", "TPR:C", "FPR:C", "RSSE:I", "TPR:I", "FPR:I", "AE:D"};
    return n;
  }
  std::array<double, kCount> values() const { return {rsse_c, tpr_c, fpr_c, rsse_i, tpr_i, fpr_i, ae_d}; }
};

namespace detail {

// TPR and FPR of an estimated support; NaN when a denominator is zero.
inline std::pair<double, double> support_rates(const std::vector<bool>& truth, const std::vector<bool>& est) {
  std::size_t tp = 0, pos = 0, fp = 0, neg = 0;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    if (truth[j]) {
      ++pos;
      if (est[j]) ++tp;
    } else {
      ++neg;
      if (est[j]) ++fp;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {pos ? static_cast<double>(tp) / static_cast<double>(pos) : nan,
          neg ? static_cast<double>(fp) / static_cast<double>(neg) : nan};
}

}  // namespace detail

/// Metrics of an estimate against the truth. Inflation metrics are taken over
/// the union of both candidate sets, absent entries counting as zero. Rates
/// with an empty reference class are NaN.
inline MetricsRow evaluate(const ModelParams& est, const CandidateSet& est_k, const ModelParams& truth,
                           const CandidateSet& truth_k, double selection_threshold = kSelectionThreshold) {
  if (est.p() != truth.p()) throw DimensionError("evaluate: coefficient dimensions differ");
  MetricsRow m;
  double ss = std::pow(est.alpha() - truth.alpha(), 2);
  std::vector<bool> tb(est.p()), eb(est.p());
  for (std::size_t j = 0; j < est.p(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    ss += std::pow(est.beta()[jj] - truth.beta()[jj], 2);
    tb[j] = std::abs(truth.beta()[jj]) > selection_threshold;
    eb[j] = std::abs(est.beta()[jj]) > selection_threshold;
  }
  m.rsse_c = std::sqrt(ss);
  std::tie(m.tpr_c, m.fpr_c) = detail::support_rates(tb, eb);

  std::map<Count, std::pair<double, double>> merged;  // value -> (estimate, truth)
  for (std::size_t j = 0; j < est_k.size(); ++j) merged[est_k[j]].first = est.omega()[static_cast<Eigen::Index>(j)];
  for (std::size_t j = 0; j < truth_k.size(); ++j) merged[truth_k[j]].second = truth.omega()[static_cast<Eigen::Index>(j)];
  double si = 0.0;
  std::vector<bool> ti, ei;
  for (const auto& [value, pair] : merged) {
    si += std::pow(pair.first - pair.second, 2);
    ti.push_back(pair.second > selection_threshold);
    ei.push_back(pair.first > selection_threshold);
  }
  m.rsse_i = std::sqrt(si);
  std::tie(m.tpr_i, m.fpr_i) = detail::support_rates(ti, ei);
  m.ae_d = std::abs(est.phi() - truth.phi());
  return m;
}

inline MetricsRow evaluate(const FitResult& fit, const Truth& truth) {
  return evaluate(fit.params, fit.candidates, truth.params, truth.candidates);
}

struct MetricSummary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  std::size_t count = 0;  // replicates where the metric was defined
};

/// Mean and sample SD over the finite entries; a single entry has SD 0.
inline MetricSummary summarize_metric(const std::vector<double>& v) {
  MetricSummary s;
  double sum = 0.0;
  for (double x : v)
    if (std::isfinite(x)) {
      sum += x;
      ++s.count;
    }
  if (s.count == 0) return s;
  s.mean = sum / static_cast<double>(s.count);
  double ss = 0.0;
  for (double x : v)
    if (std::isfinite(x)) ss += (x - s.mean) * (x - s.mean);
  s.sd = s.count > 1 ? std::sqrt(ss / static_cast<double>(s.count - 1)) : 0.0;
  return s;
}

enum class FitModel { Minb, Nb, Poisson };

struct ReplicateConfig {
  GridSpec grid;
  EmOptions em;
  FitModel model = FitModel::Minb;
  std::size_t candidate_min_count = 1;
  std::optional<std::vector<Count>> candidate_values;  // replaces the data-driven set when present
  OmegaWeightRule omega_weights = OmegaWeightRule::Frequency;
  bool standardize = false;  // fit on centered, unit-variance covariates; estimates reported on the raw scale
  std::size_t threads = default_thread_count();  // replicate workers
  std::size_t grid_threads = 1;                  // tuning-grid workers inside one fit
  const Eigen::MatrixXd* covariates = nullptr;
};

struct ReplicateResult {
  std::size_t index = 0;
  bool ok = false;
  std::string error;
  MetricsRow metrics;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  std::size_t grid_row = 0;
  std::size_t grid_col = 0;
  bool interior = false;  // chosen cell off every grid edge
  int iterations = 0;
  double max_descent = 0.0;
};

struct ReplicateSummary {
  Scenario scenario;
  std::uint64_t seed = 0;
  std::vector<ReplicateResult> replicates;
  std::array<MetricSummary, MetricsRow::kCount> metrics;
  std::size_t failures = 0;
};

namespace detail {

inline TunedFit fit_model_unscaled(const Dataset& data, const ReplicateConfig& cfg) {
  if (cfg.model == FitModel::Minb) {
    const CandidateSet k = cfg.candidate_values ? CandidateSet(*cfg.candidate_values)
                                                : CandidateSet::from_data(data, cfg.candidate_min_count);
    const Initialization init = initialize(data, k, cfg.em.family, cfg.omega_weights);
    const TuningGrid grid = default_grid(data, k, init, cfg.grid, cfg.em.family);
    return tune(data, k, grid, cfg.em, init, {true, cfg.grid_threads});
  }
  EmOptions em = cfg.em;
  em.family = cfg.model == FitModel::Poisson ? Family::Poisson : Family::NegativeBinomial;
  const CandidateSet empty;
  const Initialization init = initialize(data, empty, em.family);
  const PenaltyConfig pen = init.penalty(0.0, 0.0);
  TunedFit t;
  t.best = fit(data, empty, pen, em, init.params);
  t.bic_surface = Eigen::MatrixXd::Constant(1, 1, t.best.bic);
  t.nonzero_beta = Eigen::MatrixXi::Constant(1, 1, static_cast<int>(std::count(t.best.selected_covariates.begin(), t.best.selected_covariates.end(), true)));
  t.nonzero_omega = Eigen::MatrixXi::Zero(1, 1);
  t.max_descent = t.best.trace.max_descent();
  return t;
}

}  // namespace detail

/// Fits one dataset with the configured model: BIC-tuned MINB, or the
/// unpenalized NB / Poisson regression without inflation.
inline TunedFit fit_model(const Dataset& data, const ReplicateConfig& cfg) {
  if (!cfg.standardize || data.p() == 0) return detail::fit_model_unscaled(data, cfg);
  const Standardization st = Standardization::of(data);
  TunedFit t = detail::fit_model_unscaled(st.apply(data), cfg);
  const auto [alpha, beta] = st.to_raw(t.best.params.alpha(), t.best.params.beta());
  t.best.params = t.best.params.with_coefficients(alpha, beta);
  return t;
}

/// Generate -> fit -> evaluate for each replicate r on stream r of `seed`.
/// Replicates run concurrently; failures are recorded and excluded from the
/// metric summaries.
inline ReplicateSummary run_replicates(const Scenario& scn, std::size_t reps, std::uint64_t seed,
                                       const ReplicateConfig& cfg) {
  if (reps < 1) throw DomainError("run_replicates: reps must be positive");
  scn.validate();
  ReplicateSummary out;
  out.scenario = scn;
  out.seed = seed;
  out.replicates.resize(reps);
  parallel_for(
      reps,
      [&](std::size_t r) {
        ReplicateResult& res = out.replicates[r];
        res.index = r;
        try {
          const Simulated sim = generate(scn, seed, r, cfg.covariates);
          const TunedFit tf = fit_model(sim.data, cfg);
          res.metrics = evaluate(tf.best, sim.truth);
          res.lambda1 = tf.chosen_lambda1;
          res.lambda2 = tf.chosen_lambda2;
          const auto rows = static_cast<std::size_t>(tf.bic_surface.rows());
          const auto cols = static_cast<std::size_t>(tf.bic_surface.cols());
          res.grid_row = tf.best_row;
          res.grid_col = tf.best_col;
          res.interior = tf.best_row > 0 && tf.best_row + 1 < rows && tf.best_col > 0 && tf.best_col + 1 < cols;
          res.iterations = tf.best.trace.iters;
          res.max_descent = tf.max_descent;
          res.ok = true;
        } catch (const std::exception& e) {
          res.error = e.what();
        }
      },
      cfg.threads);

  std::array<std::vector<double>, MetricsRow::kCount> cols;
  for (const auto& r : out.replicates) {
    if (!r.ok) {
      ++out.failures;
      continue;
    }
    const auto v = r.metrics.values();
    for (std::size_t c = 0; c < MetricsRow::kCount; ++c) cols[c].push_back(v[c]);
  }
  for (std::size_t c = 0; c < MetricsRow::kCount; ++c) out.metrics[c] = summarize_metric(cols[c]);
  return out;
}

struct Table1Result {
  double rate = 0.0;
  std::size_t reps = 0;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Vector3d sd = Eigen::Vector3d::Zero();
  std::size_t failures = 0;
};

inline constexpr std::size_t kTable1N = 1000;

/// Poisson regression without intercept on three N(0,1) covariates with
/// beta = (-2, -5, 1), a fraction `rate` of the responses replaced by equal
/// inflation on {0, 1, 10, 20}; reports the mean plain-Poisson estimates.
inline Table1Result table1_demo(double rate, std::size_t reps, std::uint64_t seed,
                                std::size_t threads = default_thread_count()) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw DomainError("table1_demo: rate must be in [0, 1]");
  if (reps < 1) throw DomainError("table1_demo: reps must be positive");
  const std::array<Count, 4> values{0, 1, 10, 20};
  const Eigen::Vector3d beta(-2.0, -5.0, 1.0);
  std::vector<std::optional<Eigen::Vector3d>> est(reps);
  parallel_for(
      reps,
      [&](std::size_t r) {
        Rng rng(seed, r);
        Eigen::MatrixXd x(static_cast<Eigen::Index>(kTable1N), 3);
        std::vector<Count> y(kTable1N);
        for (std::size_t i = 0; i < kTable1N; ++i) {
          const auto ii = static_cast<Eigen::Index>(i);
          for (Eigen::Index j = 0; j < 3; ++j) x(ii, j) = rng.normal();
          const double u = rng.uniform();
          if (u < rate) {
            y[i] = values[std::min<std::size_t>(static_cast<std::size_t>(u / rate * 4.0), 3)];
          } else {
            y[i] = rng.poisson(mean_from_eta(x.row(ii).dot(beta)));
          }
        }
        GlmOptions g;
        g.family = Family::Poisson;
        g.intercept = false;
        const GlmFit f = fit_glm(Dataset(std::move(y), std::move(x)), g);
        if (f.beta.allFinite()) est[r] = f.beta;
      },
      threads);
  Table1Result out;
  out.rate = rate;
  out.reps = reps;
  std::array<std::vector<double>, 3> cols;
  for (const auto& e : est) {
    if (!e) {
      ++out.failures;
      continue;
    }
    for (int j = 0; j < 3; ++j) cols[static_cast<std::size_t>(j)].push_back((*e)[j]);
  }
  for (int j = 0; j < 3; ++j) {
    const auto s = summarize_metric(cols[static_cast<std::size_t>(j)]);
    out.mean[j] = s.mean;
    out.sd[j] = s.sd;
  }
  return out;
}

// ---- scenario files: one "key = value" per line, lists comma-separated ----

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
std::string join_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>)
      s += format_double(v[i]);
    else
      s += std::to_string(v[i]);
  }
  return s;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& text, std::size_t line) {
  const std::string t = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ParseError("invalid number '" + t + "'", line, 0);
  return v;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, std::size_t line) {
  std::vector<T> out;
  const std::string t = trim(text);
  if (t.empty()) return out;
  std::stringstream ss(t);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(item, line));
  return out;
}

}  // namespace detail

inline void write_scenario(std::ostream& os, const Scenario& s) {
  os << "id = " << s.id << "\n"
     << "family = " << (s.family == Family::Poisson ? "poisson" : "nb") << "\n"
     << "alpha = " << detail::format_double(s.alpha) << "\n"
     << "beta = " << detail::join_list(s.beta) << "\n"
     << "phi = " << detail::format_double(s.phi) << "\n"
     << "inflated_values = " << detail::join_list(s.inflated_values) << "\n"
     << "inflated_props = " << detail::join_list(s.inflated_props) << "\n"
     << "n = " << s.n << "\n"
     << "p = " << s.p << "\n"
     << "covariate_sd = " << detail::format_double(s.covariate_sd) << "\n";
}

inline Scenario parse_scenario(std::istream& is) {
  Scenario s;
  s.beta.clear();
  s.inflated_values.clear();
  s.inflated_props.clear();
  bool have_p = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno, 0);
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string val = t.substr(eq + 1);
    if (key == "id") s.id = detail::parse_number<int>(val, lineno);
    else if (key == "family") {
      const std::string f = detail::trim(val);
      if (f == "nb") s.family = Family::NegativeBinomial;
      else if (f == "poisson") s.family = Family::Poisson;
      else throw ParseError("unknown family '" + f + "'", lineno, 0);
    } else if (key == "alpha") s.alpha = detail::parse_number<double>(val, lineno);
    else if (key == "beta") s.beta = detail::parse_list<double>(val, lineno);
    else if (key == "phi") s.phi = detail::parse_number<double>(val, lineno);
    else if (key == "inflated_values") s.inflated_values = detail::parse_list<Count>(val, lineno);
    else if (key == "inflated_props") s.inflated_props = detail::parse_list<double>(val, lineno);
    else if (key == "n") s.n = detail::parse_number<std::size_t>(val, lineno);
    else if (key == "p") {
      s.p = detail::parse_number<std::size_t>(val, lineno);
      have_p = true;
    } else if (key == "covariate_sd") s.covariate_sd = detail::parse_number<double>(val, lineno);
    else throw ParseError("unknown key '" + key + "'", lineno, 0);
  }
  if (!have_p) s.p = s.beta.size();
  s.validate();
  return s;
}

inline Scenario read_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file '" + path + "'");
  return parse_scenario(in);
}

}  // namespace minb
