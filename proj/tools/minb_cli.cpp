// minb: fit, simulate and diagnose multiple-inflated negative binomial models.
//
// Every output carries the tool version, the seed, the input checksum and the
// fully resolved option set; `minb replay FILE` re-runs the command recorded
// in FILE. Worker threads come from MINB_THREADS and never change results.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "minb/minb.hpp"

namespace {

enum ExitCode : int { kOk = 0, kUsage = 1, kInput = 2, kNumerical = 3, kNotConverged = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw minb::IoError("cannot read '" + path + "' for checksum");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw minb::IoError("sha256 unavailable");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

// ---- option values shared by the subcommands ----

struct Options {
  std::uint64_t seed = 1;
  std::string input, output, fit_a, fit_b, scenario_file, covariates, replicates_out, scenario_out;
  int scenario = 0;
  std::size_t n = 0;  // 0: the scenario's own size
  std::size_t reps = 20;
  std::string grid_l1 = "20", grid_l2 = "20";
  double min_ratio = 1e-3;
  std::string candidates = "auto";
  int max_iters = 1000;
  double tol = 1e-3;
  std::string model = "minb", family = "nb", omega_weights = "frequency";
  bool standardize = false;
  std::string rates = "0,0.2,0.4,0.8";
  long y_max = -1;
};

/// Resolved options in flag order; each key is a long flag name.
struct Echo {
  std::string command;
  minb::KeyValues config;

  void add(const std::string& key, const std::string& value) { config.emplace_back(key, value); }
  void add(const std::string& key, double v) { add(key, minb::format_exact(v)); }
  template <typename T>
    requires std::is_integral_v<T>
  void add(const std::string& key, T v) { add(key, std::to_string(v)); }
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

/// "N" gives N log-spaced values; anything else is a comma-separated list.
void parse_grid_axis(const std::string& text, const char* flag, std::size_t& size, std::vector<double>& values) {
  if (all_digits(text)) {
    size = std::stoul(text);
    if (size < 1) throw UsageError(std::string(flag) + ": grid size must be at least 1");
    return;
  }
  try {
    for (const auto& item : split(text, ',')) values.push_back(minb::parse_double(item));
  } catch (const minb::ParseError&) {
    throw UsageError(std::string(flag) + ": expected a size or a comma-separated list of values");
  }
  size = values.size();
}

minb::ReplicateConfig make_config(const Options& o) {
  minb::ReplicateConfig cfg;
  parse_grid_axis(o.grid_l1, "--grid-l1", cfg.grid.size1, cfg.grid.lambda1_values);
  parse_grid_axis(o.grid_l2, "--grid-l2", cfg.grid.size2, cfg.grid.lambda2_values);
  if (!(o.min_ratio > 0.0 && o.min_ratio < 1.0)) throw UsageError("--min-ratio must lie in (0, 1)");
  cfg.grid.min_ratio = o.min_ratio;
  if (o.max_iters < 1) throw UsageError("--max-iters must be positive");
  if (!(o.tol > 0.0)) throw UsageError("--tol must be positive");
  cfg.em.max_iters = o.max_iters;
  cfg.em.rel_tol = o.tol;
  cfg.em.family = o.family == "poisson" ? minb::Family::Poisson : minb::Family::NegativeBinomial;
  cfg.model = o.model == "nb" ? minb::FitModel::Nb : o.model == "poisson" ? minb::FitModel::Poisson : minb::FitModel::Minb;
  cfg.omega_weights = o.omega_weights == "initial" ? minb::OmegaWeightRule::InitialOmega : minb::OmegaWeightRule::Frequency;
  cfg.standardize = o.standardize;

  const std::string& c = o.candidates;
  if (c == "auto") {
    cfg.candidate_min_count = 1;
  } else if (c.rfind("min-count:", 0) == 0) {
    const std::string v = c.substr(10);
    if (!all_digits(v) || std::stoul(v) < 1) throw UsageError("--candidates min-count:N needs a positive integer");
    cfg.candidate_min_count = std::stoul(v);
  } else {
    std::vector<minb::Count> values;
    for (const auto& item : split(c, ',')) {
      if (!all_digits(item)) throw UsageError("--candidates: expected auto, min-count:N or a list of counts");
      values.push_back(static_cast<minb::Count>(std::stol(item)));
    }
    std::sort(values.begin(), values.end());
    if (std::adjacent_find(values.begin(), values.end()) != values.end())
      throw UsageError("--candidates: repeated value");
    cfg.candidate_values = values;
  }
  return cfg;
}

void echo_fitting(Echo& e, const Options& o) {
  e.add("grid-l1", o.grid_l1);
  e.add("grid-l2", o.grid_l2);
  e.add("min-ratio", o.min_ratio);
  e.add("candidates", o.candidates);
  e.add("max-iters", o.max_iters);
  e.add("tol", o.tol);
  e.add("model", o.model);
  e.add("family", o.family);
  e.add("omega-weights", o.omega_weights);
  e.add("standardize", std::string(o.standardize ? "true" : "false"));
}

void add_fitting_options(CLI::App* sub, Options& o) {
  sub->add_option("--grid-l1", o.grid_l1, "lambda1 grid: a size, or comma-separated values in descending order")->capture_default_str();
  sub->add_option("--grid-l2", o.grid_l2, "lambda2 grid: a size, or comma-separated values in descending order")->capture_default_str();
  sub->add_option("--min-ratio", o.min_ratio, "smallest grid value as a fraction of the largest")->capture_default_str();
  sub->add_option("--candidates", o.candidates, "candidate inflated values: auto, min-count:N, or a comma-separated list")->capture_default_str();
  sub->add_option("--max-iters", o.max_iters, "EM iteration limit per fit")->capture_default_str();
  sub->add_option("--tol", o.tol, "relative objective change that stops EM")->capture_default_str();
  sub->add_option("--model", o.model, "minb, or the unpenalized nb / poisson regression")
      ->check(CLI::IsMember({"minb", "nb", "poisson"}))
      ->capture_default_str();
  sub->add_option("--family", o.family, "count component of the MINB model")
      ->check(CLI::IsMember({"nb", "poisson"}))
      ->capture_default_str();
  sub->add_option("--omega-weights", o.omega_weights, "adaptive weights for the inflation penalty")
      ->check(CLI::IsMember({"frequency", "initial"}))
      ->capture_default_str();
  sub->add_flag("--standardize", o.standardize, "fit on standardized covariates");
}

void add_scenario_options(CLI::App* sub, Options& o) {
  auto* id = sub->add_option("--scenario", o.scenario, "built-in scenario id")->check(CLI::Range(1, 15));
  auto* file = sub->add_option("--scenario-file", o.scenario_file, "custom scenario file")->check(CLI::ExistingFile);
  id->excludes(file);
  sub->add_option("--n", o.n, "sample size (default: the scenario's)");
  sub->add_option("--covariates", o.covariates, "dataset CSV whose covariate rows are resampled")->check(CLI::ExistingFile);
}

minb::Scenario resolve_scenario(const Options& o) {
  if (o.scenario == 0 && o.scenario_file.empty()) throw UsageError("need --scenario or --scenario-file");
  minb::Scenario s = o.scenario_file.empty() ? minb::builtin_scenario(o.scenario, o.n ? o.n : 500)
                                             : minb::read_scenario(o.scenario_file);
  if (o.n) s.n = o.n;
  s.validate();
  return s;
}

void echo_scenario(Echo& e, const Options& o, const minb::Scenario& s) {
  if (o.scenario_file.empty()) e.add("scenario", o.scenario);
  else e.add("scenario-file", o.scenario_file);
  e.add("n", s.n);
  if (!o.covariates.empty()) e.add("covariates", o.covariates);
}

std::string scenario_checksum(const Options& o) {
  std::string sum = o.scenario_file.empty() ? "builtin" : sha256_file(o.scenario_file);
  if (!o.covariates.empty()) sum += "," + sha256_file(o.covariates);
  return sum;
}

/// "# key = value" header shared by every CSV output.
std::string csv_preamble(const Echo& e, std::uint64_t seed, const std::string& checksum) {
  std::ostringstream os;
  os << "# minb " << minb::kToolVersion << "\n"
     << "# command = " << e.command << "\n"
     << "# seed = " << seed << "\n"
     << "# input_sha256 = " << checksum << "\n";
  for (const auto& [k, v] : e.config) os << "# config." << k << " = " << v << "\n";
  return os.str();
}

void check_output_path(const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) throw minb::IoError("output directory '" + parent.string() + "' does not exist");
}

std::string csv(double v) { return minb::format_sig(v); }

// ---- commands ----

int cmd_fit(const Options& o, const Echo& e) {
  const minb::ReplicateConfig base = make_config(o);
  check_output_path(o.output);
  const std::string checksum = sha256_file(o.input);
  const minb::LabeledDataset ld = minb::read_dataset_csv(o.input);
  minb::ReplicateConfig cfg = base;
  cfg.grid_threads = minb::default_thread_count();
  const minb::TunedFit t = minb::fit_model(ld.data, cfg);

  minb::FitArtifact a;
  a.meta = {{"format", minb::kArtifactFormat},
            {"tool_version", minb::kToolVersion},
            {"command", e.command},
            {"seed", std::to_string(o.seed)},
            {"input_sha256", checksum},
            {"grid_row", std::to_string(t.best_row)},
            {"grid_col", std::to_string(t.best_col)},
            {"failed_cells", std::to_string(t.failed_cells)}};
  a.config = e.config;
  a.fit = t.best;
  a.covariate_names = ld.covariate_names;
  a.bic_surface = t.bic_surface;
  a.nonzero_beta = t.nonzero_beta;
  a.nonzero_omega = t.nonzero_omega;
  a.grid = t.grid;
  minb::write_file_atomic(o.output, minb::write_fit_artifact(a));

  const minb::FitResult& f = t.best;
  std::cout << "model: " << o.model << "  n = " << f.n << "  p = " << f.params.p() << "\n"
            << "lambda1 = " << csv(f.lambda1) << "  lambda2 = " << csv(f.lambda2) << "\n"
            << "log-likelihood = " << csv(f.log_likelihood) << "  BIC = " << csv(f.bic) << "  df = " << f.df << "\n"
            << "EM iterations = " << f.trace.iters << (f.converged() ? "" : " (not converged)") << "\n"
            << "phi = " << csv(f.params.phi()) << "  alpha = " << csv(f.params.alpha())
            << "  NB weight = " << csv(f.params.nb_weight()) << "\n"
            << "selected inflated values:";
  bool any = false;
  for (std::size_t j = 0; j < f.candidates.size(); ++j)
    if (f.selected_values[j]) {
      std::cout << " " << f.candidates[j] << " (" << csv(f.params.omega()[static_cast<Eigen::Index>(j)]) << ")";
      any = true;
    }
  std::cout << (any ? "" : " none") << "\nselected covariates:";
  any = false;
  for (std::size_t j = 0; j < f.params.p(); ++j)
    if (f.selected_covariates[j]) {
      std::cout << " " << ld.covariate_names[j] << " (" << csv(f.params.beta()[static_cast<Eigen::Index>(j)]) << ")";
      any = true;
    }
  std::cout << (any ? "" : " none") << "\n";
  if (t.failed_cells > 0) std::cerr << "warning: " << t.failed_cells << " grid cells did not converge\n";
  if (!f.converged()) {
    std::cerr << "warning: the reported fit did not converge\n";
    return kNotConverged;
  }
  return kOk;
}

std::optional<Eigen::MatrixXd> load_covariates(const Options& o) {
  if (o.covariates.empty()) return std::nullopt;
  return minb::read_dataset_csv(o.covariates).data.x();
}

int cmd_simulate(const Options& o, const Echo& e) {
  minb::ReplicateConfig cfg = make_config(o);
  if (o.reps < 1) throw UsageError("--reps must be positive");
  const minb::Scenario s = resolve_scenario(o);
  check_output_path(o.output);
  if (!o.replicates_out.empty()) check_output_path(o.replicates_out);
  const std::string checksum = scenario_checksum(o);
  const auto cov = load_covariates(o);
  cfg.covariates = cov ? &*cov : nullptr;
  const minb::ReplicateSummary sum = minb::run_replicates(s, o.reps, o.seed, cfg);

  const auto& names = minb::MetricsRow::names();
  std::ostringstream os;
  os << csv_preamble(e, o.seed, checksum) << "# failures = " << sum.failures << "\nstatistic";
  for (const char* nm : names) os << "," << nm;
  os << "\n";
  const char* stats[] = {"mean", "sd", "defined"};
  for (int r = 0; r < 3; ++r) {
    os << stats[r];
    for (const auto& m : sum.metrics) os << "," << (r == 0 ? csv(m.mean) : r == 1 ? csv(m.sd) : std::to_string(m.count));
    os << "\n";
  }
  const std::string summary = os.str();

  std::string per_rep;
  if (!o.replicates_out.empty()) {
    std::ostringstream ps;
    ps << csv_preamble(e, o.seed, checksum) << "replicate,ok";
    for (const char* nm : names) ps << "," << nm;
    ps << ",lambda1,lambda2,grid_row,grid_col,iterations\n";
    for (const auto& r : sum.replicates) {
      ps << r.index << "," << (r.ok ? 1 : 0);
      for (double v : r.metrics.values()) ps << "," << (r.ok ? csv(v) : "nan");
      ps << "," << csv(r.lambda1) << "," << csv(r.lambda2) << "," << r.grid_row << "," << r.grid_col << "," << r.iterations << "\n";
    }
    per_rep = ps.str();
  }
  minb::write_file_atomic(o.output, summary);
  if (!o.replicates_out.empty()) minb::write_file_atomic(o.replicates_out, per_rep);

  for (const char* nm : names) std::cout << std::setw(14) << nm;
  std::cout << "\n";
  for (const auto& m : sum.metrics) {
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(2) << m.mean << "(" << m.sd << ")";
    std::cout << std::setw(14) << cell.str();
  }
  std::cout << "\n" << o.reps << " replicates, " << sum.failures << " failed\n";
  return sum.failures > 0 ? kNotConverged : kOk;
}

int cmd_generate(const Options& o, const Echo& e) {
  const minb::Scenario s = resolve_scenario(o);
  check_output_path(o.output);
  if (!o.scenario_out.empty()) check_output_path(o.scenario_out);
  const std::string checksum = scenario_checksum(o);
  const auto cov = load_covariates(o);
  const minb::Simulated sim = minb::generate(s, o.seed, 0, cov ? &*cov : nullptr);
  std::ostringstream os;
  os << csv_preamble(e, o.seed, checksum);
  minb::write_dataset_csv(os, sim.data);
  std::string scn;
  if (!o.scenario_out.empty()) {
    std::ostringstream ss;
    ss << csv_preamble(e, o.seed, checksum);
    minb::write_scenario(ss, s);
    scn = ss.str();
  }
  minb::write_file_atomic(o.output, os.str());
  if (!o.scenario_out.empty()) minb::write_file_atomic(o.scenario_out, scn);
  std::cout << "wrote " << sim.data.n() << " observations with " << sim.data.p() << " covariates\n";
  return kOk;
}

int cmd_table1(const Options& o, const Echo& e) {
  if (o.reps < 1) throw UsageError("--reps must be positive");
  std::vector<double> rates;
  try {
    for (const auto& item : split(o.rates, ',')) rates.push_back(minb::parse_double(item));
  } catch (const minb::ParseError&) {
    throw UsageError("--rates: expected comma-separated numbers");
  }
  for (double r : rates)
    if (!(r >= 0.0 && r <= 1.0)) throw UsageError("--rates: values must lie in [0, 1]");
  check_output_path(o.output);
  std::ostringstream os;
  os << csv_preamble(e, o.seed, "none") << "rate,reps,failures,beta1_mean,beta1_sd,beta2_mean,beta2_sd,beta3_mean,beta3_sd\n";
  std::cout << std::setw(8) << "rate" << std::setw(12) << "beta1" << std::setw(12) << "beta2" << std::setw(12) << "beta3" << "\n";
  std::cout << std::setw(8) << "truth" << std::setw(12) << -2.0 << std::setw(12) << -5.0 << std::setw(12) << 1.0 << "\n";
  std::size_t failures = 0;
  for (double r : rates) {
    const minb::Table1Result t = minb::table1_demo(r, o.reps, o.seed);
    failures += t.failures;
    os << csv(r) << "," << t.reps << "," << t.failures;
    for (int j = 0; j < 3; ++j) os << "," << csv(t.mean[j]) << "," << csv(t.sd[j]);
    os << "\n";
    std::cout << std::fixed << std::setprecision(3) << std::setw(8) << r;
    for (int j = 0; j < 3; ++j) std::cout << std::setw(12) << t.mean[j];
    std::cout << "\n";
  }
  minb::write_file_atomic(o.output, os.str());
  return failures > 0 ? kNotConverged : kOk;
}

minb::FitResult checked_fit(const minb::FitArtifact& a, const minb::Dataset& data, const std::string& path) {
  if (a.fit.params.p() != data.p())
    throw minb::DimensionError("fit '" + path + "' has " + std::to_string(a.fit.params.p()) + " covariates, the dataset " +
                               std::to_string(data.p()));
  return a.fit;
}

int cmd_diagnose(const Options& o, const Echo& e) {
  const std::string res_path = o.output + ".residuals.csv";
  const std::string sd_path = o.output + ".value_sd.csv";
  const std::string fd_path = o.output + ".fitted.csv";
  check_output_path(res_path);
  const std::string checksum = sha256_file(o.input) + "," + sha256_file(o.fit_a);
  const minb::LabeledDataset ld = minb::read_dataset_csv(o.input);
  const minb::FitResult f = checked_fit(minb::read_fit_artifact(o.fit_a), ld.data, o.fit_a);
  const minb::ResidualReport rep = minb::pearson_residuals(ld.data, f);

  minb::Count y_max = o.y_max >= 0 ? static_cast<minb::Count>(o.y_max) : 0;
  if (o.y_max < 0) {
    for (minb::Count y : ld.data.y()) y_max = std::max(y_max, y);
    for (std::size_t j = 0; j < f.candidates.size(); ++j)
      if (f.params.omega()[static_cast<Eigen::Index>(j)] > 0.0) y_max = std::max(y_max, f.candidates[j]);
  }
  const std::vector<double> fitted = minb::fitted_distribution(ld.data, f, y_max);
  std::vector<std::size_t> observed(fitted.size(), 0);
  for (minb::Count y : ld.data.y())
    if (y <= y_max) ++observed[static_cast<std::size_t>(y)];

  const std::string pre = csv_preamble(e, o.seed, checksum);
  std::ostringstream rs, ss, fs;
  rs << pre << "# psi = " << csv(rep.psi_hat) << "\n# df = " << rep.df << "\nrow,y,expected,residual\n";
  for (std::size_t i = 0; i < rep.residuals.size(); ++i)
    rs << i + 1 << "," << ld.data.y(i) << "," << csv(rep.expected[i]) << "," << csv(rep.residuals[i]) << "\n";
  ss << pre << "y,residual_sd\n";
  for (const auto& [y, sd] : rep.per_value_sd) ss << y << "," << csv(sd) << "\n";
  fs << pre << "y,observed,fitted\n";
  const double n = static_cast<double>(ld.data.n());
  for (std::size_t y = 0; y < fitted.size(); ++y)
    fs << y << "," << csv(static_cast<double>(observed[y]) / n) << "," << csv(fitted[y]) << "\n";
  minb::write_file_atomic(res_path, rs.str());
  minb::write_file_atomic(sd_path, ss.str());
  minb::write_file_atomic(fd_path, fs.str());
  std::cout << "psi = " << csv(rep.psi_hat) << "  df = " << rep.df << "\nwrote " << res_path << ", " << sd_path << ", "
            << fd_path << "\n";
  return kOk;
}

int cmd_vuong(const Options& o, const Echo& e) {
  check_output_path(o.output);
  const std::string checksum = sha256_file(o.input) + "," + sha256_file(o.fit_a) + "," + sha256_file(o.fit_b);
  const minb::LabeledDataset ld = minb::read_dataset_csv(o.input);
  const minb::FitResult a = checked_fit(minb::read_fit_artifact(o.fit_a), ld.data, o.fit_a);
  const minb::FitResult b = checked_fit(minb::read_fit_artifact(o.fit_b), ld.data, o.fit_b);
  const minb::VuongResult v = minb::vuong(ld.data, a, b);
  std::ostringstream os;
  os << csv_preamble(e, o.seed, checksum) << "statistic,p_value\n" << csv(v.statistic) << "," << csv(v.p_value) << "\n";
  minb::write_file_atomic(o.output, os.str());
  std::cout << "Vuong statistic = " << csv(v.statistic) << "  p-value = " << csv(v.p_value) << "\n"
            << (v.statistic > 0 ? "positive: favors --fit-a" : "non-positive: favors --fit-b") << "\n";
  return kOk;
}

/// Command line recorded in an output file: "command" plus "config.*" keys.
std::vector<std::string> recorded_command(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw minb::IoError("cannot open '" + path + "'");
  std::string line, command;
  minb::KeyValues config;
  bool artifact = false;
  std::string section;
  while (std::getline(in, line)) {
    if (line == "# minb fit artifact") artifact = true;
    if (artifact) {
      if (!line.empty() && line.front() == '[') {
        section = line;
        continue;
      }
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) continue;
      if (section == "[meta]" && line.substr(0, eq) == "command") command = line.substr(eq + 3);
      if (section == "[config]") config.emplace_back(line.substr(0, eq), line.substr(eq + 3));
      continue;
    }
    if (line.rfind("# ", 0) != 0) break;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(2, eq - 2);
    if (key == "command") command = line.substr(eq + 3);
    else if (key.rfind("config.", 0) == 0) config.emplace_back(key.substr(7), line.substr(eq + 3));
  }
  if (command.empty()) throw minb::ParseError("'" + path + "' carries no recorded command", 0, 0);
  std::vector<std::string> args{command};
  for (const auto& [k, v] : config) {
    if (v == "true") args.push_back("--" + k);
    else if (v != "false") {
      args.push_back("--" + k);
      args.push_back(v);
    }
  }
  return args;
}

int run(std::vector<std::string> args);

int dispatch(const std::vector<CLI::App*>& subs, Options& o, const std::string& replay_path) {
  CLI::App* sub = nullptr;
  for (auto* s : subs)
    if (s->parsed()) sub = s;
  const std::string name = sub->get_name();
  if (name == "replay") return run(recorded_command(replay_path));

  Echo e;
  e.command = name;
  if (name == "fit") {
    e.add("input", o.input);
    e.add("output", o.output);
    e.add("seed", o.seed);
    echo_fitting(e, o);
    return cmd_fit(o, e);
  }
  if (name == "simulate") {
    const minb::Scenario s = resolve_scenario(o);
    echo_scenario(e, o, s);
    e.add("reps", o.reps);
    e.add("seed", o.seed);
    e.add("output", o.output);
    if (!o.replicates_out.empty()) e.add("replicates-out", o.replicates_out);
    echo_fitting(e, o);
    return cmd_simulate(o, e);
  }
  if (name == "generate") {
    const minb::Scenario s = resolve_scenario(o);
    echo_scenario(e, o, s);
    e.add("seed", o.seed);
    e.add("output", o.output);
    if (!o.scenario_out.empty()) e.add("scenario-out", o.scenario_out);
    return cmd_generate(o, e);
  }
  if (name == "table1") {
    e.add("rates", o.rates);
    e.add("reps", o.reps);
    e.add("seed", o.seed);
    e.add("output", o.output);
    return cmd_table1(o, e);
  }
  if (name == "diagnose") {
    e.add("fit", o.fit_a);
    e.add("input", o.input);
    e.add("output", o.output);
    if (o.y_max >= 0) e.add("y-max", o.y_max);
    e.add("seed", o.seed);
    return cmd_diagnose(o, e);
  }
  e.add("fit-a", o.fit_a);
  e.add("fit-b", o.fit_b);
  e.add("input", o.input);
  e.add("output", o.output);
  e.add("seed", o.seed);
  return cmd_vuong(o, e);
}

int run(std::vector<std::string> args) {
  CLI::App app{"minb: multiple-inflated negative binomial regression"};
  app.name("minb");
  app.require_subcommand(1);
  Options o;
  std::string replay_path;

  auto* fit = app.add_subcommand("fit", "tune and fit a model to a dataset CSV, writing a fit artifact");
  fit->add_option("--input", o.input, "dataset CSV with header y,x1,...,xp")->required()->check(CLI::ExistingFile);
  fit->add_option("--output", o.output, "fit artifact path")->required();
  fit->add_option("--seed", o.seed, "recorded seed")->capture_default_str();
  add_fitting_options(fit, o);

  auto* sim = app.add_subcommand("simulate", "run replicated simulations and summarize the seven metrics");
  add_scenario_options(sim, o);
  sim->add_option("--reps", o.reps, "number of replicates")->capture_default_str();
  sim->add_option("--seed", o.seed, "base seed")->capture_default_str();
  sim->add_option("--output", o.output, "summary CSV path")->required();
  sim->add_option("--replicates-out", o.replicates_out, "per-replicate CSV path");
  add_fitting_options(sim, o);

  auto* gen = app.add_subcommand("generate", "draw one dataset from a scenario");
  add_scenario_options(gen, o);
  gen->add_option("--seed", o.seed, "seed")->capture_default_str();
  gen->add_option("--output", o.output, "dataset CSV path")->required();
  gen->add_option("--scenario-out", o.scenario_out, "also write the resolved scenario file");

  auto* t1 = app.add_subcommand("table1", "plain Poisson estimates under growing multiple inflation");
  t1->add_option("--rates", o.rates, "comma-separated inflation rates")->capture_default_str();
  t1->add_option("--reps", o.reps, "replicates per rate")->capture_default_str();
  t1->add_option("--seed", o.seed, "seed")->capture_default_str();
  t1->add_option("--output", o.output, "summary CSV path")->required();

  auto* diag = app.add_subcommand("diagnose", "residuals, per-value residual spread and fitted frequencies");
  diag->add_option("--fit", o.fit_a, "fit artifact")->required()->check(CLI::ExistingFile);
  diag->add_option("--input", o.input, "dataset CSV the fit was made on")->required()->check(CLI::ExistingFile);
  diag->add_option("--output", o.output, "output prefix; writes PREFIX.residuals.csv, PREFIX.value_sd.csv, PREFIX.fitted.csv")
      ->required();
  diag->add_option("--y-max", o.y_max, "largest count in the fitted-frequency table (default: largest observed)");
  diag->add_option("--seed", o.seed, "recorded seed")->capture_default_str();

  auto* vu = app.add_subcommand("vuong", "Vuong test between two fits of the same dataset");
  vu->add_option("--fit-a", o.fit_a, "first fit artifact")->required()->check(CLI::ExistingFile);
  vu->add_option("--fit-b", o.fit_b, "second fit artifact")->required()->check(CLI::ExistingFile);
  vu->add_option("--input", o.input, "dataset CSV")->required()->check(CLI::ExistingFile);
  vu->add_option("--output", o.output, "result CSV path")->required();
  vu->add_option("--seed", o.seed, "recorded seed")->capture_default_str();

  auto* rep = app.add_subcommand("replay", "re-run the command recorded in an output file");
  rep->add_option("file", replay_path, "any file written by minb")->required()->check(CLI::ExistingFile);

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    return dispatch({fit, sim, gen, t1, diag, vu, rep}, o, replay_path);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const minb::DomainError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const minb::IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kInput;
  } catch (const minb::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kInput;
  } catch (const minb::DimensionError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kInput;
  } catch (const minb::NumericalError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kNumerical;
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args));
}
