// Acceptance checks. `acceptance N` runs criterion N (1-9); without an
// argument every criterion runs. Each criterion prints its measurements and
// one final "criterion N: PASS|FAIL" line; the exit status is non-zero when
// any criterion run fails.

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gof.hpp"
#include "minb/minb.hpp"
#include "oracle.hpp"

using namespace minb;

namespace {

enum Metric { kRsseC = 0, kTprC, kFprC, kRsseI, kTprI, kFprI, kAeD };

ReplicateConfig grid_config(std::size_t size) {
  ReplicateConfig cfg;
  cfg.grid.size1 = size;
  cfg.grid.size2 = size;
  return cfg;
}

double metric_mean(const ReplicateSummary& s, Metric m) { return s.metrics[m].mean; }

void print_summary(const char* label, const ReplicateSummary& s) {
  std::printf("  %s:", label);
  const auto& names = MetricsRow::names();
  for (std::size_t m = 0; m < names.size(); ++m) std::printf(" %s=%.3f(%.3f)", names[m], s.metrics[m].mean, s.metrics[m].sd);
  std::printf(" failures=%zu\n", s.failures);
}

bool check(bool ok, const char* what) {
  std::printf("  [%s] %s\n", ok ? "ok" : "miss", what);
  return ok;
}

// ---- 1: plain Poisson under growing inflation ----
bool criterion_1() {
  const Table1Result r0 = table1_demo(0.0, 50, 101);
  const Table1Result r8 = table1_demo(0.8, 50, 101);
  const Eigen::Vector3d truth(-2.0, -5.0, 1.0);
  std::printf("  rate 0.0: mean beta = (%.3f, %.3f, %.3f), failures %zu\n", r0.mean[0], r0.mean[1], r0.mean[2], r0.failures);
  std::printf("  rate 0.8: mean beta = (%.3f, %.3f, %.3f), failures %zu\n", r8.mean[0], r8.mean[1], r8.mean[2], r8.failures);
  bool ok = check((r0.mean - truth).cwiseAbs().maxCoeff() <= 0.15, "rate 0: every mean within 0.15 of (-2, -5, 1)");
  ok &= check(r8.mean[0] > 0.0, "rate 0.8: mean beta1 > 0");
  ok &= check(std::abs(r8.mean[2]) < 0.15, "rate 0.8: |mean beta3| < 0.15");
  return ok;
}

// ---- 2: scenario 1, n = 2000 ----
bool criterion_2() {
  const ReplicateSummary s = run_replicates(builtin_scenario(1, 2000), 50, 202, grid_config(10));
  print_summary("scenario 1, n=2000, 50 reps", s);
  bool ok = check(s.failures == 0, "no failed replicate");
  ok &= check(metric_mean(s, kTprI) >= 0.95, "mean TPR:I >= 0.95");
  ok &= check(metric_mean(s, kFprI) <= 0.03, "mean FPR:I <= 0.03");
  ok &= check(metric_mean(s, kRsseC) >= 0.40 && metric_mean(s, kRsseC) <= 1.10, "mean RSSE:C in [0.40, 1.10]");
  ok &= check(metric_mean(s, kAeD) <= 0.50, "mean AE:D <= 0.50");
  return ok;
}

// ---- 3: scenario 15, no inflation ----
bool criterion_3() {
  const ReplicateSummary s = run_replicates(builtin_scenario(15, 500), 20, 303, grid_config(10));
  print_summary("scenario 15, n=500, 20 reps", s);
  bool ok = check(s.failures == 0, "no failed replicate");
  ok &= check(metric_mean(s, kFprI) <= 0.10, "mean FPR:I <= 0.10");
  ok &= check(metric_mean(s, kTprC) >= 0.95, "mean TPR:C >= 0.95");
  return ok;
}

// ---- 4: consistency trend ----
bool criterion_4() {
  const ReplicateSummary small = run_replicates(builtin_scenario(1, 500), 20, 404, grid_config(10));
  const ReplicateSummary large = run_replicates(builtin_scenario(1, 4000), 20, 404, grid_config(10));
  print_summary("scenario 1, n=500, 20 reps", small);
  print_summary("scenario 1, n=4000, 20 reps", large);
  bool ok = check(metric_mean(large, kFprC) < metric_mean(small, kFprC), "mean FPR:C lower at n=4000");
  ok &= check(metric_mean(large, kRsseC) < metric_mean(small, kRsseC), "mean RSSE:C lower at n=4000");
  ok &= check(metric_mean(large, kTprC) >= 0.93, "mean TPR:C >= 0.93 at n=4000");
  return ok;
}

// ---- 5: EM ascent ----
bool criterion_5() {
  // every built-in scenario and the three model families on a small grid
  for (int id = 1; id <= 15; ++id) {
    const Simulated sim = generate(builtin_scenario(id, 300), 500 + static_cast<std::uint64_t>(id));
    ReplicateConfig cfg = grid_config(6);
    fit_model(sim.data, cfg);
    cfg.em.family = Family::Poisson;
    fit_model(sim.data, cfg);
    cfg.model = FitModel::Nb;
    fit_model(sim.data, cfg);
    cfg.model = FitModel::Poisson;
    fit_model(sim.data, cfg);
  }
  const auto& st = fit_statistics();
  std::printf("  %zu fits in this process, worst objective drop %.3e\n", static_cast<std::size_t>(st.fits.load()),
              st.worst_descent.load());
  return check(st.worst_descent.load() <= 1e-8, "no trace drops by more than 1e-8");
}

// ---- 6: oracle equivalence ----
Dataset regression_data(std::uint64_t seed, bool inflated) {
  Scenario s;
  s.alpha = 0.5;
  s.beta = {0.8, -0.5, 0.3};
  s.p = 3;
  s.phi = 0.7;
  s.n = 200;
  if (inflated) {
    s.inflated_values = {0};
    s.inflated_props = {0.3};
  }
  return generate(s, seed).data;
}

EmOptions tight_options() {
  EmOptions o;
  o.max_iters = 100000;
  o.rel_tol = 1e-11;
  o.inner_irls_tol = 1e-12;
  o.inner_irls_max_iters = 500;
  return o;
}

bool criterion_6() {
  double worst_nb = 0.0, worst_zinb = 0.0;
  bool converged = true;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const Dataset d = regression_data(600 + seed, false);
    const FitResult f = fit(d, CandidateSet(), 0.0, 0.0, tight_options());
    const auto o = oracle::regression_mle(d, true, false);
    converged &= f.converged() && o.converged;
    worst_nb = std::max({worst_nb, std::abs(f.params.alpha() - o.alpha), (f.params.beta() - o.beta).cwiseAbs().maxCoeff(),
                         std::abs(f.params.phi() - o.phi)});

    const Dataset z = regression_data(700 + seed, true);
    const FitResult g = fit(z, CandidateSet({0}), 0.0, 0.0, tight_options());
    const auto start_fit = oracle::regression_mle(z, true, false);
    Eigen::VectorXd start(6);
    start << start_fit.alpha, start_fit.beta, std::log(start_fit.phi), 0.0;
    const auto q = oracle::regression_mle(z, true, true, &start);
    converged &= g.converged() && q.converged;
    worst_zinb = std::max({worst_zinb, std::abs(g.params.alpha() - q.alpha), (g.params.beta() - q.beta).cwiseAbs().maxCoeff(),
                           std::abs(g.params.phi() - q.phi), std::abs(g.params.omega()[0] - q.zero_weight)});
  }
  std::printf("  NB regression: worst parameter difference %.2e over 10 instances\n", worst_nb);
  std::printf("  ZINB regression: worst parameter difference %.2e over 10 instances\n", worst_zinb);

  // unpenalized omega step against the mean responsibilities
  std::mt19937_64 gen(66);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_omega = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 50, nk = 4;
    std::vector<long> cand(n);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      cand[i] = static_cast<long>(i % (nk + 1)) - 1;
      w[i] = cand[i] < 0 ? 1.0 : u(gen);
    }
    const Responsibilities r(nk, cand, w);
    Eigen::VectorXd om = Eigen::VectorXd::Constant(nk + 1, 1.0 / (nk + 1));
    const ModelParams p(1.0, 0.0, Eigen::VectorXd(0), om);
    const Eigen::VectorXd step = m_step_omega(r, p, PenaltyConfig::unpenalized(0, nk));
    const Eigen::VectorXd mean = r.column_sums() / static_cast<double>(n);
    worst_omega = std::max(worst_omega, (step - mean).cwiseAbs().maxCoeff());
  }
  std::printf("  omega step with lambda2 = 0: worst difference from mean responsibilities %.2e\n", worst_omega);
  bool ok = check(converged, "every fit and oracle converged");
  ok &= check(worst_nb <= 1e-4, "NB regression within 1e-4 of the oracle MLE");
  ok &= check(worst_zinb <= 1e-4, "ZINB regression within 1e-4 of the oracle MLE");
  ok &= check(worst_omega <= 4 * std::numeric_limits<double>::epsilon(), "omega step equals the mean responsibilities to rounding");
  return ok;
}

// ---- 7: analytic scores against central differences ----
double weighted_nb_loglik_plain(const Dataset& d, const std::vector<double>& w, double alpha, const Eigen::VectorXd& beta,
                                double phi) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    const double eta = alpha + d.x().row(static_cast<Eigen::Index>(i)).dot(beta);
    s += w[i] * oracle::nb_log_pmf_plain(d.y(i), std::exp(eta), phi);
  }
  return s;
}

double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

bool criterion_7() {
  constexpr double h = 1e-5;
  const Dataset d = regression_data(777, false);
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_m2 = 0.0, worst_m3 = 0.0;
  const auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
  for (int t = 0; t < 100; ++t) {
    std::vector<double> w(d.n());
    for (double& x : w) x = 0.5 + 0.5 * u(gen);
    const double alpha = 0.5 * u(gen);
    const Eigen::Vector3d beta(0.5 * u(gen), 0.5 * u(gen), 0.5 * u(gen));
    const double phi = std::exp(1.5 * u(gen));

    // coefficient score of the weighted NB log-likelihood
    const Eigen::VectorXd g = weighted_nb_score(d, w, alpha, beta, phi);
    worst_m2 = std::max(worst_m2, rel(g[0], central_difference([&](double a) { return weighted_nb_loglik_plain(d, w, a, beta, phi); }, alpha, h)));
    for (Eigen::Index j = 0; j < 3; ++j) {
      const auto f = [&](double b) {
        Eigen::Vector3d v = beta;
        v[j] = b;
        return weighted_nb_loglik_plain(d, w, alpha, v, phi);
      };
      worst_m2 = std::max(worst_m2, rel(g[1 + j], central_difference(f, beta[j], h)));
    }

    // dispersion score and curvature at the current means
    std::vector<double> mu(d.n());
    for (std::size_t i = 0; i < d.n(); ++i) mu[i] = std::exp(alpha + d.x().row(static_cast<Eigen::Index>(i)).dot(beta));
    detail::WeightedPhiObjective obj(d.y(), mu, w);
    const auto e = obj.evaluate(phi, true);
    const double fd1 = central_difference(
        [&](double p) {
          double s = 0.0;
          for (std::size_t i = 0; i < d.n(); ++i) s += w[i] * oracle::nb_log_pmf_plain(d.y(i), mu[i], p);
          return s;
        },
        phi, h);
    const double fd2 = central_difference([&](double p) { return obj.evaluate(p, true).score; }, phi, h);
    worst_m3 = std::max({worst_m3, rel(e.score, fd1), rel(e.curvature, fd2)});
  }
  std::printf("  coefficient score: worst relative error %.2e over 100 points\n", worst_m2);
  std::printf("  dispersion score and curvature: worst relative error %.2e over 100 points\n", worst_m3);
  bool ok = check(worst_m2 < 1e-6, "coefficient score within 1e-6");
  ok &= check(worst_m3 < 1e-6, "dispersion derivatives within 1e-6");
  return ok;
}

// ---- 8: distributions and generator ----
bool criterion_8() {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> umu(0.05, 20.0), uphi(0.01, 3.0);
  double worst_norm = 0.0;
  for (int t = 0; t < 100; ++t) {
    const double mu = umu(gen), phi = uphi(gen);
    double s = 0.0;
    for (Count y = 0; y <= 100000; ++y) {
      const double f = std::exp(nb_log_pmf(y, {mu, phi}));
      s += f;
      if (static_cast<double>(y) > 10.0 * mu + 50.0 && f < 1e-20) break;
    }
    worst_norm = std::max(worst_norm, std::abs(s - 1.0));
  }
  double worst_limit = 0.0;
  for (double mu : {0.1, 1.0, 4.5, 12.0, 20.0})
    for (Count y = 0; y <= 50; ++y)
      worst_limit = std::max(worst_limit, std::abs(std::exp(nb_log_pmf(y, {mu, 1e-6})) - std::exp(poisson_log_pmf(y, mu))));
  std::printf("  NB normalization: worst |sum - 1| %.2e over 100 (mu, phi)\n", worst_norm);
  std::printf("  Poisson limit at phi = 1e-6: worst pmf difference %.2e\n", worst_limit);

  constexpr std::size_t n = 100000;
  double min_p = 1.0;
  struct Case {
    double mu, phi;
  };
  for (const Case cs : {Case{3.5, 0.0}, Case{60.0, 0.0}, Case{4.0, 0.7}, Case{0.3, 2.0}, Case{25.0, 0.2}}) {
    Rng rng(8080, static_cast<std::uint64_t>(cs.mu * 10));
    std::vector<Count> y(n);
    for (auto& v : y) v = rng.negative_binomial(cs.mu, cs.phi);
    std::vector<double> probs(400);
    for (std::size_t k = 0; k < probs.size(); ++k) {
      const auto kc = static_cast<Count>(k);
      probs[k] = std::exp(cs.phi > 0 ? oracle::nb_log_pmf_plain(kc, cs.mu, cs.phi) : oracle::poisson_log_pmf_plain(kc, cs.mu));
    }
    const auto c = gof::chi_square(y, probs);
    std::printf("  sampler mu=%g phi=%g: chi-square %.1f on %d dof, p = %.3f\n", cs.mu, cs.phi, c.statistic, c.dof, c.p_value);
    min_p = std::min(min_p, c.p_value);
  }
  for (int id : {1, 8, 15}) {
    const Scenario s = builtin_scenario(id, n);
    const auto c = gof::chi_square(generate(s, 8000 + static_cast<std::uint64_t>(id)).data.y(), gof::scenario_marginal(s, 3000));
    std::printf("  scenario %d generator: chi-square %.1f on %d dof, p = %.3f\n", id, c.statistic, c.dof, c.p_value);
    min_p = std::min(min_p, c.p_value);
  }
  bool ok = check(worst_norm <= 1e-8, "NB pmf sums to 1 within 1e-8");
  ok &= check(worst_limit <= 1e-4, "NB pmf within 1e-4 of the Poisson pmf near phi = 0");
  ok &= check(min_p > 0.01, "no generator test rejects at 0.01");
  return ok;
}

// ---- 9: CLI determinism across thread counts ----
std::string read_file(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, int threads) {
  const std::string cmd = "MINB_THREADS=" + std::to_string(threads) + " " + MINB_CLI_PATH + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool criterion_9() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("minb_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto p = [&](const std::string& name) { return (dir / name).string(); };

  // each command runs twice with the same output paths; outputs of the first run are set aside
  struct Command {
    std::string args;
    std::vector<std::string> outputs;
  };
  const std::vector<Command> commands = {
      {"generate --scenario 1 --n 400 --seed 9 --output " + p("data.csv"), {"data.csv"}},
      {"fit --input " + p("data.csv") + " --output " + p("fit.txt") + " --grid-l1 8 --grid-l2 8", {"fit.txt"}},
      {"fit --input " + p("data.csv") + " --output " + p("pois.txt") + " --model poisson", {"pois.txt"}},
      {"diagnose --fit " + p("fit.txt") + " --input " + p("data.csv") + " --output " + p("diag"),
       {"diag.residuals.csv", "diag.value_sd.csv", "diag.fitted.csv"}},
      {"vuong --fit-a " + p("fit.txt") + " --fit-b " + p("pois.txt") + " --input " + p("data.csv") + " --output " + p("vuong.csv"),
       {"vuong.csv"}},
      {"simulate --scenario 5 --n 300 --reps 4 --seed 19 --grid-l1 6 --grid-l2 6 --output " + p("sim.csv") +
           " --replicates-out " + p("sim_reps.csv"),
       {"sim.csv", "sim_reps.csv"}},
      {"table1 --rates 0,0.8 --reps 4 --seed 29 --output " + p("t1.csv"), {"t1.csv"}},
  };
  bool ok = true;
  for (const auto& c : commands) {
    const int a = run_cli(c.args, 1);
    std::vector<std::string> first;
    for (const auto& o : c.outputs) first.push_back(read_file(p(o)));
    const int b = run_cli(c.args, 4);
    bool same = a == 0 && b == 0;
    for (std::size_t k = 0; k < c.outputs.size(); ++k) same &= !first[k].empty() && first[k] == read_file(p(c.outputs[k]));
    std::printf("  %-9s threads 1 vs 4: %s\n", c.args.substr(0, c.args.find(' ')).c_str(), same ? "identical" : "DIFFERENT");
    ok &= same;
  }
  fs::remove_all(dir);
  return check(ok, "byte-identical outputs for every command");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<bool()>> criteria = {criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
                                                        criterion_6, criterion_7, criterion_8, criterion_9};
  std::vector<int> which;
  if (argc > 1) {
    const int k = std::atoi(argv[1]);
    if (k < 1 || k > 9) {
      std::fprintf(stderr, "usage: acceptance [1-9]\n");
      return 2;
    }
    which.push_back(k);
  } else {
    for (int k = 1; k <= 9; ++k) which.push_back(k);
  }
  bool all = true;
  for (int k : which) {
    bool ok = false;
    try {
      ok = criteria[static_cast<std::size_t>(k - 1)]();
    } catch (const std::exception& e) {
      std::printf("  error: %s\n", e.what());
    }
    std::printf("criterion %d: %s\n", k, ok ? "PASS" : "FAIL");
    std::fflush(stdout);
    all &= ok;
  }
  return all ? 0 : 1;
}
