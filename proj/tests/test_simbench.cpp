#include <gtest/gtest.h>

#include "gof.hpp"
#include "minb/simbench.hpp"

using namespace minb;

namespace {

ReplicateConfig small_grid(std::size_t threads = 1) {
  ReplicateConfig c;
  c.grid.size1 = 10;
  c.grid.size2 = 10;
  c.threads = threads;
  return c;
}

}  // namespace

TEST(Scenarios, BuiltinExamples) {
  const Scenario s1 = builtin_scenario(1, 500);
  EXPECT_EQ(s1.phi, 1.0);
  EXPECT_EQ(s1.inflated_values.size(), 5u);
  double mass = 0.0;
  for (double w : s1.inflated_props) mass += w;
  EXPECT_NEAR(mass, 0.42, 1e-15);
  EXPECT_EQ(s1.p, 15u);
  EXPECT_EQ(s1.alpha, -2.0);

  const Scenario s5 = builtin_scenario(5, 500);
  EXPECT_EQ(s5.inflated_values, (std::vector<Count>{0, 1, 3}));
  EXPECT_EQ(s5.inflated_props, (std::vector<double>{0.3, 0.1, 0.1}));

  const Scenario s15 = builtin_scenario(15, 500);
  EXPECT_TRUE(s15.inflated_values.empty());
  EXPECT_EQ(s15.family, Family::Poisson);
  EXPECT_EQ(s15.true_phi(), 0.0);

  const Scenario s8 = builtin_scenario(8, 500);
  EXPECT_EQ(s8.inflated_values, (std::vector<Count>{0}));
  EXPECT_EQ(s8.inflated_props, (std::vector<double>{0.45}));
  EXPECT_EQ(builtin_scenario(12, 500).family, Family::Poisson);
  EXPECT_EQ(builtin_scenario(6, 500).beta.size(), 15u);
  for (int id = 1; id <= 15; ++id) EXPECT_NO_THROW(builtin_scenario(id, 10).validate());
  EXPECT_THROW(builtin_scenario(16, 10), DomainError);
}

TEST(Scenarios, ValidationErrors) {
  Scenario s = builtin_scenario(1, 10);
  s.inflated_props = {0.5, 0.5, 0.0, 0.0, 0.0};
  EXPECT_THROW(s.validate(), DomainError);
  s = builtin_scenario(1, 10);
  s.inflated_props.pop_back();
  EXPECT_THROW(s.validate(), DimensionError);
  s = builtin_scenario(1, 10);
  s.inflated_props[0] = -0.1;
  EXPECT_THROW(s.validate(), DomainError);
}

TEST(Rng, StreamsAreDeterministicAndDistinct) {
  Rng a(42, 0), b(42, 0), c(42, 1), d(43, 0);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    EXPECT_NE(x, c.next());
    EXPECT_NE(x, d.next());
  }
  Rng u(7);
  for (int i = 0; i < 10000; ++i) {
    const double v = u.uniform();
    ASSERT_GT(v, 0.0);
    ASSERT_LT(v, 1.0);
  }
}

TEST(Rng, SamplerGoodnessOfFit) {
  constexpr std::size_t n = 100000;
  struct Case {
    double mu, phi;
  };
  // small and large Poisson means exercise both Poisson samplers
  for (const Case cs : {Case{3.5, 0.0}, Case{60.0, 0.0}, Case{4.0, 0.7}, Case{0.3, 2.0}, Case{25.0, 0.2}}) {
    Rng rng(1234, static_cast<std::uint64_t>(cs.mu * 10));
    std::vector<Count> y(n);
    for (auto& v : y) v = rng.negative_binomial(cs.mu, cs.phi);
    std::vector<double> probs(400);
    for (std::size_t k = 0; k < probs.size(); ++k) {
      const auto kc = static_cast<Count>(k);
      probs[k] = std::exp(cs.phi > 0 ? oracle::nb_log_pmf_plain(kc, cs.mu, cs.phi) : oracle::poisson_log_pmf_plain(kc, cs.mu));
    }
    const auto c = gof::chi_square(y, probs);
    EXPECT_GT(c.p_value, 0.01) << cs.mu << " " << cs.phi << " stat " << c.statistic << " dof " << c.dof;
  }
  Rng rng(99);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = rng.gamma(0.4, 2.5);
    s += g;
    s2 += g * g;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 1.0, 0.03);
  EXPECT_NEAR(var, 2.5, 0.15);
}

TEST(Generate, ScenarioMatchesMarginalDistribution) {
  // no inflation: pure NB regression marginalized over the covariates
  Scenario s = builtin_scenario(1, 100000);
  s.inflated_values.clear();
  s.inflated_props.clear();
  const Simulated sim = generate(s, 2024);
  const auto c = gof::chi_square(sim.data.y(), gof::scenario_marginal(s, 3000));
  EXPECT_GT(c.p_value, 0.01) << "stat " << c.statistic << " dof " << c.dof;

  // the full scenario-1 mixture
  const Scenario s1 = builtin_scenario(1, 100000);
  const Simulated mix = generate(s1, 2025);
  const auto probs = gof::scenario_marginal(s1, 3000);
  EXPECT_GT(gof::chi_square(mix.data.y(), probs).p_value, 0.01);
  // P(y = 0) = 0.3 + 0.58 E[f_NB(0)]
  const double zeros = static_cast<double>(std::count(mix.data.y().begin(), mix.data.y().end(), 0)) / 1e5;
  EXPECT_NEAR(zeros, probs[0], 0.01);

  // Poisson family
  const Scenario s15 = builtin_scenario(15, 100000);
  EXPECT_GT(gof::chi_square(generate(s15, 7).data.y(), gof::scenario_marginal(s15, 3000)).p_value, 0.01);
}

TEST(Generate, NearlyAllInflated) {
  Scenario s = builtin_scenario(1, 20000);
  s.inflated_values = {7};
  s.inflated_props = {1.0 - 1e-6};
  const auto y = generate(s, 3).data.y();
  EXPECT_GE(static_cast<double>(std::count(y.begin(), y.end(), 7)) / 20000.0, 0.999);
}

TEST(Generate, SeedDeterminismAndResampledCovariates) {
  const Scenario s = builtin_scenario(4, 300);
  const Simulated a = generate(s, 11, 2), b = generate(s, 11, 2), c = generate(s, 11, 3);
  EXPECT_EQ(a.data.y(), b.data.y());
  EXPECT_TRUE(a.data.x() == b.data.x());
  EXPECT_FALSE(a.data.x() == c.data.x());
  Eigen::MatrixXd pool(3, 15);
  pool.setRandom();
  const Simulated r = generate(s, 5, 0, &pool);
  for (Eigen::Index i = 0; i < r.data.x().rows(); ++i) {
    bool found = false;
    for (Eigen::Index k = 0; k < 3; ++k) found = found || r.data.x().row(i) == pool.row(k);
    ASSERT_TRUE(found);
  }
  Eigen::MatrixXd narrow(3, 2);
  EXPECT_THROW(generate(s, 5, 0, &narrow), DimensionError);
}

TEST(Evaluate, IdentityAndCounting) {
  const Truth t = scenario_truth(builtin_scenario(1, 10));
  const MetricsRow same = evaluate(t.params, t.candidates, t.params, t.candidates);
  EXPECT_EQ(same.rsse_c, 0.0);
  EXPECT_EQ(same.rsse_i, 0.0);
  EXPECT_EQ(same.ae_d, 0.0);
  EXPECT_EQ(same.tpr_c, 1.0);
  EXPECT_EQ(same.fpr_c, 0.0);
  EXPECT_EQ(same.tpr_i, 1.0);
  EXPECT_TRUE(std::isnan(same.fpr_i));  // every candidate is truly inflated

  const ModelParams zeroed(1.0, -2.0, Eigen::VectorXd::Zero(15), Eigen::VectorXd::Ones(1));
  const MetricsRow none = evaluate(zeroed, CandidateSet(), t.params, t.candidates);
  EXPECT_EQ(none.tpr_c, 0.0);
  EXPECT_EQ(none.fpr_c, 0.0);
  EXPECT_EQ(none.tpr_i, 0.0);

  // five candidates, two truly inflated; the estimate picks both and one more
  Eigen::VectorXd beta_t = Eigen::VectorXd::Zero(1), beta_e = Eigen::VectorXd::Zero(1);
  Eigen::VectorXd wt(6), we(6);
  wt << 0.2, 0.1, 0.0, 0.0, 0.0, 0.7;
  we << 0.25, 0.05, 0.1, 0.0, 0.0, 0.6;
  const CandidateSet k({0, 1, 2, 3, 4});
  const MetricsRow h = evaluate(ModelParams(0.5, 0.0, beta_e, we), k, ModelParams(1.0, 0.0, beta_t, wt), k);
  EXPECT_EQ(h.tpr_i, 1.0);
  EXPECT_NEAR(h.fpr_i, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(h.rsse_i, std::sqrt(0.05 * 0.05 + 0.05 * 0.05 + 0.1 * 0.1), 1e-15);
  EXPECT_EQ(h.ae_d, 0.5);
  EXPECT_TRUE(std::isnan(h.tpr_c));
}

TEST(Summaries, SingleReplicateAndNaNHandling) {
  const auto one = summarize_metric({0.7});
  EXPECT_EQ(one.mean, 0.7);
  EXPECT_EQ(one.sd, 0.0);
  const auto some = summarize_metric({1.0, std::numeric_limits<double>::quiet_NaN(), 3.0});
  EXPECT_EQ(some.count, 2u);
  EXPECT_EQ(some.mean, 2.0);
  EXPECT_NEAR(some.sd, std::sqrt(2.0), 1e-15);
  EXPECT_TRUE(std::isnan(summarize_metric({}).mean));

  const ReplicateSummary r = run_replicates(builtin_scenario(1, 300), 1, 9, small_grid());
  ASSERT_EQ(r.failures, 0u);
  const auto v = r.replicates[0].metrics.values();
  for (std::size_t c = 0; c < MetricsRow::kCount; ++c) {
    if (std::isnan(v[c])) continue;
    EXPECT_EQ(r.metrics[c].mean, v[c]);
    EXPECT_EQ(r.metrics[c].sd, 0.0);
  }
}

TEST(Replicates, ThreadCountDoesNotChangeResults) {
  const Scenario s = builtin_scenario(2, 300);
  const ReplicateSummary a = run_replicates(s, 4, 77, small_grid(1));
  const ReplicateSummary b = run_replicates(s, 4, 77, small_grid(4));
  for (std::size_t r = 0; r < 4; ++r) EXPECT_EQ(a.replicates[r].metrics.values(), b.replicates[r].metrics.values());
  for (std::size_t c = 0; c < MetricsRow::kCount; ++c) {
    EXPECT_EQ(std::isnan(a.metrics[c].mean), std::isnan(b.metrics[c].mean));
    if (!std::isnan(a.metrics[c].mean)) {
      EXPECT_EQ(a.metrics[c].mean, b.metrics[c].mean);
    }
  }
}

TEST(Replicates, BaselineModelsAndStandardization) {
  const Simulated sim = generate(builtin_scenario(1, 400), 8);
  ReplicateConfig c = small_grid();
  c.model = FitModel::Poisson;
  const TunedFit pois = fit_model(sim.data, c);
  EXPECT_EQ(pois.best.params.phi(), 0.0);
  EXPECT_TRUE(pois.best.candidates.empty());
  c.model = FitModel::Nb;
  EXPECT_GT(fit_model(sim.data, c).best.params.phi(), 0.0);

  // standardized fitting reports coefficients on the raw scale
  Scenario zinb;
  zinb.alpha = 0.5;
  zinb.beta = {0.8, -0.5, 0.3};
  zinb.p = 3;
  zinb.n = 400;
  zinb.covariate_sd = 2.0;
  zinb.inflated_values = {0};
  zinb.inflated_props = {0.3};
  const Dataset d = generate(zinb, 12).data;
  ReplicateConfig u = small_grid();
  u.grid.lambda1_values = {1e-9};
  u.grid.lambda2_values = {1e-9};
  u.em.rel_tol = 1e-9;
  u.em.inner_irls_tol = 1e-11;
  u.em.max_iters = 20000;
  u.candidate_values = std::vector<Count>{0};
  ReplicateConfig st = u;
  st.standardize = true;
  const TunedFit raw = fit_model(d, u);
  const TunedFit scaled = fit_model(d, st);
  EXPECT_NEAR(raw.best.params.alpha(), scaled.best.params.alpha(), 1e-5);
  EXPECT_NEAR((raw.best.params.beta() - scaled.best.params.beta()).cwiseAbs().maxCoeff(), 0.0, 1e-5);
  EXPECT_NEAR(raw.best.params.phi(), scaled.best.params.phi(), 1e-5);
}

TEST(InflationDemo, InflationBiasesPlainPoisson) {
  const Table1Result clean = table1_demo(0.0, 20, 5);
  EXPECT_EQ(clean.failures, 0u);
  EXPECT_NEAR(clean.mean[0], -2.0, 0.1);
  EXPECT_NEAR(clean.mean[1], -5.0, 0.1);
  EXPECT_NEAR(clean.mean[2], 1.0, 0.1);
  // the bias in the dominant coefficient grows with the inflation rate
  double previous = std::abs(clean.mean[1]);
  for (double rate : {0.2, 0.4, 0.8}) {
    const Table1Result r = table1_demo(rate, 50, 5);
    EXPECT_EQ(r.failures, 0u);
    EXPECT_LT(std::abs(r.mean[1]), previous) << rate;
    previous = std::abs(r.mean[1]);
    std::printf("[table1] rate %.1f: %.3f %.3f %.3f\n", rate, r.mean[0], r.mean[1], r.mean[2]);
  }
  EXPECT_EQ(table1_demo(0.4, 3, 1, 1).mean, table1_demo(0.4, 3, 1, 3).mean);
  EXPECT_THROW(table1_demo(1.5, 3, 1), DomainError);
}

TEST(Benchmark, ScenarioOneSmallSampleCoefficientError) {
  const ReplicateSummary r = run_replicates(builtin_scenario(1, 500), 50, 20260101, small_grid());
  EXPECT_EQ(r.failures, 0u);
  const double rsse = r.metrics[0].mean;
  std::printf("[scenario 1, n=500] RSSE:C %.3f (%.3f)\n", rsse, r.metrics[0].sd);
  EXPECT_GE(rsse, 1.3);
  EXPECT_LE(rsse, 2.6);
}
