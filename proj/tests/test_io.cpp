#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "minb/artifact.hpp"
#include "minb/dataset_io.hpp"
#include "minb/simbench.hpp"

using namespace minb;

namespace {

std::filesystem::path scratch_dir() {
  const auto dir = std::filesystem::temp_directory_path() / ("minb_io_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

template <typename Fn>
void expect_parse_error_at(Fn&& fn, std::size_t row, std::size_t col) {
  try {
    fn();
    ADD_FAILURE() << "no ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), row) << e.what();
    EXPECT_EQ(e.column(), col) << e.what();
  }
}

LabeledDataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset_csv(in);
}

}  // namespace

TEST(DatasetCsv, ParsesHeaderCommentsAndValues) {
  const auto ld = parse("# note\ny,age,dose\n3,1.5,-2\n\n0,0.25,1e-3\n");
  EXPECT_EQ(ld.covariate_names, (std::vector<std::string>{"age", "dose"}));
  ASSERT_EQ(ld.data.n(), 2u);
  EXPECT_EQ(ld.data.y(0), 3);
  EXPECT_EQ(ld.data.x()(1, 1), 1e-3);
  const auto none = parse("y\n4\n2\n");
  EXPECT_EQ(none.data.p(), 0u);
}

TEST(DatasetCsv, ReportsRowAndColumn) {
  expect_parse_error_at([] { parse("count,x1\n1,2\n"); }, 1, 1);
  expect_parse_error_at([] { parse("y,x1\n1,2\n2\n"); }, 3, 1);
  expect_parse_error_at([] { parse("y,x1\n1,2\n1.5,2\n"); }, 3, 1);
  expect_parse_error_at([] { parse("y,x1\n1,2\n-1,2\n"); }, 3, 1);
  expect_parse_error_at([] { parse("y,x1,x2\n1,2,abc\n"); }, 2, 3);
  expect_parse_error_at([] { parse("y,x1\n1,nan\n"); }, 2, 2);
  EXPECT_THROW(parse("y,x1\n"), ParseError);
  EXPECT_THROW(parse(""), ParseError);
  EXPECT_THROW(read_dataset_csv("/nonexistent/minb.csv"), IoError);
}

TEST(DatasetCsv, WriteReadIsExact) {
  const Simulated sim = generate(builtin_scenario(1, 40), 5);
  std::ostringstream os;
  write_dataset_csv(os, sim.data);
  std::istringstream in(os.str());
  const auto back = parse_dataset_csv(in);
  EXPECT_EQ(back.data.y(), sim.data.y());
  EXPECT_TRUE(back.data.x() == sim.data.x());
}

TEST(NumberFormat, ExactAndTenDigit) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0}) EXPECT_EQ(parse_double(format_exact(v)), v);
  EXPECT_EQ(format_sig(1.0 / 3.0), "0.3333333333");
  EXPECT_EQ(format_sig(123456789012.0), "1.23456789e+11");
  EXPECT_EQ(format_sig(2.5), "2.5");
  EXPECT_THROW(parse_double("1.5x"), ParseError);
  EXPECT_THROW(parse_integer("7.0"), ParseError);
}

TEST(FitArtifact, RoundTripIsBitExact) {
  Eigen::VectorXd beta(3);
  beta << 0.1 / 3.0, 0.0, -2.0 / 7.0;
  Eigen::VectorXd omega(3);
  omega << 0.3, 0.0, 0.7;
  FitArtifact a;
  a.meta = {{"format", kArtifactFormat}, {"tool_version", kToolVersion}, {"seed", "7"}};
  a.config = {{"input", "data.csv"}, {"tol", "0.001"}};
  a.fit.params = ModelParams(0.9876543210123, -1.75, beta, omega);
  a.fit.candidates = CandidateSet({0, 4});
  a.fit.lambda1 = 0.0123;
  a.fit.lambda2 = 1.0 / 9.0;
  a.fit.n = 123;
  a.fit.log_likelihood = -456.789;
  a.fit.penalized_objective = -470.0001;
  a.fit.df = 5;
  a.fit.bic = 2 * 456.789 + 5 * std::log(123.0);
  a.fit.trace.iters = 2;
  a.fit.trace.converged = true;
  a.fit.trace.objective_per_iter = {-500.0, -480.5, -470.0001};
  a.fit.selected_covariates = {true, false, true};
  a.fit.selected_values = {true, false};
  a.covariate_names = {"a", "b", "c"};
  a.grid = {{0.5, 0.05}, {0.3, 0.03, 0.003}};
  a.bic_surface.resize(2, 3);
  a.bic_surface << 1, 2, 3, 4, std::numeric_limits<double>::infinity(), 6;
  a.nonzero_beta = Eigen::MatrixXi::Constant(2, 3, 1);
  a.nonzero_omega = Eigen::MatrixXi::Constant(2, 3, -1);

  const std::string text = write_fit_artifact(a);
  std::istringstream in(text);
  const FitArtifact b = parse_fit_artifact(in);
  EXPECT_EQ(write_fit_artifact(b), text);
  EXPECT_EQ(b.fit.params.beta(), a.fit.params.beta());
  EXPECT_EQ(b.fit.params.phi(), a.fit.params.phi());
  EXPECT_EQ(b.fit.candidates, a.fit.candidates);
  EXPECT_EQ(b.fit.trace.objective_per_iter, a.fit.trace.objective_per_iter);
  EXPECT_EQ(b.grid.lambda2_values, a.grid.lambda2_values);
  EXPECT_TRUE(std::isinf(b.bic_surface(1, 1)));
  EXPECT_EQ(b.meta_value("seed"), "7");
  EXPECT_EQ(b.config, a.config);
}

TEST(FitArtifact, RejectsForeignText) {
  std::istringstream no_format("[meta]\nseed = 1\n");
  EXPECT_THROW(parse_fit_artifact(no_format), ParseError);
  std::istringstream stray("[meta]\nformat = minb-fit/1\n[bogus]\n1,2\n");
  EXPECT_THROW(parse_fit_artifact(stray), ParseError);
  EXPECT_THROW(read_fit_artifact("/nonexistent/fit.txt"), IoError);
}

TEST(AtomicWrite, ReplacesWholeFileAndLeavesNoTemporary) {
  const auto dir = scratch_dir();
  const std::string path = (dir / "out.csv").string();
  write_file_atomic(path, "first\n");
  write_file_atomic(path, "second\n");
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), "second\n");
  EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
  EXPECT_THROW(write_file_atomic((dir / "missing" / "x.csv").string(), "x"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(ScenarioFile, RoundTripsBuiltinsAndCustom) {
  for (int id = 1; id <= 15; ++id) {
    const Scenario s = builtin_scenario(id, 321);
    std::stringstream ss;
    write_scenario(ss, s);
    const Scenario back = parse_scenario(ss);
    std::stringstream again;
    write_scenario(again, back);
    EXPECT_EQ(again.str(), ss.str()) << id;
    EXPECT_EQ(back.beta, s.beta);
    EXPECT_EQ(back.inflated_props, s.inflated_props);
    // the reloaded scenario drives the identical simulation
    EXPECT_EQ(generate(back, 9).data.y(), generate(s, 9).data.y());
  }
  std::istringstream custom("# mine\nfamily = poisson\nalpha = 0.5\nbeta = 1, -1\ninflated_values = 2\ninflated_props = 0.2\nn = 50\n");
  const Scenario c = parse_scenario(custom);
  EXPECT_EQ(c.p, 2u);
  EXPECT_EQ(c.family, Family::Poisson);
  std::istringstream bad("alpha = 1\ncolour = red\n");
  EXPECT_THROW(parse_scenario(bad), ParseError);
  std::istringstream bad_props("beta = 1\ninflated_values = 1,2\ninflated_props = 0.5\n");
  EXPECT_THROW(parse_scenario(bad_props), DimensionError);
}
