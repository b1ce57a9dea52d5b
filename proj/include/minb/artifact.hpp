#pragma once

// Fit artifacts and numeric text output.
//
// A fit artifact is UTF-8 text. Lines before the first section header and
// inside [meta], [config] and [fit] are "key = value" pairs; the remaining
// sections are CSV tables with a header row:
//
//   [meta]          format, tool_version, seed, input checksum, ...
//   [config]        resolved run configuration
//   [fit]           family, n, p, lambda1, lambda2, phi, alpha, nb_weight,
//                   log_likelihood, penalized_objective, df, bic, iterations,
//                   converged
//   [coefficients]  name,beta,selected
//   [candidates]    value,omega,selected
//   [trace]         iteration,objective
//   [grid]          lambda1,lambda2,bic,nonzero_beta,nonzero_omega
//
// Reals are written in shortest round-trip form, so a read-back artifact
// reproduces the fit bit for bit.

#include <Eigen/Dense>
#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "minb/em_solver.hpp"
#include "minb/error.hpp"
#include "minb/model.hpp"
#include "minb/tuning.hpp"

namespace minb {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kArtifactFormat = "minb-fit/1";
inline constexpr int kCsvDigits = 10;

/// Shortest representation that parses back to the same double.
inline std::string format_exact(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// `digits` significant digits, general notation.
inline std::string format_sig(double v, int digits = kCsvDigits) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, digits);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s, std::size_t line = 0) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
    throw ParseError("invalid number '" + s + "'", line, 0);
  return v;
}

inline long long parse_integer(const std::string& s, std::size_t line = 0) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
    throw ParseError("invalid integer '" + s + "'", line, 0);
  return v;
}

/// Writes `content` to a sibling temporary file and renames it over `path`,
/// so readers never observe a partial file.
inline void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path + "'");
  }
}

using KeyValues = std::vector<std::pair<std::string, std::string>>;

struct FitArtifact {
  KeyValues meta;
  KeyValues config;
  FitResult fit;
  std::vector<std::string> covariate_names;
  TuningGrid grid;               // empty when the fit was not tuned
  Eigen::MatrixXd bic_surface;   // rows: lambda1, columns: lambda2
  Eigen::MatrixXi nonzero_beta;
  Eigen::MatrixXi nonzero_omega;

  std::string meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    return "";
  }
};

inline const char* family_name(Family f) { return f == Family::Poisson ? "poisson" : "nb"; }

inline Family parse_family(const std::string& s) {
  if (s == "nb") return Family::NegativeBinomial;
  if (s == "poisson") return Family::Poisson;
  throw ParseError("unknown family '" + s + "'", 0, 0);
}

inline std::string write_fit_artifact(const FitArtifact& a) {
  const FitResult& f = a.fit;
  const ModelParams& p = f.params;
  std::ostringstream os;
  os << "# minb fit artifact\n[meta]\n";
  for (const auto& [k, v] : a.meta) os << k << " = " << v << "\n";
  os << "[config]\n";
  for (const auto& [k, v] : a.config) os << k << " = " << v << "\n";
  os << "[fit]\n"
     << "family = " << family_name(f.family) << "\n"
     << "n = " << f.n << "\n"
     << "p = " << p.p() << "\n"
     << "lambda1 = " << format_exact(f.lambda1) << "\n"
     << "lambda2 = " << format_exact(f.lambda2) << "\n"
     << "phi = " << format_exact(p.phi()) << "\n"
     << "alpha = " << format_exact(p.alpha()) << "\n"
     << "nb_weight = " << format_exact(p.nb_weight()) << "\n"
     << "log_likelihood = " << format_exact(f.log_likelihood) << "\n"
     << "penalized_objective = " << format_exact(f.penalized_objective) << "\n"
     << "df = " << f.df << "\n"
     << "bic = " << format_exact(f.bic) << "\n"
     << "iterations = " << f.trace.iters << "\n"
     << "converged = " << (f.converged() ? 1 : 0) << "\n";
  os << "[coefficients]\nname,beta,selected\n";
  for (std::size_t j = 0; j < p.p(); ++j) {
    const std::string name = j < a.covariate_names.size() ? a.covariate_names[j] : "x" + std::to_string(j + 1);
    os << name << "," << format_exact(p.beta()[static_cast<Eigen::Index>(j)]) << ","
       << (f.selected_covariates[j] ? 1 : 0) << "\n";
  }
  os << "[candidates]\nvalue,omega,selected\n";
  for (std::size_t j = 0; j < f.candidates.size(); ++j)
    os << f.candidates[j] << "," << format_exact(p.omega()[static_cast<Eigen::Index>(j)]) << ","
       << (f.selected_values[j] ? 1 : 0) << "\n";
  os << "[trace]\niteration,objective\n";
  for (std::size_t m = 0; m < f.trace.objective_per_iter.size(); ++m)
    os << m << "," << format_exact(f.trace.objective_per_iter[m]) << "\n";
  os << "[grid]\nlambda1,lambda2,bic,nonzero_beta,nonzero_omega\n";
  for (std::size_t r = 0; r < a.grid.lambda1_values.size(); ++r)
    for (std::size_t c = 0; c < a.grid.lambda2_values.size(); ++c) {
      const auto ri = static_cast<Eigen::Index>(r), ci = static_cast<Eigen::Index>(c);
      os << format_exact(a.grid.lambda1_values[r]) << "," << format_exact(a.grid.lambda2_values[c]) << ","
         << format_exact(a.bic_surface(ri, ci)) << "," << a.nonzero_beta(ri, ci) << "," << a.nonzero_omega(ri, ci)
         << "\n";
    }
  return os.str();
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

inline FitArtifact parse_fit_artifact(std::istream& is) {
  FitArtifact a;
  std::map<std::string, std::string> fitkv;
  std::vector<std::pair<std::string, double>> coefs;
  std::vector<bool> coef_sel;
  std::vector<Count> cand;
  std::vector<double> omega;
  std::vector<bool> cand_sel;
  std::vector<double> trace;
  std::vector<std::array<double, 5>> grid_rows;

  std::string section, line;
  bool expect_header = false;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = line.substr(1, line.size() - 2);
      expect_header = section == "coefficients" || section == "candidates" || section == "trace" || section == "grid";
      continue;
    }
    if (expect_header) {
      expect_header = false;
      continue;
    }
    if (section == "meta" || section == "config" || section == "fit") {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) throw ParseError("expected 'key = value'", lineno, 0);
      std::pair<std::string, std::string> kv{line.substr(0, eq), line.substr(eq + 3)};
      if (section == "meta") a.meta.push_back(kv);
      else if (section == "config") a.config.push_back(kv);
      else fitkv[kv.first] = kv.second;
      continue;
    }
    const auto f = detail::split_csv_line(line);
    auto need = [&](std::size_t k) {
      if (f.size() != k) throw ParseError("expected " + std::to_string(k) + " fields", lineno, 0);
    };
    if (section == "coefficients") {
      need(3);
      coefs.emplace_back(f[0], parse_double(f[1], lineno));
      coef_sel.push_back(parse_integer(f[2], lineno) != 0);
    } else if (section == "candidates") {
      need(3);
      cand.push_back(static_cast<Count>(parse_integer(f[0], lineno)));
      omega.push_back(parse_double(f[1], lineno));
      cand_sel.push_back(parse_integer(f[2], lineno) != 0);
    } else if (section == "trace") {
      need(2);
      trace.push_back(parse_double(f[1], lineno));
    } else if (section == "grid") {
      need(5);
      grid_rows.push_back({parse_double(f[0], lineno), parse_double(f[1], lineno), parse_double(f[2], lineno),
                           parse_double(f[3], lineno), parse_double(f[4], lineno)});
    } else {
      throw ParseError("content outside a known section", lineno, 0);
    }
  }
  if (a.meta.empty() || a.meta.front().first != "format" || a.meta.front().second != kArtifactFormat)
    throw ParseError("not a fit artifact (missing format line)", 1, 0);
  auto get = [&](const std::string& k) {
    const auto it = fitkv.find(k);
    if (it == fitkv.end()) throw ParseError("fit section lacks '" + k + "'", 0, 0);
    return it->second;
  };

  Eigen::VectorXd beta(static_cast<Eigen::Index>(coefs.size()));
  for (std::size_t j = 0; j < coefs.size(); ++j) {
    beta[static_cast<Eigen::Index>(j)] = coefs[j].second;
    a.covariate_names.push_back(coefs[j].first);
  }
  if (static_cast<long long>(coefs.size()) != parse_integer(get("p"))) throw ParseError("coefficient count differs from p", 0, 0);
  Eigen::VectorXd om(static_cast<Eigen::Index>(omega.size()) + 1);
  for (std::size_t j = 0; j < omega.size(); ++j) om[static_cast<Eigen::Index>(j)] = omega[j];
  om[om.size() - 1] = parse_double(get("nb_weight"));

  FitResult& r = a.fit;
  r.params = ModelParams(parse_double(get("phi")), parse_double(get("alpha")), beta, om);
  r.candidates = CandidateSet(cand);
  r.family = parse_family(get("family"));
  r.lambda1 = parse_double(get("lambda1"));
  r.lambda2 = parse_double(get("lambda2"));
  r.n = static_cast<std::size_t>(parse_integer(get("n")));
  r.log_likelihood = parse_double(get("log_likelihood"));
  r.penalized_objective = parse_double(get("penalized_objective"));
  r.df = static_cast<int>(parse_integer(get("df")));
  r.bic = parse_double(get("bic"));
  r.trace.iters = static_cast<int>(parse_integer(get("iterations")));
  r.trace.converged = parse_integer(get("converged")) != 0;
  r.trace.objective_per_iter = trace;
  r.selected_covariates = coef_sel;
  r.selected_values = cand_sel;

  // grid rows are lambda1-major
  std::vector<double> l1, l2;
  for (const auto& g : grid_rows) {
    if (l1.empty() || l1.back() != g[0]) l1.push_back(g[0]);
    if (l1.size() == 1) l2.push_back(g[1]);
  }
  if (!grid_rows.empty()) {
    if (l1.size() * l2.size() != grid_rows.size()) throw ParseError("grid section is not a full lambda1 x lambda2 table", 0, 0);
    a.grid = {l1, l2};
    const auto rows = static_cast<Eigen::Index>(l1.size()), cols = static_cast<Eigen::Index>(l2.size());
    a.bic_surface.resize(rows, cols);
    a.nonzero_beta.resize(rows, cols);
    a.nonzero_omega.resize(rows, cols);
    for (std::size_t k = 0; k < grid_rows.size(); ++k) {
      const auto ri = static_cast<Eigen::Index>(k / l2.size()), ci = static_cast<Eigen::Index>(k % l2.size());
      a.bic_surface(ri, ci) = grid_rows[k][2];
      a.nonzero_beta(ri, ci) = static_cast<int>(grid_rows[k][3]);
      a.nonzero_omega(ri, ci) = static_cast<int>(grid_rows[k][4]);
    }
  }
  return a;
}

inline FitArtifact read_fit_artifact(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fit artifact '" + path + "'");
  return parse_fit_artifact(in);
}

}  // namespace minb
