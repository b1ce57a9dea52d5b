#pragma once

// CSV input for datasets: header row, first column `y` (integer counts),
// remaining columns numeric covariates.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "minb/error.hpp"
#include "minb/model.hpp"

namespace minb {

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

inline bool is_skippable(std::string_view line) {
  line = trim(line);
  return line.empty() || line.front() == '#';
}

}  // namespace detail

struct LabeledDataset {
  Dataset data;
  std::vector<std::string> covariate_names;
};

/// Parses CSV text. Rows/columns in error messages are 1-based and count the header.
inline LabeledDataset parse_dataset_csv(std::istream& in) {
  std::string line;
  std::size_t row = 0;
  std::vector<std::string> names;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++row;
    if (detail::is_skippable(line)) continue;
    auto fields = detail::split_csv_line(line);
    if (detail::trim(fields[0]) != "y") throw ParseError("first column must be named 'y'", row, 1);
    for (std::size_t c = 1; c < fields.size(); ++c) names.emplace_back(detail::trim(fields[c]));
    have_header = true;
    break;
  }
  if (!have_header) throw ParseError("missing header row", row, 1);

  const std::size_t p = names.size();
  std::vector<Count> y;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++row;
    if (detail::is_skippable(line)) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != p + 1)
      throw ParseError("expected " + std::to_string(p + 1) + " fields, got " + std::to_string(fields.size()), row,
                       std::min(fields.size(), p + 1));
    const auto yf = detail::trim(fields[0]);
    Count yv = 0;
    auto [yp, yec] = std::from_chars(yf.data(), yf.data() + yf.size(), yv);
    if (yec != std::errc() || yp != yf.data() + yf.size()) throw ParseError("response is not an integer", row, 1);
    if (yv < 0) throw ParseError("response must be non-negative", row, 1);
    y.push_back(yv);
    for (std::size_t c = 1; c <= p; ++c) {
      const auto f = detail::trim(fields[c]);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v))
        throw ParseError("covariate is not a finite number", row, c + 1);
      values.push_back(v);
    }
  }
  if (y.empty()) throw ParseError("no data rows", row, 1);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(y.size()), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t c = 0; c < p; ++c)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = values[i * p + c];
  return {Dataset(std::move(y), std::move(x)), std::move(names)};
}

inline LabeledDataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  return parse_dataset_csv(in);
}

/// Writes `y,x1,...,xp` with 17 significant digits so values reload exactly.
inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
  out << 'y';
  for (std::size_t j = 0; j < data.p(); ++j) out << ",x" << (j + 1);
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < data.n(); ++i) {
    out << data.y(i);
    for (std::size_t j = 0; j < data.p(); ++j) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, data.x()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
      out << ',' << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
    }
    out << '\n';
  }
}

}  // namespace minb
