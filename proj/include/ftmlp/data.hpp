#pragma once

// Synthetic regression data: X ~ Uniform(-1, 1)^d, y = g(X) + N(0, sigma^2),
// plus CSV persistence that round-trips every double exactly.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "ftmlp/error.hpp"
#include "ftmlp/rng.hpp"

namespace ftmlp::data {

inline constexpr std::string_view kTargetVersion = "g-v1";

struct DataGenConfig {
  std::uint64_t seed = 42;
  std::size_t n_train = 5000;
  std::size_t n_test = 1000;
  std::size_t feature_dim = 10;
  double noise_sigma = 0.1;

  void validate() const {
    if (n_train == 0 || n_test == 0) throw ConfigError("dataset sizes must be >= 1");
    if (feature_dim < 10) throw ConfigError("target function needs at least 10 features");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be >= 0");
  }
};

enum class Split { train, test };

struct Dataset {
  std::size_t dim = 0;
  std::vector<double> x;  // row-major rows() x dim
  std::vector<double> y;
  Split split = Split::train;

  std::size_t rows() const { return y.size(); }
  std::span<const double> row(std::size_t i) const { return {x.data() + i * dim, dim}; }

  bool operator==(const Dataset&) const = default;
};

// sin(pi x1) + x2 x3 + 0.5 x4^2 - x5 + 0.2 tanh(3 x6) + 0.1 x7 x8 - 0.15 x9 x10
inline double target_function(std::span<const double> x) {
  return std::sin(std::numbers::pi * x[0]) + x[1] * x[2] + 0.5 * x[3] * x[3] - x[4] + 0.2 * std::tanh(3.0 * x[5]) +
         0.1 * x[6] * x[7] - 0.15 * x[8] * x[9];
}

namespace detail {

inline Dataset draw(std::size_t n, std::size_t dim, double sigma, Rng& rng, Split split) {
  Dataset d;
  d.dim = dim;
  d.split = split;
  d.x.resize(n * dim);
  d.y.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < dim; ++c) d.x[r * dim + c] = rng.uniform(-1.0, 1.0);
    double y = target_function(d.row(r));
    if (sigma > 0.0) y += sigma * rng.normal();
    d.y[r] = y;
  }
  return d;
}

}  // namespace detail

// Train and test come from independent seeded streams.
inline std::pair<Dataset, Dataset> generate(const DataGenConfig& cfg) {
  cfg.validate();
  Rng train_rng(derive_seed(cfg.seed, 101));
  Rng test_rng(derive_seed(cfg.seed, 102));
  auto train = detail::draw(cfg.n_train, cfg.feature_dim, cfg.noise_sigma, train_rng, Split::train);
  auto test = detail::draw(cfg.n_test, cfg.feature_dim, cfg.noise_sigma, test_rng, Split::test);
  return {std::move(train), std::move(test)};
}

// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, res.ptr);
  // 1e-08 -> 1e-8
  if (auto e = s.find('e'); e != std::string::npos) {
    auto digits = e + 1 + (s[e + 1] == '-' || s[e + 1] == '+');
    while (digits + 1 < s.size() && s[digits] == '0') s.erase(digits, 1);
  }
  return s;
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last) throw ParseError("not a number: '" + std::string(s) + "'");
  return v;
}

inline std::string csv_header(std::size_t dim) {
  std::string h;
  for (std::size_t c = 0; c < dim; ++c) h += "x" + std::to_string(c + 1) + ",";
  return h + "y";
}

inline void write_csv(std::ostream& out, const Dataset& d) {
  out << csv_header(d.dim) << '\n';
  for (std::size_t r = 0; r < d.rows(); ++r) {
    for (std::size_t c = 0; c < d.dim; ++c) out << format_double(d.x[r * d.dim + c]) << ',';
    out << format_double(d.y[r]) << '\n';
  }
}

inline void write_csv(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_csv(out, d);
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline Dataset read_csv(std::istream& in, Split split = Split::train) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  if (header.size() < 2 || header.back() != "y") throw ParseError("line 1: header must end with 'y'");
  Dataset d;
  d.dim = header.size() - 1;
  d.split = split;
  if (line != csv_header(d.dim)) throw ParseError("line 1: expected header '" + csv_header(d.dim) + "'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != d.dim + 1)
      throw ParseError("line " + std::to_string(lineno) + ": expected " + std::to_string(d.dim + 1) +
                       " fields, got " + std::to_string(fields.size()));
    try {
      for (std::size_t c = 0; c < d.dim; ++c) d.x.push_back(parse_double(fields[c]));
      d.y.push_back(parse_double(fields[d.dim]));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return d;
}

inline Dataset read_csv(const std::filesystem::path& path, Split split = Split::train) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return read_csv(in, split);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline std::string metadata(const DataGenConfig& cfg) {
  std::ostringstream out;
  out << "seed=" << cfg.seed << '\n'
      << "n_train=" << cfg.n_train << '\n'
      << "n_test=" << cfg.n_test << '\n'
      << "feature_dim=" << cfg.feature_dim << '\n'
      << "noise_sigma=" << format_double(cfg.noise_sigma) << '\n'
      << "target=" << kTargetVersion << '\n';
  return out.str();
}

// train.csv, test.csv and dataset.meta under dir.
inline void write_dataset_dir(const std::filesystem::path& dir, const DataGenConfig& cfg, const Dataset& train,
                              const Dataset& test) {
  std::filesystem::create_directories(dir);
  write_csv(dir / "train.csv", train);
  write_csv(dir / "test.csv", test);
  std::ofstream meta(dir / "dataset.meta", std::ios::binary);
  meta << metadata(cfg);
}

}  // namespace ftmlp::data
