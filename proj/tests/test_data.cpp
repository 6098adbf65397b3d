#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ftmlp/data.hpp"

namespace {

using namespace ftmlp;
using data::DataGenConfig;

TEST(Generate, DefaultShapes) {
  const auto [tr, te] = data::generate(DataGenConfig{});
  EXPECT_EQ(tr.rows(), 5000u);
  EXPECT_EQ(tr.x.size(), 5000u * 10);
  EXPECT_EQ(te.rows(), 1000u);
  EXPECT_EQ(te.x.size(), 1000u * 10);
  for (double v : tr.x) {
    ASSERT_GE(v, -1.0);
    ASSERT_LT(v, 1.0);
  }
}

TEST(Generate, NoiselessTargetReproducesBitwise) {
  DataGenConfig cfg;
  cfg.noise_sigma = 0.0;
  cfg.n_train = 200;
  cfg.n_test = 50;
  const auto [tr, te] = data::generate(cfg);
  for (std::size_t r = 0; r < tr.rows(); ++r) {
    const auto x = tr.row(r);
    // written out independently of the library helper
    const double y = std::sin(std::numbers::pi * x[0]) + x[1] * x[2] + 0.5 * x[3] * x[3] - x[4] +
                     0.2 * std::tanh(3.0 * x[5]) + 0.1 * x[6] * x[7] - 0.15 * x[8] * x[9];
    ASSERT_EQ(tr.y[r], y) << "row " << r;
  }
}

TEST(Generate, NoiseHasConfiguredSpread) {
  const auto [tr, te] = data::generate(DataGenConfig{});
  double sum = 0, sq = 0;
  for (std::size_t r = 0; r < tr.rows(); ++r) {
    const double e = tr.y[r] - data::target_function(tr.row(r));
    sum += e;
    sq += e * e;
  }
  const double n = static_cast<double>(tr.rows());
  const double sd = std::sqrt((sq - sum * sum / n) / (n - 1));
  EXPECT_GE(sd, 0.095);
  EXPECT_LE(sd, 0.105);
}

TEST(Generate, SameSeedSameData) {
  DataGenConfig cfg;
  cfg.n_train = 100;
  cfg.n_test = 20;
  EXPECT_EQ(data::generate(cfg), data::generate(cfg));
  auto other = cfg;
  other.seed = cfg.seed + 1;
  EXPECT_NE(data::generate(other).first, data::generate(cfg).first);
}

TEST(Generate, TrainAndTestAreIndependentDraws) {
  const auto [tr, te] = data::generate(DataGenConfig{});
  EXPECT_NE(tr.x[0], te.x[0]);
  EXPECT_NE(std::vector<double>(tr.x.begin(), tr.x.begin() + 1000), te.x);
}

TEST(Generate, RejectsBadConfig) {
  DataGenConfig cfg;
  cfg.n_train = 0;
  EXPECT_THROW(data::generate(cfg), ConfigError);
  cfg = {};
  cfg.feature_dim = 5;
  EXPECT_THROW(data::generate(cfg), ConfigError);
  cfg = {};
  cfg.noise_sigma = -1;
  EXPECT_THROW(data::generate(cfg), ConfigError);
}

TEST(Csv, RoundTripIsBitExact) {
  DataGenConfig cfg;
  cfg.n_train = 300;
  cfg.n_test = 10;
  const auto [tr, te] = data::generate(cfg);
  std::stringstream buf;
  data::write_csv(buf, tr);
  const auto back = data::read_csv(buf);
  EXPECT_EQ(back, tr);
}

TEST(Csv, HeaderAndLineCount) {
  DataGenConfig cfg;
  cfg.n_train = 7;
  cfg.n_test = 3;
  const auto [tr, te] = data::generate(cfg);
  std::stringstream buf;
  data::write_csv(buf, tr);
  std::string line;
  std::getline(buf, line);
  EXPECT_EQ(line, "x1,x2,x3,x4,x5,x6,x7,x8,x9,x10,y");
  int rows = 0;
  while (std::getline(buf, line)) ++rows;
  EXPECT_EQ(rows, 7);
}

TEST(Csv, ShortRowNamesItsLine) {
  std::stringstream buf;
  buf << "x1,x2,x3,x4,x5,x6,x7,x8,x9,x10,y\n"
      << "0,0,0,0,0,0,0,0,0,0,1\n"
      << "0,0,0,0,0,0,0,0,0,1\n";
  try {
    data::read_csv(buf);
    FAIL() << "expected parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(Csv, GarbageNumberNamesItsLine) {
  std::stringstream buf;
  buf << "x1,x2,x3,x4,x5,x6,x7,x8,x9,x10,y\n"
      << "0,0,0,0,0,0,0,0,0,zero,1\n";
  try {
    data::read_csv(buf);
    FAIL() << "expected parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Csv, BadHeaderRejected) {
  std::stringstream buf;
  buf << "a,b,c\n1,2,3\n";
  EXPECT_THROW(data::read_csv(buf), ParseError);
}

TEST(Csv, FormatDoubleIsShortestExact) {
  for (double v : {0.1, 1e-8, -3.25, 1.0 / 3.0, 6.02214076e23, 5e-324}) {
    const auto s = data::format_double(v);
    EXPECT_EQ(data::parse_double(s), v) << s;
  }
  EXPECT_EQ(data::format_double(1e-8), "1e-8");
  EXPECT_EQ(data::format_double(0.001), "0.001");
}

TEST(Csv, DatasetDirectoryLayout) {
  const auto dir = std::filesystem::temp_directory_path() / "ftmlp_test_data_dir";
  std::filesystem::remove_all(dir);
  DataGenConfig cfg;
  cfg.n_train = 4;
  cfg.n_test = 2;
  const auto [tr, te] = data::generate(cfg);
  data::write_dataset_dir(dir, cfg, tr, te);
  EXPECT_EQ(data::read_csv(dir / "train.csv"), tr);
  EXPECT_EQ(data::read_csv(dir / "test.csv", data::Split::test), te);
  std::ifstream meta(dir / "dataset.meta");
  std::stringstream text;
  text << meta.rdbuf();
  EXPECT_NE(text.str().find("target=g-v1"), std::string::npos);
  std::filesystem::remove_all(dir);
}

}  // namespace
