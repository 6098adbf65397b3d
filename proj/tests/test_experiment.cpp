#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ftmlp/experiment.hpp"

namespace {

using namespace ftmlp;
namespace fs = std::filesystem;

const char* kSmall =
    "seeds=1,2\n"
    "data.n_train=300\n"
    "data.n_test=120\n"
    "train.epochs=3\n"
    "sweep.trials=5\n"
    "sweep.permutations=50\n"
    "sim.workload=20\n";

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ftmlp_exp_" + name);
  fs::remove_all(p);
  return p;
}

std::size_t lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

class SuiteTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    first = new fs::path(scratch("first"));
    cfg = new suite::ExperimentConfig(suite::ExperimentConfig::from(KeyValues::parse(kSmall)));
    report = new suite::ExperimentReport(suite::run_experiment_suite(*cfg, *first));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*first);
    delete first;
    delete cfg;
    delete report;
  }
  static fs::path* first;
  static suite::ExperimentConfig* cfg;
  static suite::ExperimentReport* report;
};

fs::path* SuiteTest::first = nullptr;
suite::ExperimentConfig* SuiteTest::cfg = nullptr;
suite::ExperimentReport* SuiteTest::report = nullptr;

TEST_F(SuiteTest, WritesEveryTable) {
  for (const char* f : {"effective.cfg", "degradation.csv", "degradation_by_seed.csv", "dropout_vs_plain.csv",
                        "thresholds.csv", "recovery.csv", "disconnect.csv", "summary.md"})
    EXPECT_TRUE(fs::exists(*first / f)) << f;
}

TEST_F(SuiteTest, DegradationHasEightKRows) {
  const auto csv = suite::read_text(*first / "degradation.csv");
  EXPECT_EQ(lines(csv), 9u);
  EXPECT_TRUE(csv.starts_with("k,mean_mse,degradation_pct,std,trials,p_value\n0,"));
  EXPECT_NE(csv.find("\n7,"), std::string::npos);
  EXPECT_EQ(lines(suite::read_text(*first / "degradation_by_seed.csv")), 1u + 2 * 8);
}

TEST_F(SuiteTest, RecoveryHasOneRowPerFault) {
  const auto csv = suite::read_text(*first / "recovery.csv");
  // single (1) + multiple (3) + coordinator (1)
  EXPECT_EQ(lines(csv), 6u);
  EXPECT_NE(csv.find("coordinator,c0,"), std::string::npos);
}

TEST_F(SuiteTest, DisconnectHasFiveExperiments) {
  const auto csv = suite::read_text(*first / "disconnect.csv");
  EXPECT_EQ(lines(csv), 6u);
  for (const char* e : {"\nexp1,1,", "\nexp2,2,", "\nexp3,3,", "\nexp4,5,", "\nexp5,7,"})
    EXPECT_NE(csv.find(e), std::string::npos) << e;
}

TEST_F(SuiteTest, RerunIsByteIdentical) {
  const auto second = scratch("second");
  const auto again = suite::run_experiment_suite(*cfg, second);
  ASSERT_EQ(again.files, report->files);
  for (const auto& f : report->files) EXPECT_EQ(suite::read_text(*first / f), suite::read_text(second / f)) << f;
  fs::remove_all(second);
}

TEST_F(SuiteTest, EmbeddedConfigReproducesRun) {
  const auto replay_cfg = suite::ExperimentConfig::from(KeyValues::load(*first / "effective.cfg"));
  EXPECT_EQ(replay_cfg.effective().dump(), cfg->effective().dump());
  const auto replay = scratch("replay");
  suite::run_experiment_suite(replay_cfg, replay);
  for (const auto& f : report->files) EXPECT_EQ(suite::read_text(*first / f), suite::read_text(replay / f)) << f;
  fs::remove_all(replay);
}

TEST_F(SuiteTest, SummaryEmbedsConfigAndTables) {
  const auto md = suite::read_text(*first / "summary.md");
  EXPECT_NE(md.find(cfg->effective().dump()), std::string::npos);
  EXPECT_NE(md.find("version: "), std::string::npos);
  EXPECT_NE(md.find("| k | mean_mse |"), std::string::npos);
}

TEST_F(SuiteTest, ReportIsPureFunctionOfCsvs) {
  const auto a = suite::render_report(*first);
  const auto copy = scratch("copy");
  fs::create_directories(copy);
  for (const auto& e : fs::directory_iterator(*first))
    if (e.path().extension() == ".csv") fs::copy_file(e.path(), copy / e.path().filename());
  EXPECT_EQ(suite::render_report(copy), a);
  fs::remove_all(copy);
  EXPECT_TRUE(a.starts_with("# Report\n"));
  EXPECT_NE(a.find("## degradation.csv"), std::string::npos);
}

// Disconnection analogs on the default configuration: the measured
// post-kill MSE over the same requests without the kill.
class DisconnectDefaults : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const auto dir = scratch("disconnect");
    KeyValues kv;
    kv.set("experiment", "disconnect");
    suite::run_experiment_suite(suite::ExperimentConfig::from(kv), dir);
    std::istringstream in(suite::read_text(dir / "disconnect.csv"));
    std::string line;
    std::getline(in, line);
    rows = new std::map<std::string, std::vector<std::string>>();
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      for (auto v : data::split_fields(line)) f.emplace_back(v);
      (*rows)[f.at(0)] = f;
    }
    fs::remove_all(dir);
  }
  static void TearDownTestSuite() { delete rows; }

  // columns: experiment,killed_count,killed,kill_ms,requests,post_kill_ok,
  // baseline_mse,post_mse,inflation_pct,ok,failed,unanswered,live,band
  static double ratio(const std::string& exp) {
    const auto& f = rows->at(exp);
    return data::parse_double(f.at(7)) / data::parse_double(f.at(6));
  }
  static inline std::map<std::string, std::vector<std::string>>* rows = nullptr;
};

TEST_F(DisconnectDefaults, Exp4FiveKilledIsNoticeableButFunctional) {
  const auto& f = rows->at("exp4");
  EXPECT_EQ(f.at(1), "5");
  EXPECT_EQ(f.at(12), "true");
  EXPECT_EQ(f.at(11), "0");
  EXPECT_GT(ratio("exp4"), 1.0);
  EXPECT_LE(ratio("exp4"), 2.0);
}

TEST_F(DisconnectDefaults, Exp5SevenKilledExceedsTwiceBaseline) {
  EXPECT_EQ(rows->at("exp5").at(1), "7");
  EXPECT_EQ(rows->at("exp5").at(12), "true");
  EXPECT_GT(ratio("exp5"), 2.0);
}

TEST_F(DisconnectDefaults, AllRunsStayLive) {
  for (const auto& [name, f] : *rows) {
    EXPECT_EQ(f.at(11), "0") << name;
    EXPECT_EQ(f.at(12), "true") << name;
  }
}

TEST(SuiteConfig, Validation) {
  EXPECT_THROW(suite::ExperimentConfig::from(KeyValues::parse("experiment=bogus\n")), ConfigError);
  EXPECT_THROW(suite::ExperimentConfig::from(KeyValues::parse("sweep.k_max=21\n")), ConfigError);
  EXPECT_THROW(suite::ExperimentConfig::from(KeyValues::parse("sweep.factor=1\n")), ConfigError);
  EXPECT_THROW(suite::ExperimentConfig::from(KeyValues::parse("seeds=\n")), ConfigError);
  EXPECT_THROW(suite::ExperimentConfig::from(KeyValues::parse("sim.workload=5000\n")), ConfigError);
  EXPECT_THROW(suite::ExperimentConfig::from(KeyValues::parse("net.layers=9,10,1\n")), ConfigError);
  const auto d = suite::ExperimentConfig::from(KeyValues{});
  EXPECT_EQ(d.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_EQ(d.trials, 100u);
  EXPECT_EQ(d.train.epochs, 200u);
}

TEST(Render, CsvToMarkdown) {
  EXPECT_EQ(suite::render_csv_markdown("# note\na,b\n1,2\n"), "> note\n| a | b |\n|---|---|\n| 1 | 2 |\n");
}

}  // namespace
