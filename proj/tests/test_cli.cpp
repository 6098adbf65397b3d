#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ftmlp/data.hpp"
#include "ftmlp/deploy.hpp"
#include "ftmlp/fault.hpp"

namespace {

namespace fs = std::filesystem;
using namespace ftmlp;

struct Run {
  int status = -1;
  std::string output;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(FTMLP_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.output.append(buf, n);
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("ftmlp_cli_" + std::to_string(::getpid()) + "_" +
                                       ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string at(const std::string& name) const { return (dir / name).string(); }

  fs::path dir;
};

const std::string kConfig = std::string(FTMLP_SOURCE_DIR) + "/configs/reference.cfg";

TEST_F(CliTest, GenDataWritesReferenceSizes) {
  const auto r = cli("gen-data --seed 42 --out " + at("d"));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(lines_of(dir / "d" / "train.csv").size(), 5001u);
  EXPECT_EQ(lines_of(dir / "d" / "test.csv").size(), 1001u);
  EXPECT_TRUE(fs::exists(dir / "d" / "dataset.meta"));
  EXPECT_EQ(lines_of(dir / "d" / "train.csv").front(), data::csv_header(10));
}

TEST_F(CliTest, GenDataIsDeterministic) {
  ASSERT_EQ(cli("gen-data --seed 5 --out " + at("a")).status, 0);
  ASSERT_EQ(cli("gen-data --seed 5 --out " + at("b")).status, 0);
  ASSERT_EQ(cli("gen-data --seed 6 --out " + at("c")).status, 0);
  EXPECT_EQ(lines_of(dir / "a" / "test.csv"), lines_of(dir / "b" / "test.csv"));
  EXPECT_NE(lines_of(dir / "a" / "test.csv"), lines_of(dir / "c" / "test.csv"));
}

TEST_F(CliTest, TrainEchoesReferenceHyperparameters) {
  const auto r = cli("train --config " + kConfig + " --out " + at("t"));
  ASSERT_EQ(r.status, 0) << r.output;
  const auto log = lines_of(dir / "t" / "train_log.csv");
  for (const std::string want : {"# eta=0.001", "# beta1=0.9", "# beta2=0.999", "# eps=1e-8", "# batch=64",
                                 "# epochs=200"}) {
    EXPECT_NE(std::find(log.begin(), log.end(), want), log.end()) << want;
    EXPECT_NE(r.output.find(want.substr(2) + "\n"), std::string::npos) << want;
  }
  // 200 epochs after the header line
  const auto header = std::find(log.begin(), log.end(), "epoch,train_loss,val_loss");
  ASSERT_NE(header, log.end());
  EXPECT_EQ(log.end() - header - 1, 200);
  EXPECT_TRUE(fs::exists(dir / "t" / "params.txt"));
  EXPECT_TRUE(fs::exists(dir / "t" / "effective.cfg"));
}

TEST_F(CliTest, UnknownFlagIsUsageError) {
  const auto r = cli("gen-data --bogus 1");
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(count_lines(r.output), 1u) << r.output;
}

TEST_F(CliTest, MissingFileIsUsageError) {
  const auto r = cli("train --config " + at("nope.cfg"));
  EXPECT_EQ(r.status, 2);
  EXPECT_EQ(count_lines(r.output), 1u) << r.output;
  EXPECT_EQ(cli("deploy --params " + at("nope.txt") + " --out " + at("b")).status, 2);
}

TEST_F(CliTest, UnknownSubcommandIsUsageError) { EXPECT_EQ(cli("frobnicate").status, 2); }

TEST_F(CliTest, BadFaultScheduleIsDiagnosed) {
  std::ofstream(at("tiny.cfg")) << "train.epochs=1\ndata.n_train=64\ndata.n_test=8\n";
  ASSERT_EQ(cli("train --config " + at("tiny.cfg") + " --out " + at("t")).status, 0);
  const auto r = cli("simulate --params " + at("t/params.txt") + " --config " + at("tiny.cfg") +
                     " --faults kill:9:9@t0 --count 4 --out " + at("s"));
  EXPECT_NE(r.status, 0);
  EXPECT_EQ(count_lines(r.output), 1u) << r.output;
}

std::vector<double> predictions(const fs::path& csv, std::vector<std::string>* outcomes = nullptr) {
  std::vector<double> out;
  auto lines = lines_of(csv);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = data::split_fields(lines[i]);
    if (outcomes) outcomes->emplace_back(f.at(1));
    out.push_back(f.at(4).empty() ? NAN : data::parse_double(f.at(4)));
  }
  return out;
}

TEST_F(CliTest, SimulatedKillDiffersOnlyPerFaultModel) {
  std::ofstream(at("small.cfg")) << "train.epochs=5\n";
  ASSERT_EQ(cli("gen-data --seed 42 --out " + at("d")).status, 0);
  auto r = cli("train --config " + at("small.cfg") + " --data " + at("d") + " --out " + at("t"));
  ASSERT_EQ(r.status, 0) << r.output;
  r = cli("deploy --params " + at("t/params.txt") + " --out " + at("b"));
  ASSERT_EQ(r.status, 0) << r.output;
  const std::string common = "simulate --bundle " + at("b") + " --data " + at("d") + " --count 50 ";
  r = cli(common + "--faults none --out " + at("clean"));
  ASSERT_EQ(r.status, 0) << r.output;
  r = cli(common + "--faults kill:1:3@t0 --out " + at("kill"));
  ASSERT_EQ(r.status, 0) << r.output;

  std::vector<std::string> oc_clean, oc_kill;
  const auto clean = predictions(dir / "clean" / "predictions.csv", &oc_clean);
  const auto kill = predictions(dir / "kill" / "predictions.csv", &oc_kill);
  ASSERT_EQ(clean.size(), 50u);
  ASSERT_EQ(kill.size(), 50u);

  nn::NetworkSpec spec;
  const auto params = deploy::read_bundle(dir / "b", &spec);
  auto test = data::read_csv(dir / "d" / "test.csv");
  test.x.resize(50 * test.dim);
  test.y.resize(50);
  const auto want_clean = fault::predict(spec, params, test);
  const auto want_kill = fault::predict(spec, params, test, nn::FailureMask(spec, {{1, 3}}));
  std::size_t changed = 0;
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(oc_clean[i], "ok");
    EXPECT_EQ(oc_kill[i], "ok");
    EXPECT_EQ(static_cast<float>(clean[i]), want_clean[i]) << i;
    EXPECT_EQ(static_cast<float>(kill[i]), want_kill[i]) << i;
    changed += clean[i] != kill[i];
  }
  // differences appear exactly where the oracle says the dead neuron mattered
  std::size_t oracle_changed = 0;
  for (std::size_t i = 0; i < 50; ++i) oracle_changed += want_clean[i] != want_kill[i];
  EXPECT_EQ(changed, oracle_changed);

  const auto rec = lines_of(dir / "kill" / "recovery.csv");
  ASSERT_EQ(rec.size(), 2u);
  EXPECT_EQ(rec[1].rfind("n1:3,0.000,50.000,", 0), 0u) << rec[1];
  EXPECT_EQ(lines_of(dir / "clean" / "recovery.csv").size(), 1u);
}

TEST_F(CliTest, SweepAndReport) {
  std::ofstream(at("s.cfg")) << "train.epochs=2\ndata.n_train=200\ndata.n_test=50\nsweep.trials=3\n"
                                "sweep.permutations=20\nsweep.k_max=3\n";
  ASSERT_EQ(cli("train --config " + at("s.cfg") + " --out " + at("t")).status, 0);
  auto r = cli("sweep --params " + at("t/params.txt") + " --config " + at("s.cfg") + " --seed 3 --out " + at("sw"));
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(lines_of(dir / "sw" / "degradation.csv").size(), 5u);
  r = cli("report --in " + at("sw") + " --out " + at("rp"));
  ASSERT_EQ(r.status, 0) << r.output;
  std::ifstream md(dir / "rp" / "report.md");
  std::stringstream ss;
  ss << md.rdbuf();
  EXPECT_NE(ss.str().find("degradation"), std::string::npos);
  EXPECT_NE(ss.str().find("| k |"), std::string::npos) << ss.str();
}

TEST_F(CliTest, EveryCommandAcceptsCommonFlags) {
  for (const std::string sub : {"gen-data", "train", "deploy", "simulate", "node", "coordinator", "inject", "infer",
                                "sweep", "experiment", "report"}) {
    const auto r = cli(sub + " --help");
    EXPECT_EQ(r.status, 0) << sub;
    for (const std::string flag : {"--seed", "--config", "--out"})
      EXPECT_NE(r.output.find(flag), std::string::npos) << sub << " " << flag;
  }
}

}  // namespace
