#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "ftmlp/fault.hpp"

namespace {

using namespace ftmlp;
using fault::DegradationRow;
using nn::FailureMask;
using nn::NetworkSpec;
using nn::NeuronId;
using nn::Parameters;

Parameters<double> random_net(const NetworkSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  auto p = nn::init_params<double>(spec, nn::InitScheme::he, rng);
  for (auto& layer : p.layers)
    for (auto& b : layer.bias) b = rng.uniform(-0.3, 0.3);
  return p;
}

data::Dataset small_test(std::size_t n = 200) {
  data::DataGenConfig cfg;
  cfg.n_train = 1;
  cfg.n_test = n;
  return data::generate(cfg).second;
}

// Forward pass written against the raw arrays: relu hidden, linear output,
// activation of a failed neuron forced to 0.
double brute_force(const NetworkSpec& spec, const Parameters<double>& p, std::span<const double> x,
                   const std::vector<NeuronId>& failed) {
  std::vector<double> a(x.begin(), x.end());
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    const auto& L = p.layer(l);
    std::vector<double> next(L.width);
    for (std::size_t j = 0; j < L.width; ++j) {
      double z = L.bias[j];
      for (std::size_t i = 0; i < L.fan_in; ++i) z += L.weights[j * L.fan_in + i] * a[i];
      if (l < spec.depth()) z = std::max(z, 0.0);
      for (auto f : failed)
        if (f.layer == l && f.neuron == j) z = 0.0;
      next[j] = z;
    }
    a = std::move(next);
  }
  return a[0];
}

double brute_mse(const NetworkSpec& spec, const Parameters<double>& p, const data::Dataset& d,
                 const std::vector<NeuronId>& failed) {
  double acc = 0;
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const double e = d.y[r] - brute_force(spec, p, d.row(r), failed);
    acc += e * e;
  }
  return acc / static_cast<double>(d.rows());
}

TEST(Evaluate, EmptyFailureSetIsBaseline) {
  const auto spec = NetworkSpec::reference();
  const auto p = random_net(spec, 1);
  const auto d = small_test();
  EXPECT_EQ(fault::evaluate(spec, p, d), fault::evaluate(spec, p, d, FailureMask{}));
  EXPECT_NEAR(fault::evaluate(spec, p, d), brute_mse(spec, p, d, {}), 1e-12);
}

TEST(Evaluate, AllHiddenFailedIsConstantPredictor) {
  const auto spec = NetworkSpec::reference();
  const auto p = random_net(spec, 2);
  const auto d = small_test();
  const FailureMask all(spec, spec.hidden_neurons());
  const auto preds = fault::predict(spec, p, d, all);
  const double constant = p.layer(3).bias[0];
  double acc = 0;
  for (std::size_t r = 0; r < d.rows(); ++r) {
    ASSERT_EQ(preds[r], constant);
    acc += (d.y[r] - constant) * (d.y[r] - constant);
  }
  EXPECT_NEAR(fault::evaluate(spec, p, d, all), acc / static_cast<double>(d.rows()), 1e-12);
}

TEST(Evaluate, SingleFailureMatchesBruteForce) {
  const auto spec = NetworkSpec::reference();
  const auto p = random_net(spec, 3);
  const auto d = small_test(100);
  for (const auto& id : spec.hidden_neurons())
    EXPECT_NEAR(fault::evaluate(spec, p, d, FailureMask(spec, {id})), brute_mse(spec, p, d, {id}), 1e-12)
        << nn::to_string(id);
}

TEST(Evaluate, FailureOrderDoesNotMatter) {
  const auto spec = NetworkSpec::reference();
  const auto p = random_net(spec, 4);
  const auto d = small_test(100);
  const std::vector<NeuronId> a{{1, 2}, {2, 7}, {1, 9}};
  const std::vector<NeuronId> b{{1, 9}, {1, 2}, {2, 7}, {1, 2}};
  EXPECT_EQ(fault::evaluate(spec, p, d, FailureMask(spec, a)), fault::evaluate(spec, p, d, FailureMask(spec, b)));
}

TEST(Evaluate, WidthMismatchIsContractError) {
  NetworkSpec spec{{5, 3, 1}, nn::Activation::relu, nn::Activation::linear};
  const auto p = random_net(spec, 5);
  EXPECT_THROW(fault::evaluate(spec, p, small_test(10)), ContractError);
}

TEST(Sweep, KZeroIsBaselineAndRowsAreOrdered) {
  const auto spec = NetworkSpec::reference();
  const auto p = random_net(spec, 6);
  const auto d = small_test();
  const std::vector<std::size_t> ks{0, 1, 3, 20};
  Rng rng(7);
  fault::SweepOptions opt;
  opt.trials = 20;
  opt.permutations = 200;
  const auto rows = fault::degradation_sweep(spec, p, d, ks, rng, opt);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].mean_mse, fault::evaluate(spec, p, d));
  EXPECT_EQ(rows[0].degradation_pct, 0.0);
  EXPECT_EQ(rows[0].p_value, 1.0);
  // every hidden neuron failed: each trial is the same constant predictor
  EXPECT_NEAR(rows[3].mean_mse, fault::evaluate(spec, p, d, FailureMask(spec, spec.hidden_neurons())), 1e-12);
  EXPECT_NEAR(rows[3].std_mse, 0.0, 1e-12);
}

TEST(Sweep, SeededAndRepeatable) {
  const auto spec = NetworkSpec::reference();
  const auto p = random_net(spec, 8);
  const auto d = small_test(100);
  const std::vector<std::size_t> ks{0, 2, 5};
  fault::SweepOptions opt;
  opt.trials = 10;
  opt.permutations = 100;
  Rng a(9), b(9);
  const auto ra = fault::degradation_sweep(spec, p, d, ks, a, opt);
  const auto rb = fault::degradation_sweep(spec, p, d, ks, b, opt);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra[i].mean_mse, rb[i].mean_mse);
    EXPECT_EQ(ra[i].p_value, rb[i].p_value);
  }
}

TEST(Sweep, RejectsTooManyFailures) {
  const auto spec = NetworkSpec::reference();
  const auto p = random_net(spec, 10);
  const std::vector<std::size_t> ks{0, 21};
  Rng rng(1);
  EXPECT_THROW(fault::degradation_sweep(spec, p, small_test(10), ks, rng), ContractError);
  fault::SweepOptions opt;
  opt.layer = 2;
  const std::vector<std::size_t> eleven{11};
  EXPECT_THROW(fault::degradation_sweep(spec, p, small_test(10), eleven, rng, opt), ContractError);
}

TEST(Sweep, DrawFailuresAreDistinct) {
  const auto spec = NetworkSpec::reference();
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    auto ids = fault::draw_failures(spec.hidden_neurons(), 7, rng);
    std::sort(ids.begin(), ids.end());
    EXPECT_EQ(std::unique(ids.begin(), ids.end()), ids.end());
    EXPECT_EQ(ids.size(), 7u);
  }
}

std::vector<DegradationRow> rows_of(std::vector<std::pair<std::size_t, double>> pts) {
  std::vector<DegradationRow> rows;
  for (auto [k, m] : pts) {
    DegradationRow r;
    r.k = k;
    r.mean_mse = m;
    rows.push_back(r);
  }
  return rows;
}

TEST(Threshold, InterpolatedCrossing) {
  // limit 0.02; crossing between k=4 (0.018) and k=5 (0.026) at 4 + 0.002/0.008 = 4.25
  const auto rows = rows_of({{0, 0.01}, {1, 0.011}, {2, 0.012}, {3, 0.015}, {4, 0.018}, {5, 0.026}, {6, 0.03}});
  const auto est = fault::estimate_critical_threshold(rows, 2.0, 20);
  EXPECT_FALSE(est.censored);
  EXPECT_NEAR(est.k_cross, 4.25, 1e-12);
  EXPECT_NEAR(est.p_c, 0.2125, 1e-12);
}

TEST(Threshold, FlatCurveIsCensored) {
  const auto rows = rows_of({{0, 0.01}, {1, 0.01}, {4, 0.012}, {7, 0.015}});
  const auto est = fault::estimate_critical_threshold(rows, 2.0, 20);
  EXPECT_TRUE(est.censored);
  EXPECT_NEAR(est.p_c, 7.0 / 20.0, 1e-15);
}

TEST(Threshold, RequiresBaselineRowAndSortedK) {
  EXPECT_THROW(fault::estimate_critical_threshold(rows_of({{1, 0.01}}), 2.0, 20), ContractError);
  EXPECT_THROW(fault::estimate_critical_threshold(rows_of({{0, 0.01}, {3, 1}, {2, 2}}), 2.0, 20), ContractError);
  EXPECT_THROW(fault::estimate_critical_threshold(rows_of({{0, 0.01}}), 2.0, 0), ContractError);
}

TEST(Significance, IdenticalSamplesGiveOne) {
  const std::vector<double> a(30, 0.5);
  Rng rng(12);
  EXPECT_EQ(fault::significance_test(a, a, rng, 1000), 1.0);
}

TEST(Significance, SeparatedSamplesAreSignificant) {
  Rng draw(13);
  std::vector<double> a(30), b(30);
  for (auto& v : a) v = draw.normal(0.0, 0.1);
  for (auto& v : b) v = draw.normal(10.0, 0.1);
  Rng rng(14);
  // no permutation can beat the observed split, so p = 1 / (permutations + 1)
  const double p = fault::significance_test(a, b, rng, 10000);
  EXPECT_LT(p, 0.001);
  EXPECT_NEAR(p, 1.0 / 10001.0, 1e-15);
}

TEST(Significance, SameSeedSameP) {
  Rng draw(15);
  std::vector<double> a(40), b(40);
  for (auto& v : a) v = draw.normal(0.0, 1.0);
  for (auto& v : b) v = draw.normal(0.3, 1.0);
  Rng r1(16), r2(16);
  EXPECT_EQ(fault::significance_test(a, b, r1, 2000), fault::significance_test(a, b, r2, 2000));
}

TEST(Significance, NullSamplesAreNotSignificant) {
  Rng draw(17);
  std::vector<double> a(50), b(50);
  for (auto& v : a) v = draw.normal(1.0, 1.0);
  for (auto& v : b) v = draw.normal(1.0, 1.0);
  Rng rng(18);
  EXPECT_GT(fault::significance_test(a, b, rng, 2000), 0.01);
}

TEST(Profile, OneEntryPerHiddenNeuron) {
  const auto spec = NetworkSpec::reference();
  const auto p = random_net(spec, 19);
  const auto d = small_test(50);
  const auto prof = fault::single_failure_profile(spec, p, d);
  ASSERT_EQ(prof.size(), 20u);
  for (const auto& s : prof) EXPECT_NEAR(s.mse, brute_mse(spec, p, d, {s.neuron}), 1e-12);
}

}  // namespace
