#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "ftmlp/trainer.hpp"

namespace {

using namespace ftmlp;
using nn::Activation;
using nn::NetworkSpec;
using nn::Parameters;
using train::TrainConfig;

NetworkSpec single_weight() { return {{1, 1}, Activation::relu, Activation::linear}; }

TEST(Masks, KeepOneIsAllOnes) {
  const auto spec = NetworkSpec::reference();
  Rng rng(1);
  const auto m = train::sample_masks<double>(spec, 1.0, rng);
  ASSERT_EQ(m.size(), 2u);
  for (const auto& layer : m)
    for (double v : layer) EXPECT_EQ(v, 1.0);
}

TEST(Masks, HalfKeepFractionAndScale) {
  NetworkSpec spec{{1, 10000, 1}, Activation::relu, Activation::linear};
  Rng rng(2);
  const auto m = train::sample_masks<double>(spec, 0.5, rng);
  std::size_t kept = 0;
  for (double v : m[0]) {
    ASSERT_TRUE(v == 0.0 || v == 2.0);
    kept += v != 0.0;
  }
  const double frac = static_cast<double>(kept) / 10000.0;
  EXPECT_GE(frac, 0.48);
  EXPECT_LE(frac, 0.52);
}

TEST(Masks, SeedDeterminesMasks) {
  const auto spec = NetworkSpec::reference();
  Rng a(3), b(3);
  EXPECT_EQ(train::sample_masks<double>(spec, 0.5, a), train::sample_masks<double>(spec, 0.5, b));
}

TEST(Masks, ZeroKeepIsConfigError) {
  const auto spec = NetworkSpec::reference();
  Rng rng(4);
  EXPECT_THROW(train::sample_masks<double>(spec, 0.0, rng), ConfigError);
}

TEST(Adam, ZeroGradientOnFreshStateLeavesParams) {
  const auto spec = NetworkSpec::reference();
  Rng rng(5);
  auto p = nn::init_params<double>(spec, nn::InitScheme::he, rng);
  const auto before = p;
  auto state = train::AdamState<double>::fresh(spec);
  train::adam_step(p, Parameters<double>::zeros(spec), state, TrainConfig{});
  EXPECT_EQ(p, before);
  EXPECT_EQ(state.t, 1u);
}

TEST(Adam, ThreeConstantStepsByHand) {
  // g = 1 each step, eta 0.001, beta (0.9, 0.999), eps 1e-8.
  // t=1: m=0.1      v=0.001      m^=1 v^=1
  // t=2: m=0.19     v=0.001999   m^=1 v^=1
  // t=3: m=0.271    v=0.002997001 m^=1 v^=1
  // so every step moves w by -0.001 / (1 + 1e-8) = -9.9999999e-4.
  const double step = -9.99999990000000099999999e-4;
  const double expected[3] = {step, 2 * step, 3 * step};
  const auto spec = single_weight();
  auto p = Parameters<double>::zeros(spec);
  auto g = Parameters<double>::zeros(spec);
  g.layer(1).weights = {1.0};
  g.layer(1).bias = {1.0};
  auto state = train::AdamState<double>::fresh(spec);
  for (int t = 0; t < 3; ++t) {
    train::adam_step(p, g, state, TrainConfig{});
    EXPECT_NEAR(p.layer(1).weights[0], expected[t], 1e-12) << "step " << t + 1;
    EXPECT_NEAR(p.layer(1).bias[0], expected[t], 1e-12) << "step " << t + 1;
  }
  EXPECT_NEAR(state.m.layer(1).weights[0], 0.271, 1e-15);
  EXPECT_NEAR(state.v.layer(1).weights[0], 0.002997001, 1e-15);
}

TEST(Adam, VaryingGradientFollowsRecurrence) {
  // g = 2, -1, 0.5; written out with bias corrections 1 - beta^t.
  const double eta = 0.001, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double gs[3] = {2.0, -1.0, 0.5};
  double m = 0, v = 0, w = 0;
  const auto spec = single_weight();
  auto p = Parameters<double>::zeros(spec);
  auto g = Parameters<double>::zeros(spec);
  auto state = train::AdamState<double>::fresh(spec);
  for (int t = 1; t <= 3; ++t) {
    const double gt = gs[t - 1];
    m = b1 * m + (1 - b1) * gt;
    v = b2 * v + (1 - b2) * gt * gt;
    w -= eta * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    g.layer(1).weights = {gt};
    train::adam_step(p, g, state, TrainConfig{});
    EXPECT_NEAR(p.layer(1).weights[0], w, 1e-12) << "step " << t;
  }
}

TEST(Adam, FirstStepIsScaleInvariant) {
  const TrainConfig cfg;
  for (double gv : {1.0, -1.0, 10.0, -250.0, 1e6}) {
    const auto spec = single_weight();
    auto p = Parameters<double>::zeros(spec);
    auto g = Parameters<double>::zeros(spec);
    g.layer(1).weights = {gv};
    auto state = train::AdamState<double>::fresh(spec);
    train::adam_step(p, g, state, cfg);
    const double dw = p.layer(1).weights[0];
    EXPECT_LT(std::abs(dw + cfg.eta * (gv > 0 ? 1.0 : -1.0)), cfg.eta * 1e-3) << "g=" << gv;
  }
}

TEST(Adam, NonFiniteGradientNamesTensor) {
  const auto spec = NetworkSpec::reference();
  auto p = Parameters<double>::zeros(spec);
  auto g = Parameters<double>::zeros(spec);
  g.layer(2).bias[3] = std::numeric_limits<double>::quiet_NaN();
  auto state = train::AdamState<double>::fresh(spec);
  try {
    train::adam_step(p, g, state, TrainConfig{});
    FAIL() << "expected an error";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("b.2"), std::string::npos) << e.what();
  }
}

struct Batch {
  std::vector<std::vector<double>> xs, ys;
  std::vector<train::Sample<double>> samples() const {
    std::vector<train::Sample<double>> out;
    for (std::size_t i = 0; i < xs.size(); ++i) out.push_back({xs[i], ys[i]});
    return out;
  }
};

TEST(Minibatch, IdenticalSamplesEqualSingleSample) {
  const auto spec = NetworkSpec::reference();
  Rng rng(6);
  const auto p = nn::init_params<double>(spec, nn::InitScheme::he, rng);
  Batch b;
  for (int i = 0; i < 4; ++i) {
    b.xs.push_back(std::vector<double>(10, 0.4));
    b.ys.push_back({1.5});
  }
  const auto samples = b.samples();
  const auto mean = train::minibatch_gradient<double>(spec, p, samples, {});
  const auto single = nn::backward<double>(spec, p, b.xs[0], b.ys[0]);
  for (std::size_t l = 0; l < 3; ++l) {
    for (std::size_t i = 0; i < mean.layers[l].weights.size(); ++i)
      EXPECT_NEAR(mean.layers[l].weights[i], single.layers[l].weights[i], 1e-15);
  }
}

TEST(Minibatch, TwoSamplesAverage) {
  const auto spec = NetworkSpec::reference();
  Rng rng(7);
  const auto p = nn::init_params<double>(spec, nn::InitScheme::he, rng);
  Batch b;
  b.xs = {std::vector<double>(10, 0.2), std::vector<double>(10, -0.7)};
  b.ys = {{0.3}, {-1.1}};
  const auto samples = b.samples();
  const auto mean = train::minibatch_gradient<double>(spec, p, samples, {});
  const auto g1 = nn::backward<double>(spec, p, b.xs[0], b.ys[0]);
  const auto g2 = nn::backward<double>(spec, p, b.xs[1], b.ys[1]);
  for (std::size_t l = 0; l < 3; ++l) {
    for (std::size_t i = 0; i < mean.layers[l].weights.size(); ++i)
      EXPECT_NEAR(mean.layers[l].weights[i], (g1.layers[l].weights[i] + g2.layers[l].weights[i]) / 2, 1e-15);
    for (std::size_t i = 0; i < mean.layers[l].bias.size(); ++i)
      EXPECT_NEAR(mean.layers[l].bias[i], (g1.layers[l].bias[i] + g2.layers[l].bias[i]) / 2, 1e-15);
  }
}

TEST(Minibatch, DroppedUnitGetsNoGradient) {
  const auto spec = NetworkSpec::reference();
  Rng rng(8);
  const auto p = nn::init_params<double>(spec, nn::InitScheme::he, rng);
  Batch b;
  b.xs = {std::vector<double>(10, 0.5)};
  b.ys = {{2.0}};
  nn::LayerMasks<double> m{std::vector<double>(10, 1.0), std::vector<double>(10, 1.0)};
  m[0][4] = 0.0;
  const std::vector<nn::LayerMasks<double>> masks{m};
  const auto samples = b.samples();
  const auto g = train::minibatch_gradient<double>(spec, p, samples, masks);
  EXPECT_EQ(g.layer(1).bias[4], 0.0);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(g.layer(1).w(4, i), 0.0);
  for (std::size_t j = 0; j < 10; ++j) EXPECT_EQ(g.layer(2).w(j, 4), 0.0);
}

TEST(Minibatch, EmptyBatchIsContractError) {
  const auto spec = NetworkSpec::reference();
  const auto p = Parameters<double>::zeros(spec);
  EXPECT_THROW(train::minibatch_gradient<double>(spec, p, {}, {}), ContractError);
}

data::Dataset linear_dataset(std::size_t n, std::uint64_t seed) {
  data::Dataset d;
  d.dim = 10;
  Rng rng(seed);
  for (std::size_t r = 0; r < n; ++r) {
    double y = 0.25;
    for (std::size_t c = 0; c < 10; ++c) {
      const double x = rng.uniform(-1, 1);
      d.x.push_back(x);
      y += (static_cast<double>(c) - 4.5) * 0.1 * x;
    }
    d.y.push_back(y);
  }
  return d;
}

TEST(Train, ConvergesOnNoiselessLinearTarget) {
  const auto d = linear_dataset(500, 9);
  NetworkSpec spec{{10, 1}, Activation::relu, Activation::linear};
  TrainConfig cfg;
  cfg.dropout_enabled = false;
  cfg.eta = 0.01;
  cfg.epochs = 200;
  const auto res = train::train(d, spec, cfg);
  EXPECT_LT(train::dataset_mse(spec, res.params, d), 1e-3);
  EXPECT_EQ(res.log.epochs.size(), 200u);
}

TEST(Train, SameSeedBitwiseIdentical) {
  const auto d = linear_dataset(300, 10);
  const auto spec = NetworkSpec::reference();
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 17;
  const auto a = train::train(d, spec, cfg);
  const auto b = train::train(d, spec, cfg);
  EXPECT_EQ(a.params, b.params);
  cfg.seed = 18;
  EXPECT_NE(train::train(d, spec, cfg).params, a.params);
}

TEST(Train, ReferenceConfigCompletes) {
  const auto [tr, te] = data::generate({});
  const auto res = train::train(tr, NetworkSpec::reference(), TrainConfig{}, &te);
  ASSERT_EQ(res.log.epochs.size(), 200u);
  for (const auto& e : res.log.epochs) {
    EXPECT_TRUE(std::isfinite(e.train_loss));
    ASSERT_TRUE(e.val_loss.has_value());
    EXPECT_TRUE(std::isfinite(*e.val_loss));
  }
  EXPECT_TRUE(res.params.all_finite());
}

TEST(Train, DivergenceReportsEpochAndBatch) {
  auto d = linear_dataset(10, 11);
  d.y[0] = 1e300;
  TrainConfig cfg;
  cfg.epochs = 1;
  try {
    train::train(d, NetworkSpec::reference(), cfg);
    FAIL() << "expected divergence";
  } catch (const train::TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, batch 0"), std::string::npos) << e.what();
  }
}

TEST(Train, LogEchoesHyperparameters) {
  const auto echo = train::config_echo(TrainConfig{});
  for (const char* line : {"eta=0.001", "beta1=0.9", "beta2=0.999", "eps=1e-8", "batch=64", "epochs=200"})
    EXPECT_NE(echo.find(line), std::string::npos) << line;
}

}  // namespace
