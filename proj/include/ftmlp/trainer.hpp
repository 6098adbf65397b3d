#pragma once

// Mini-batch Adam with inverted dropout on hidden layers.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ftmlp/data.hpp"
#include "ftmlp/error.hpp"
#include "ftmlp/nn.hpp"
#include "ftmlp/rng.hpp"

namespace ftmlp::train {

using nn::Gradient;
using nn::LayerMasks;
using nn::NetworkSpec;
using nn::Parameters;

struct TrainConfig {
  double eta = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 64;
  std::size_t epochs = 200;
  // Probability that a hidden unit is dropped. keep_prob() = 1 - drop_prob.
  double dropout_drop_prob = 0.5;
  bool dropout_enabled = true;
  nn::InitScheme init_scheme = nn::InitScheme::he;
  std::uint64_t seed = 1;

  double keep_prob() const { return 1.0 - dropout_drop_prob; }

  void validate() const {
    if (!(eta > 0.0)) throw ConfigError("eta must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (!(dropout_drop_prob >= 0.0 && dropout_drop_prob <= 1.0)) throw ConfigError("dropout probability must be in [0, 1]");
    if (dropout_enabled && keep_prob() <= 0.0) throw ConfigError("dropout keep probability 0 makes the network constant");
  }
};

template <class T>
struct AdamState {
  Parameters<T> m;
  Parameters<T> v;
  std::uint64_t t = 0;

  static AdamState fresh(const NetworkSpec& spec) { return {Parameters<T>::zeros(spec), Parameters<T>::zeros(spec), 0}; }
};

// One set of inverted-dropout multipliers (one vector per hidden layer):
// kept units carry 1/keep_prob, dropped units 0.
template <class T>
LayerMasks<T> sample_masks(const NetworkSpec& spec, double keep_prob, Rng& rng) {
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) throw ConfigError("keep_prob must be in [0, 1]");
  if (keep_prob == 0.0) throw ConfigError("keep_prob = 0 with dropout enabled");
  LayerMasks<T> masks(spec.depth() - 1);
  const T scale = static_cast<T>(1.0 / keep_prob);
  for (std::size_t l = 1; l < spec.depth(); ++l) {
    auto& r = masks[l - 1];
    r.resize(spec.size(l));
    for (auto& v : r) v = (keep_prob == 1.0 || rng.bernoulli(keep_prob)) ? scale : T{0};
  }
  return masks;
}

// In-place Adam update with bias correction.
template <class T>
void adam_step(Parameters<T>& params, const Gradient<T>& grads, AdamState<T>& state, const TrainConfig& cfg) {
  if (grads.layers.size() != params.layers.size() || state.m.layers.size() != params.layers.size())
    throw ContractError("adam_step: shape mismatch");
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    if (grads.layers[l].weights.size() != params.layers[l].weights.size() ||
        grads.layers[l].bias.size() != params.layers[l].bias.size())
      throw ContractError("adam_step: shape mismatch in layer " + std::to_string(l + 1));
  }
  for (std::size_t l = 0; l < grads.layers.size(); ++l) {
    for (auto g : grads.layers[l].weights)
      if (!std::isfinite(g)) throw std::domain_error("non-finite gradient in W." + std::to_string(l + 1));
    for (auto g : grads.layers[l].bias)
      if (!std::isfinite(g)) throw std::domain_error("non-finite gradient in b." + std::to_string(l + 1));
  }

  state.t += 1;
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T eta = static_cast<T>(cfg.eta);
  const T eps = static_cast<T>(cfg.epsilon);
  const T c1 = T{1} - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(state.t)));
  const T c2 = T{1} - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(state.t)));

  auto update = [&](std::vector<T>& w, const std::vector<T>& g, std::vector<T>& m, std::vector<T>& v) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      const T m_hat = m[i] / c1;
      const T v_hat = v[i] / c2;
      w[i] -= eta * m_hat / (std::sqrt(v_hat) + eps);
    }
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weights, grads.layers[l].weights, state.m.layers[l].weights, state.v.layers[l].weights);
    update(params.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias);
  }
}

template <class T>
struct Sample {
  std::span<const T> x;
  std::span<const T> y;
};

// Mean of per-sample gradients; masks[i] (may be empty = no dropout) belongs to batch[i].
template <class T>
Gradient<T> minibatch_gradient(const NetworkSpec& spec, const Parameters<T>& params, std::span<const Sample<T>> batch,
                               std::span<const LayerMasks<T>> masks, nn::LossKind kind = nn::LossKind::mse) {
  if (batch.empty()) throw ContractError("minibatch_gradient: empty batch");
  if (!masks.empty() && masks.size() != batch.size()) throw ContractError("minibatch_gradient: one mask set per sample");
  auto grad = Gradient<T>::zeros(spec);
  nn::BackpropWorkspace<T> ws;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].x.size() != spec.inputs()) throw ContractError("minibatch_gradient: sample width mismatch");
    nn::accumulate_gradient(spec, params, batch[i].x, batch[i].y, masks.empty() ? nullptr : &masks[i], kind, grad, ws);
  }
  const T inv = T{1} / static_cast<T>(batch.size());
  grad.for_each_tensor([&](const std::string&, std::span<T> values) {
    for (auto& v : values) v *= inv;
  });
  return grad;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  TrainConfig config;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
T dataset_mse(const NetworkSpec& spec, const Parameters<T>& params, const data::Dataset& d) {
  nn::ActivationRecord<T> rec;
  std::vector<T> x(d.dim);
  const nn::FailureMask none;
  T acc{0};
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const auto row = d.row(r);
    for (std::size_t c = 0; c < d.dim; ++c) x[c] = static_cast<T>(row[c]);
    nn::forward_into<T>(spec, params, x, none, nullptr, rec);
    const T diff = static_cast<T>(d.y[r]) - rec.activations.back()[0];
    acc += diff * diff;
  }
  return acc / static_cast<T>(d.rows());
}

struct TrainResult {
  Parameters<double> params;
  TrainingLog log;
};

// epochs x ceil(N / batch) Adam steps over a seeded per-epoch shuffle (the
// last short batch is kept). Dropout masks are drawn per sample.
inline TrainResult train(const data::Dataset& dataset, const NetworkSpec& spec, const TrainConfig& cfg,
                         const data::Dataset* validation = nullptr) {
  spec.validate();
  cfg.validate();
  if (dataset.dim != spec.inputs()) throw ContractError("dataset feature dimension does not match network inputs");
  if (spec.outputs() != 1) throw ContractError("regression training expects a single output");
  if (dataset.rows() == 0) throw ContractError("empty dataset");

  const auto start = std::chrono::steady_clock::now();
  Rng init_rng(derive_seed(cfg.seed, 1));
  Rng shuffle_rng(derive_seed(cfg.seed, 2));
  Rng dropout_rng(derive_seed(cfg.seed, 3));

  TrainResult result{nn::init_params<double>(spec, cfg.init_scheme, init_rng), {}};
  auto& params = result.params;
  auto state = AdamState<double>::fresh(spec);
  auto grad = Gradient<double>::zeros(spec);
  nn::BackpropWorkspace<double> ws;
  LayerMasks<double> masks;

  std::vector<std::size_t> order(dataset.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t n = dataset.rows();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      grad.for_each_tensor([](const std::string&, std::span<double> v) { std::fill(v.begin(), v.end(), 0.0); });
      double batch_loss = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        const std::size_t r = order[i];
        const double* y = &dataset.y[r];
        if (cfg.dropout_enabled) masks = sample_masks<double>(spec, cfg.keep_prob(), dropout_rng);
        batch_loss += nn::accumulate_gradient<double>(spec, params, dataset.row(r), std::span<const double>(y, 1),
                                                      cfg.dropout_enabled ? &masks : nullptr, nn::LossKind::mse, grad, ws);
      }
      if (!std::isfinite(batch_loss))
        throw TrainingError("loss became non-finite at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(b));
      const double inv = 1.0 / static_cast<double>(hi - lo);
      grad.for_each_tensor([&](const std::string&, std::span<double> v) {
        for (auto& g : v) g *= inv;
      });
      adam_step(params, grad, state, cfg);
      epoch_loss += batch_loss;
    }
    EpochRecord rec{epoch + 1, epoch_loss / static_cast<double>(n), std::nullopt};
    if (validation != nullptr) rec.val_loss = dataset_mse(spec, params, *validation);
    result.log.epochs.push_back(rec);
  }
  result.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.log.seed = cfg.seed;
  result.log.config = cfg;
  return result;
}

inline std::string config_echo(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "eta=" << data::format_double(cfg.eta) << '\n'
      << "beta1=" << data::format_double(cfg.beta1) << '\n'
      << "beta2=" << data::format_double(cfg.beta2) << '\n'
      << "eps=" << data::format_double(cfg.epsilon) << '\n'
      << "batch=" << cfg.batch_size << '\n'
      << "epochs=" << cfg.epochs << '\n'
      << "dropout_enabled=" << (cfg.dropout_enabled ? "true" : "false") << '\n'
      << "dropout_drop_prob=" << data::format_double(cfg.dropout_drop_prob) << '\n'
      << "dropout_keep_prob=" << data::format_double(cfg.keep_prob()) << '\n'
      << "init=" << nn::to_string(cfg.init_scheme) << '\n'
      << "seed=" << cfg.seed << '\n';
  return out.str();
}

// "# key=value" header lines followed by epoch,train_loss,val_loss.
inline void write_log_csv(std::ostream& out, const TrainingLog& log) {
  std::istringstream echo(config_echo(log.config));
  for (std::string line; std::getline(echo, line);) out << "# " << line << '\n';
  out << "epoch,train_loss,val_loss\n";
  for (const auto& e : log.epochs) {
    out << e.epoch << ',' << data::format_double(e.train_loss) << ',';
    if (e.val_loss) out << data::format_double(*e.val_loss);
    out << '\n';
  }
}

}  // namespace ftmlp::train
