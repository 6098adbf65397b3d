#pragma once

// Multilayer perceptron mathematics: forward pass under a failure mask,
// losses, reverse-mode gradients and weight initialization. Everything is
// templated on the scalar type so training runs in double while deployment
// and the distributed runtime run in float through the very same code.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ftmlp/error.hpp"
#include "ftmlp/rng.hpp"

namespace ftmlp::nn {

enum class Activation : std::uint8_t { linear = 0, relu = 1, sigmoid = 2, softmax = 3 };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softmax: return "softmax";
  }
  return "?";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "linear") return Activation::linear;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "softmax") return Activation::softmax;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

struct NeuronId {
  std::size_t layer = 0;
  std::size_t neuron = 0;
  auto operator<=>(const NeuronId&) const = default;
};

inline std::string to_string(NeuronId id) {
  return std::to_string(id.layer) + ":" + std::to_string(id.neuron);
}

struct NetworkSpec {
  std::vector<std::size_t> layer_sizes;  // n0 (inputs) .. nL (outputs)
  Activation hidden = Activation::relu;
  Activation output = Activation::linear;

  // 10-10-10-1, ReLU hidden, linear output.
  static NetworkSpec reference() { return {{10, 10, 10, 1}, Activation::relu, Activation::linear}; }

  std::size_t depth() const { return layer_sizes.size() - 1; }
  std::size_t inputs() const { return layer_sizes.front(); }
  std::size_t outputs() const { return layer_sizes.back(); }
  std::size_t size(std::size_t layer) const { return layer_sizes.at(layer); }

  Activation activation(std::size_t layer) const { return layer == depth() ? output : hidden; }

  std::size_t hidden_count() const {
    std::size_t n = 0;
    for (std::size_t l = 1; l < depth(); ++l) n += layer_sizes[l];
    return n;
  }

  std::vector<NeuronId> hidden_neurons() const {
    std::vector<NeuronId> ids;
    for (std::size_t l = 1; l < depth(); ++l)
      for (std::size_t k = 0; k < layer_sizes[l]; ++k) ids.push_back({l, k});
    return ids;
  }

  void validate() const {
    if (layer_sizes.size() < 2) throw ConfigError("network needs at least an input and an output layer");
    for (auto n : layer_sizes)
      if (n == 0) throw ConfigError("layer sizes must be positive");
    if (hidden != Activation::relu && hidden != Activation::sigmoid)
      throw ConfigError("hidden activation must be relu or sigmoid");
    if (output != Activation::linear && output != Activation::softmax)
      throw ConfigError("output activation must be linear or softmax");
  }

  bool operator==(const NetworkSpec&) const = default;
};

// One fully connected layer. weights is row-major: weights[j * fan_in + i]
// connects input i to neuron j, so each neuron's incoming row is contiguous.
template <class T>
struct Layer {
  std::size_t fan_in = 0;
  std::size_t width = 0;
  std::vector<T> weights;
  std::vector<T> bias;

  T& w(std::size_t j, std::size_t i) { return weights[j * fan_in + i]; }
  T w(std::size_t j, std::size_t i) const { return weights[j * fan_in + i]; }
  std::span<const T> row(std::size_t j) const { return {weights.data() + j * fan_in, fan_in}; }

  bool operator==(const Layer&) const = default;
};

template <class T>
struct Parameters {
  std::vector<Layer<T>> layers;  // layers[l - 1] holds W^(l), b^(l)

  static Parameters zeros(const NetworkSpec& spec) {
    Parameters p;
    for (std::size_t l = 1; l <= spec.depth(); ++l) {
      Layer<T> layer;
      layer.fan_in = spec.size(l - 1);
      layer.width = spec.size(l);
      layer.weights.assign(layer.fan_in * layer.width, T{0});
      layer.bias.assign(layer.width, T{0});
      p.layers.push_back(std::move(layer));
    }
    return p;
  }

  Layer<T>& layer(std::size_t l) { return layers.at(l - 1); }
  const Layer<T>& layer(std::size_t l) const { return layers.at(l - 1); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.weights.size() + layer.bias.size();
    return n;
  }

  bool matches(const NetworkSpec& spec) const {
    if (layers.size() != spec.depth()) return false;
    for (std::size_t l = 1; l <= spec.depth(); ++l) {
      const auto& layer = layers[l - 1];
      if (layer.fan_in != spec.size(l - 1) || layer.width != spec.size(l)) return false;
      if (layer.weights.size() != layer.fan_in * layer.width || layer.bias.size() != layer.width) return false;
    }
    return true;
  }

  bool all_finite() const {
    for (const auto& layer : layers) {
      for (auto v : layer.weights)
        if (!std::isfinite(v)) return false;
      for (auto v : layer.bias)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <class U>
  Parameters<U> cast() const {
    Parameters<U> out;
    for (const auto& layer : layers) {
      Layer<U> o;
      o.fan_in = layer.fan_in;
      o.width = layer.width;
      o.weights.assign(layer.weights.begin(), layer.weights.end());
      o.bias.assign(layer.bias.begin(), layer.bias.end());
      out.layers.push_back(std::move(o));
    }
    return out;
  }

  // Visits every tensor as (name, values): "W.1", "b.1", "W.2", ...
  template <class F>
  void for_each_tensor(F&& f) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      f("W." + std::to_string(l + 1), std::span<T>(layers[l].weights));
      f("b." + std::to_string(l + 1), std::span<T>(layers[l].bias));
    }
  }

  bool operator==(const Parameters&) const = default;
};

template <class T>
using Gradient = Parameters<T>;

// Per-hidden-layer multiplicative masks: masks[l - 1] scales a^(l) for
// l in 1..L-1. Dropout uses {0, 1/keep_prob}; failures use {0, 1}.
template <class T>
using LayerMasks = std::vector<std::vector<T>>;

// A set of silenced neurons. Kept sorted so forward can apply it layer by layer.
class FailureMask {
 public:
  FailureMask() = default;

  FailureMask(const NetworkSpec& spec, std::vector<NeuronId> ids, bool allow_output = false)
      : ids_(std::move(ids)) {
    std::sort(ids_.begin(), ids_.end());
    ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
    validate(spec, allow_output);
  }

  void validate(const NetworkSpec& spec, bool allow_output = false) const {
    for (const auto& id : ids_) {
      const std::size_t last = allow_output ? spec.depth() : spec.depth() - 1;
      if (id.layer < 1 || id.layer > last)
        throw ContractError("failure mask layer out of range: " + to_string(id));
      if (id.neuron >= spec.size(id.layer))
        throw ContractError("failure mask neuron out of range: " + to_string(id));
    }
  }

  bool empty() const { return ids_.empty(); }
  std::size_t size() const { return ids_.size(); }
  const std::vector<NeuronId>& neurons() const { return ids_; }

  bool disabled(std::size_t layer, std::size_t neuron) const {
    return std::binary_search(ids_.begin(), ids_.end(), NeuronId{layer, neuron});
  }

 private:
  std::vector<NeuronId> ids_;
};

// Ascending-index accumulation starting from the bias. The distributed
// runtime calls this exact function so both paths agree bit for bit.
template <class T>
T neuron_preactivation(std::span<const T> weights, T bias, std::span<const T> inputs) {
  T sum = bias;
  for (std::size_t i = 0; i < weights.size(); ++i) sum += weights[i] * inputs[i];
  return sum;
}

template <class T>
T activate(Activation kind, T z) {
  switch (kind) {
    case Activation::relu: return z > T{0} ? z : T{0};
    case Activation::sigmoid: return T{1} / (T{1} + std::exp(-z));
    default: return z;
  }
}

// Softmax over entries whose keep flag is set; the rest are written as 0.
// Max-subtraction makes the result invariant to adding a constant.
template <class T>
void softmax_into(std::span<const T> z, std::span<T> out, std::span<const std::uint8_t> keep = {}) {
  auto kept = [&](std::size_t i) { return keep.empty() || keep[i] != 0; };
  T peak = -std::numeric_limits<T>::infinity();
  for (std::size_t i = 0; i < z.size(); ++i)
    if (kept(i)) peak = std::max(peak, z[i]);
  T total{0};
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = kept(i) ? std::exp(z[i] - peak) : T{0};
    total += out[i];
  }
  if (total > T{0})
    for (auto& v : out) v /= total;
}

template <class T>
std::vector<T> activation_apply(Activation kind, std::span<const T> z) {
  std::vector<T> out(z.size());
  if (kind == Activation::softmax) {
    softmax_into<T>(z, out);
  } else {
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = activate(kind, z[i]);
  }
  return out;
}

template <class T>
struct ActivationRecord {
  std::vector<std::vector<T>> pre;          // z^(l); pre[0] unused
  std::vector<std::vector<T>> activations;  // a^(0) .. a^(L)

  std::span<const T> output() const { return activations.back(); }
};

namespace detail {

inline void check_shapes(const NetworkSpec& spec, std::size_t params_depth, bool params_ok, std::size_t x_len) {
  if (!params_ok || params_depth != spec.depth()) throw ContractError("parameters do not match network spec");
  if (x_len != spec.inputs())
    throw ContractError("input length " + std::to_string(x_len) + " != " + std::to_string(spec.inputs()));
}

}  // namespace detail

// Core forward evaluation. `mask` zeroes activations after f is applied,
// `dropout` (optional) scales hidden activations. The record is reused
// across calls to avoid reallocation in hot loops.
template <class T>
void forward_into(const NetworkSpec& spec, const Parameters<T>& params, std::span<const T> x,
                  const FailureMask& mask, const LayerMasks<T>* dropout, ActivationRecord<T>& rec) {
  const std::size_t depth = spec.depth();
  rec.pre.resize(depth + 1);
  rec.activations.resize(depth + 1);
  rec.activations[0].assign(x.begin(), x.end());

  const auto& failed = mask.neurons();
  auto next_failed = failed.begin();

  for (std::size_t l = 1; l <= depth; ++l) {
    const auto& layer = params.layers[l - 1];
    auto& z = rec.pre[l];
    auto& a = rec.activations[l];
    z.resize(layer.width);
    a.resize(layer.width);
    std::span<const T> in = rec.activations[l - 1];
    for (std::size_t j = 0; j < layer.width; ++j) z[j] = neuron_preactivation<T>(layer.row(j), layer.bias[j], in);

    const Activation kind = spec.activation(l);
    auto layer_begin = next_failed;
    while (next_failed != failed.end() && next_failed->layer == l) ++next_failed;

    if (kind == Activation::softmax) {
      std::vector<std::uint8_t> keep(layer.width, 1);
      for (auto it = layer_begin; it != next_failed; ++it) keep[it->neuron] = 0;
      softmax_into<T>(z, a, keep);
    } else {
      for (std::size_t j = 0; j < layer.width; ++j) a[j] = activate(kind, z[j]);
    }
    if (dropout != nullptr && l < depth) {
      const auto& r = (*dropout)[l - 1];
      for (std::size_t j = 0; j < layer.width; ++j) a[j] *= r[j];
    }
    for (auto it = layer_begin; it != next_failed; ++it) a[it->neuron] = T{0};
  }
}

template <class T>
ActivationRecord<T> forward(const NetworkSpec& spec, const Parameters<T>& params, std::span<const T> x,
                            const FailureMask& mask = {}) {
  detail::check_shapes(spec, params.layers.size(), params.matches(spec), x.size());
  ActivationRecord<T> rec;
  forward_into<T>(spec, params, x, mask, nullptr, rec);
  return rec;
}

enum class LossKind { mse, cross_entropy };

inline constexpr double kLogFloor = 1e-12;

// mse: mean of squared differences over all entries.
// cross_entropy: -(1/N) sum targets * log(max(pred, 1e-12)) over N samples of
// `width` classes each (width = 0 means a single sample).
template <class T>
T loss(LossKind kind, std::span<const T> predictions, std::span<const T> targets, std::size_t width = 0) {
  if (predictions.size() != targets.size()) throw ContractError("loss: prediction/target shape mismatch");
  if (predictions.empty()) throw ContractError("loss: empty input");
  if (kind == LossKind::mse) {
    T acc{0};
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      const T d = targets[i] - predictions[i];
      acc += d * d;
    }
    return acc / static_cast<T>(predictions.size());
  }
  if (width == 0) width = predictions.size();
  if (predictions.size() % width != 0) throw ContractError("loss: size not a multiple of class count");
  T acc{0};
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (targets[i] != T{0}) acc -= targets[i] * std::log(std::max(predictions[i], static_cast<T>(kLogFloor)));
  }
  return acc / static_cast<T>(predictions.size() / width);
}

// Reusable scratch for backward passes.
template <class T>
struct BackpropWorkspace {
  ActivationRecord<T> record;
  std::vector<T> delta;
  std::vector<T> upstream;
};

// Adds the gradient of the per-sample loss to `grad` (which must be shaped
// like params) and returns the per-sample loss. ReLU'(0) is taken as 0.
template <class T>
T accumulate_gradient(const NetworkSpec& spec, const Parameters<T>& params, std::span<const T> x,
                      std::span<const T> target, const LayerMasks<T>* masks, LossKind kind, Gradient<T>& grad,
                      BackpropWorkspace<T>& ws) {
  const std::size_t depth = spec.depth();
  if (target.size() != spec.outputs()) throw ContractError("target length does not match output layer");
  if (masks != nullptr) {
    if (masks->size() != depth - 1) throw ContractError("need one mask per hidden layer");
    for (std::size_t l = 1; l < depth; ++l)
      if ((*masks)[l - 1].size() != spec.size(l)) throw ContractError("mask width mismatch");
  }
  static const FailureMask kNone;
  forward_into(spec, params, x, kNone, masks, ws.record);
  const auto& rec = ws.record;
  std::span<const T> out = rec.activations[depth];
  const T sample_loss = loss<T>(kind, out, target, spec.outputs());

  // dL/da^(L)
  auto& delta = ws.delta;
  delta.resize(out.size());
  const auto n_out = static_cast<T>(out.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (kind == LossKind::mse) {
      delta[j] = T{2} * (out[j] - target[j]) / n_out;
    } else {
      delta[j] = (target[j] != T{0} && out[j] > static_cast<T>(kLogFloor)) ? -target[j] / out[j] : T{0};
    }
  }
  // through the output activation -> dL/dz^(L)
  if (spec.output == Activation::softmax) {
    T dot{0};
    for (std::size_t j = 0; j < out.size(); ++j) dot += out[j] * delta[j];
    for (std::size_t j = 0; j < out.size(); ++j) delta[j] = out[j] * (delta[j] - dot);
  }

  for (std::size_t l = depth; l >= 1; --l) {
    const auto& layer = params.layers[l - 1];
    auto& g = grad.layers[l - 1];
    const auto& prev = rec.activations[l - 1];
    for (std::size_t j = 0; j < layer.width; ++j) {
      const T dz = delta[j];
      g.bias[j] += dz;
      T* grow = g.weights.data() + j * layer.fan_in;
      for (std::size_t i = 0; i < layer.fan_in; ++i) grow[i] += dz * prev[i];
    }
    if (l == 1) break;

    // dL/da^(l-1) (the masked activation), then back through mask and f.
    auto& up = ws.upstream;
    up.assign(layer.fan_in, T{0});
    for (std::size_t j = 0; j < layer.width; ++j) {
      const T dz = delta[j];
      const T* wrow = layer.weights.data() + j * layer.fan_in;
      for (std::size_t i = 0; i < layer.fan_in; ++i) up[i] += wrow[i] * dz;
    }
    const auto& z = rec.pre[l - 1];
    const Activation hidden = spec.activation(l - 1);
    delta.resize(layer.fan_in);
    for (std::size_t i = 0; i < layer.fan_in; ++i) {
      T d = up[i];
      if (masks != nullptr) d *= (*masks)[l - 2][i];
      if (hidden == Activation::relu) {
        d = z[i] > T{0} ? d : T{0};
      } else if (hidden == Activation::sigmoid) {
        const T s = activate(Activation::sigmoid, z[i]);
        d *= s * (T{1} - s);
      }
      delta[i] = d;
    }
  }
  return sample_loss;
}

template <class T>
Gradient<T> backward(const NetworkSpec& spec, const Parameters<T>& params, std::span<const T> x,
                     std::span<const T> target, const LayerMasks<T>* masks = nullptr,
                     LossKind kind = LossKind::mse) {
  detail::check_shapes(spec, params.layers.size(), params.matches(spec), x.size());
  auto grad = Gradient<T>::zeros(spec);
  BackpropWorkspace<T> ws;
  accumulate_gradient(spec, params, x, target, masks, kind, grad, ws);
  return grad;
}

enum class InitScheme { xavier, he };

inline InitScheme init_scheme_from_string(std::string_view s) {
  if (s == "he") return InitScheme::he;
  if (s == "xavier") return InitScheme::xavier;
  throw ConfigError("unknown init scheme '" + std::string(s) + "'");
}

inline std::string_view to_string(InitScheme s) { return s == InitScheme::he ? "he" : "xavier"; }

// Gaussian weights with variance 2/fan_in (he) or 2/(fan_in + fan_out)
// (xavier); zero biases. Layers are filled in order, rows in order.
template <class T>
Parameters<T> init_params(const NetworkSpec& spec, InitScheme scheme, Rng& rng) {
  spec.validate();
  auto p = Parameters<T>::zeros(spec);
  for (auto& layer : p.layers) {
    const double fan_in = static_cast<double>(layer.fan_in);
    const double fan_out = static_cast<double>(layer.width);
    const double variance = scheme == InitScheme::he ? 2.0 / fan_in : 2.0 / (fan_in + fan_out);
    const double stddev = std::sqrt(variance);
    for (auto& w : layer.weights) w = static_cast<T>(rng.normal() * stddev);
  }
  return p;
}

}  // namespace ftmlp::nn
