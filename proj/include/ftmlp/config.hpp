#pragma once

// Dotted-key config sections shared by the CLI and the experiment suite:
//   data.*   dataset generation
//   net.*    network shape
//   train.*  optimizer and regularization
//   timing.* and sim.*   runtime
// Every section reads with defaults and writes back a complete echo, so an
// echoed file reproduces the run that produced it.

#include <string>

#include "ftmlp/data.hpp"
#include "ftmlp/kv.hpp"
#include "ftmlp/nn.hpp"
#include "ftmlp/runtime/simulation.hpp"
#include "ftmlp/trainer.hpp"

namespace ftmlp::config {

inline data::DataGenConfig data_config(const KeyValues& kv) {
  data::DataGenConfig c;
  c.seed = kv.integer("data.seed", c.seed);
  c.n_train = kv.integer("data.n_train", c.n_train);
  c.n_test = kv.integer("data.n_test", c.n_test);
  c.feature_dim = kv.integer("data.feature_dim", c.feature_dim);
  c.noise_sigma = kv.number("data.noise_sigma", c.noise_sigma);
  c.validate();
  return c;
}

inline void echo(KeyValues& kv, const data::DataGenConfig& c) {
  kv.set("data.seed", std::to_string(c.seed));
  kv.set("data.n_train", std::to_string(c.n_train));
  kv.set("data.n_test", std::to_string(c.n_test));
  kv.set("data.feature_dim", std::to_string(c.feature_dim));
  kv.set("data.noise_sigma", data::format_double(c.noise_sigma));
  kv.set("data.target", std::string(data::kTargetVersion));
}

inline nn::NetworkSpec network_spec(const KeyValues& kv, std::size_t inputs) {
  nn::NetworkSpec s = nn::NetworkSpec::reference();
  s.layer_sizes.front() = inputs;
  if (auto layers = kv.get("net.layers")) {
    s.layer_sizes.clear();
    for (auto n : parse_uint_list(*layers)) s.layer_sizes.push_back(static_cast<std::size_t>(n));
  }
  s.hidden = nn::activation_from_string(kv.str("net.hidden_activation", "relu"));
  s.output = nn::activation_from_string(kv.str("net.output_activation", "linear"));
  s.validate();
  return s;
}

inline void echo(KeyValues& kv, const nn::NetworkSpec& s) {
  kv.set("net.layers", join(s.layer_sizes));
  kv.set("net.hidden_activation", std::string(nn::to_string(s.hidden)));
  kv.set("net.output_activation", std::string(nn::to_string(s.output)));
}

inline train::TrainConfig train_config(const KeyValues& kv) {
  train::TrainConfig c;
  c.eta = kv.number("train.eta", c.eta);
  c.beta1 = kv.number("train.beta1", c.beta1);
  c.beta2 = kv.number("train.beta2", c.beta2);
  c.epsilon = kv.number("train.eps", c.epsilon);
  c.batch_size = kv.integer("train.batch", c.batch_size);
  c.epochs = kv.integer("train.epochs", c.epochs);
  c.dropout_drop_prob = kv.number("train.dropout", c.dropout_drop_prob);
  c.dropout_enabled = kv.boolean("train.dropout_enabled", c.dropout_enabled);
  c.init_scheme = nn::init_scheme_from_string(kv.str("train.init", std::string(nn::to_string(c.init_scheme))));
  c.seed = kv.integer("train.seed", c.seed);
  c.validate();
  return c;
}

inline void echo(KeyValues& kv, const train::TrainConfig& c) {
  kv.set("train.eta", data::format_double(c.eta));
  kv.set("train.beta1", data::format_double(c.beta1));
  kv.set("train.beta2", data::format_double(c.beta2));
  kv.set("train.eps", data::format_double(c.epsilon));
  kv.set("train.batch", std::to_string(c.batch_size));
  kv.set("train.epochs", std::to_string(c.epochs));
  kv.set("train.dropout", data::format_double(c.dropout_drop_prob));
  kv.set("train.dropout_enabled", c.dropout_enabled ? "true" : "false");
  kv.set("train.init", std::string(nn::to_string(c.init_scheme)));
  kv.set("train.seed", std::to_string(c.seed));
}

inline runtime::Micros millis(const KeyValues& kv, const std::string& key, runtime::Micros fallback) {
  const double ms = kv.number(key, static_cast<double>(fallback) / static_cast<double>(runtime::kMillis));
  if (!(ms >= 0.0)) throw ConfigError("key '" + key + "' must be >= 0");
  return static_cast<runtime::Micros>(ms * static_cast<double>(runtime::kMillis) + 0.5);
}

inline std::string ms_text(runtime::Micros us) {
  return data::format_double(static_cast<double>(us) / static_cast<double>(runtime::kMillis));
}

inline runtime::SimConfig sim_config(const KeyValues& kv) {
  runtime::SimConfig c;
  auto& t = c.timing;
  t.layer_timeout = millis(kv, "timing.layer_timeout_ms", t.layer_timeout);
  t.heartbeat_interval = millis(kv, "timing.heartbeat_interval_ms", t.heartbeat_interval);
  t.heartbeat_miss_threshold = static_cast<int>(
      kv.integer("timing.heartbeat_miss_threshold", static_cast<std::uint64_t>(t.heartbeat_miss_threshold)));
  t.handover_timeout = millis(kv, "timing.handover_timeout_ms", t.handover_timeout);
  t.inference_deadline = millis(kv, "timing.inference_deadline_ms", t.inference_deadline);
  c.latency_min = millis(kv, "sim.latency_min_ms", c.latency_min);
  c.latency_max = millis(kv, "sim.latency_max_ms", c.latency_max);
  c.loss_probability = kv.number("sim.loss", c.loss_probability);
  c.standby = kv.boolean("sim.standby", c.standby);
  c.trace_frames = kv.boolean("sim.trace_frames", c.trace_frames);
  c.validate();
  return c;
}

inline void echo(KeyValues& kv, const runtime::SimConfig& c) {
  kv.set("timing.layer_timeout_ms", ms_text(c.timing.layer_timeout));
  kv.set("timing.heartbeat_interval_ms", ms_text(c.timing.heartbeat_interval));
  kv.set("timing.heartbeat_miss_threshold", std::to_string(c.timing.heartbeat_miss_threshold));
  kv.set("timing.handover_timeout_ms", ms_text(c.timing.handover_timeout));
  kv.set("timing.inference_deadline_ms", ms_text(c.timing.inference_deadline));
  kv.set("sim.latency_min_ms", ms_text(c.latency_min));
  kv.set("sim.latency_max_ms", ms_text(c.latency_max));
  kv.set("sim.loss", data::format_double(c.loss_probability));
  kv.set("sim.standby", c.standby ? "true" : "false");
  kv.set("sim.trace_frames", c.trace_frames ? "true" : "false");
}

}  // namespace ftmlp::config
