#pragma once

// Deterministic discrete-event transport. Every state-machine call happens at
// a virtual time popped from a queue ordered by (time, insertion sequence),
// so a run is a pure function of its inputs and seed.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <optional>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

#include "ftmlp/deploy.hpp"
#include "ftmlp/kv.hpp"
#include "ftmlp/nn.hpp"
#include "ftmlp/rng.hpp"
#include "ftmlp/runtime/cluster.hpp"
#include "ftmlp/runtime/coordinator.hpp"
#include "ftmlp/runtime/node.hpp"
#include "ftmlp/wire.hpp"

namespace ftmlp::runtime {

struct FaultEvent {
  Micros at = 0;
  bool coordinator = false;
  nn::NeuronId node{};
  std::size_t coordinator_index = 0;

  std::string subject() const { return coordinator ? coordinator_subject(coordinator_index) : node_subject(node); }
  bool operator==(const FaultEvent&) const = default;
};

inline Micros parse_time(std::string_view s) {
  if (s == "t0") return 0;
  std::int64_t scale = 0;
  if (s.ends_with("ms")) {
    scale = kMillis;
  } else if (s.ends_with("us")) {
    scale = 1;
  } else {
    throw ConfigError("fault time must be t0, <n>ms or <n>us, got '" + std::string(s) + "'");
  }
  s.remove_suffix(2);
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size() || v < 0)
    throw ConfigError("bad fault time '" + std::string(s) + "'");
  return v * scale;
}

// "none" or comma-separated entries like kill:1:3@t0, kill:2:0@120ms, kill:coord:0@300ms.
inline std::vector<FaultEvent> parse_fault_schedule(std::string_view text) {
  std::vector<FaultEvent> out;
  text = trim(text);
  if (text.empty() || text == "none") return out;
  for (auto entry : data::split_fields(text)) {
    entry = trim(entry);
    const auto at = entry.find('@');
    if (!entry.starts_with("kill:") || at == std::string_view::npos)
      throw ConfigError("fault entry must look like kill:L:N@TIME, got '" + std::string(entry) + "'");
    const auto target = entry.substr(5, at - 5);
    FaultEvent f;
    f.at = parse_time(entry.substr(at + 1));
    if (target.starts_with("coord:")) {
      f.coordinator = true;
      f.coordinator_index = static_cast<std::size_t>(parse_uint_list(target.substr(6)).at(0));
    } else {
      f.node = deploy::parse_node_id(target);
    }
    out.push_back(f);
  }
  return out;
}

inline std::string to_string(const FaultEvent& f) {
  return "kill:" + (f.coordinator ? "coord:" + std::to_string(f.coordinator_index) : nn::to_string(f.node)) + "@" +
         std::to_string(f.at) + "us";
}

struct SimConfig {
  Timing timing;
  Micros latency_min = 1 * kMillis;
  Micros latency_max = 5 * kMillis;
  double loss_probability = 0.0;
  bool standby = true;
  bool trace_frames = true;
  // 0 picks a horizon from the workload, faults and timing.
  Micros horizon = 0;

  void validate() const {
    timing.validate();
    if (latency_min < 0 || latency_max < latency_min) throw ConfigError("latency range is invalid");
    if (latency_max >= timing.layer_timeout)
      throw ConfigError("layer_timeout must exceed the maximum one-hop latency");
    if (!(loss_probability >= 0.0 && loss_probability < 1.0)) throw ConfigError("loss probability must be in [0, 1)");
  }
};

struct Workload {
  std::vector<std::vector<float>> inputs;
  Micros start = 10 * kMillis;
  Micros interval = 10 * kMillis;

  Micros time_of(std::size_t i) const { return start + static_cast<Micros>(i) * interval; }

  static Workload from_rows(const data::Dataset& d, std::size_t count) {
    Workload w;
    for (std::size_t r = 0; r < std::min(count, d.rows()); ++r) {
      const auto row = d.row(r);
      w.inputs.emplace_back(row.begin(), row.end());
    }
    return w;
  }
};

enum class Outcome { ok, failed, unanswered };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::ok: return "ok";
    case Outcome::failed: return "failed";
    case Outcome::unanswered: return "unanswered";
  }
  return "?";
}

struct Prediction {
  Outcome outcome = Outcome::unanswered;
  std::vector<float> outputs;
  Micros at = 0;
};

struct SimResult {
  std::vector<Prediction> predictions;
  Trace trace;
  Micros end_time = 0;

  std::size_t count(Outcome o) const {
    return static_cast<std::size_t>(
        std::count_if(predictions.begin(), predictions.end(), [o](const auto& p) { return p.outcome == o; }));
  }
};

inline void validate_schedule(const nn::NetworkSpec& spec, std::span<const FaultEvent> faults, bool standby) {
  for (const auto& f : faults) {
    if (f.at < 0) throw ConfigError("fault time is negative: " + to_string(f));
    if (f.coordinator) {
      if (f.coordinator_index > (standby ? 1u : 0u)) throw ConfigError("unknown coordinator in " + to_string(f));
    } else if (f.node.layer < 1 || f.node.layer > spec.depth() || f.node.neuron >= spec.size(f.node.layer)) {
      throw ConfigError("unknown node in " + to_string(f));
    }
  }
}

namespace detail {

struct SimEvent {
  enum Kind : std::uint8_t { deliver, timer, fault, request };
  Micros at = 0;
  std::uint64_t seq = 0;
  Kind kind = deliver;
  std::size_t actor = 0;
  std::uint64_t frame = 0;
  std::vector<std::uint8_t> bytes;
  TimerKind timer_kind = TimerKind::heartbeat;
  std::uint32_t key = 0;
  std::size_t index = 0;
};

struct Later {
  bool operator()(const SimEvent& a, const SimEvent& b) const {
    return a.at != b.at ? a.at > b.at : a.seq > b.seq;
  }
};

inline std::string_view type_name(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) return "?";
  switch (bytes[3]) {
    case 0x01: return "WEIGHT_CHUNK";
    case 0x02: return "INPUT_VECTOR";
    case 0x03: return "ACTIVATION";
    case 0x04: return "RESULT";
    case 0x05: return "HEARTBEAT";
    case 0x06: return "FAULT_INJECT";
    case 0x07: return "ACK";
    case 0x08: return "ROSTER";
  }
  return "?";
}

}  // namespace detail

// Streams derived from the run seed.
inline constexpr std::uint64_t kLatencyStream = 201;
inline constexpr std::uint64_t kPhaseStream = 202;

inline SimResult run_simulation(const SimConfig& cfg, const nn::NetworkSpec& spec, const nn::Parameters<float>& params,
                                const Workload& workload, std::span<const FaultEvent> faults, std::uint64_t seed) {
  cfg.validate();
  spec.validate();
  if (!params.matches(spec)) throw ContractError("deployment does not match network spec");
  validate_schedule(spec, faults, cfg.standby);
  for (const auto& x : workload.inputs)
    if (x.size() != spec.inputs()) throw ContractError("workload input width does not match network inputs");
  if (workload.inputs.size() > kRequestMask) throw ContractError("workload too large");

  const std::size_t n_nodes = deploy::node_count(spec);
  const std::size_t n_coord = cfg.standby ? 2 : 1;
  Rng net_rng(derive_seed(seed, kLatencyStream));
  Rng phase_rng(derive_seed(seed, kPhaseStream));

  std::vector<NeuronNode> nodes;
  nodes.reserve(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    const auto id = deploy::node_from_index(spec, i);
    const auto phase = static_cast<Micros>(phase_rng.below(static_cast<std::uint64_t>(cfg.timing.heartbeat_interval)));
    nodes.emplace_back(id, spec, deploy::neuron_params(spec, params, id), cfg.timing, phase);
  }
  std::vector<Coordinator> coords;
  for (std::size_t c = 0; c < n_coord; ++c)
    coords.emplace_back(c, c == 0 ? wire::Role::primary : wire::Role::standby, spec, cfg.timing, cfg.standby);

  auto subject = [&](std::size_t actor) {
    return actor < n_nodes ? node_subject(nodes[actor].id()) : coordinator_subject(actor - n_nodes);
  };
  auto alive = [&](std::size_t actor) { return actor < n_nodes ? nodes[actor].alive() : coords[actor - n_nodes].alive(); };

  // Recipients per channel, computed once.
  std::vector<std::vector<std::size_t>> layer_members(spec.depth() + 2);
  for (std::size_t i = 0; i < n_nodes; ++i) layer_members[nodes[i].id().layer].push_back(i);
  std::vector<std::size_t> all_nodes(n_nodes), all_coords;
  for (std::size_t i = 0; i < n_nodes; ++i) all_nodes[i] = i;
  for (std::size_t c = 0; c < n_coord; ++c) all_coords.push_back(n_nodes + c);

  SimResult result;
  result.predictions.resize(workload.inputs.size());
  std::size_t resolved = 0;

  std::priority_queue<detail::SimEvent, std::vector<detail::SimEvent>, detail::Later> queue;
  std::uint64_t seq = 0;
  std::uint64_t frame_id = 0;
  auto push = [&](detail::SimEvent e) {
    e.seq = seq++;
    queue.push(std::move(e));
  };

  auto recipients = [&](std::size_t actor, Channel ch) -> std::vector<std::size_t> {
    switch (ch) {
      case Channel::next_layer: return layer_members[nodes[actor].id().layer + 1];
      case Channel::coordinators: return all_coords;
      case Channel::peer_coordinators: {
        std::vector<std::size_t> out;
        for (auto c : all_coords)
          if (c != actor) out.push_back(c);
        return out;
      }
      case Channel::input_layer: return layer_members[1];
      case Channel::all_nodes: return all_nodes;
      case Channel::client: return {};
    }
    return {};
  };

  auto absorb = [&](std::size_t actor, Micros now, Outbox&& out) {
    for (auto& e : out.log) result.trace.append(std::move(e));
    for (const auto& t : out.timers) {
      detail::SimEvent e;
      e.at = std::max(t.at, now);
      e.kind = detail::SimEvent::timer;
      e.actor = actor;
      e.timer_kind = t.kind;
      e.key = t.key;
      push(std::move(e));
    }
    for (auto& s : out.sends) {
      const auto to = recipients(actor, s.channel);
      if (to.empty()) continue;
      const std::uint64_t id = frame_id++;
      if (cfg.trace_frames)
        result.trace.append({now, EventKind::frame_sent, subject(actor),
                             "f" + std::to_string(id) + " " + std::string(detail::type_name(s.bytes)) + " fanout=" +
                                 std::to_string(to.size())});
      for (auto r : to) {
        if (cfg.loss_probability > 0.0 && net_rng.bernoulli(cfg.loss_probability)) {
          if (cfg.trace_frames)
            result.trace.append({now, EventKind::frame_dropped, subject(r), "f" + std::to_string(id) + " lost"});
          continue;
        }
        detail::SimEvent e;
        e.at = now + static_cast<Micros>(net_rng.uniform(static_cast<double>(cfg.latency_min),
                                                         static_cast<double>(cfg.latency_max)));
        e.kind = detail::SimEvent::deliver;
        e.actor = r;
        e.frame = id;
        e.bytes = s.bytes;
        push(std::move(e));
      }
    }
    for (auto& c : out.completions) {
      if (c.request >= result.predictions.size()) continue;
      auto& p = result.predictions[c.request];
      if (p.outcome != Outcome::unanswered) continue;  // first answer wins
      p.outcome = c.ok ? Outcome::ok : Outcome::failed;
      p.outputs = std::move(c.outputs);
      p.at = now;
      ++resolved;
    }
  };

  for (std::size_t i = 0; i < n_nodes; ++i) absorb(i, 0, nodes[i].start(0));
  for (std::size_t c = 0; c < n_coord; ++c) absorb(n_nodes + c, 0, coords[c].start(0));
  for (std::size_t f = 0; f < faults.size(); ++f) {
    detail::SimEvent e;
    e.at = faults[f].at;
    e.kind = detail::SimEvent::fault;
    e.index = f;
    push(std::move(e));
  }
  for (std::size_t i = 0; i < workload.inputs.size(); ++i) {
    detail::SimEvent e;
    e.at = workload.time_of(i);
    e.kind = detail::SimEvent::request;
    e.index = i;
    push(std::move(e));
  }

  Micros last_fault = 0;
  for (const auto& f : faults) last_fault = std::max(last_fault, f.at);
  const Micros last_request = workload.inputs.empty() ? 0 : workload.time_of(workload.inputs.size() - 1);
  const Micros settle =
      faults.empty() ? last_request
                     : std::max(last_request, last_fault + cfg.timing.handover_timeout + 2 * cfg.timing.detection_budget());
  const Micros horizon = cfg.horizon > 0 ? cfg.horizon
                                         : settle + 2 * cfg.timing.inference_deadline + cfg.timing.handover_timeout +
                                               1000 * kMillis;

  Micros now = 0;
  while (!queue.empty()) {
    if (queue.top().at > horizon) break;
    auto ev = queue.top();
    queue.pop();
    now = ev.at;
    switch (ev.kind) {
      case detail::SimEvent::deliver: {
        if (!alive(ev.actor)) {
          if (cfg.trace_frames)
            result.trace.append({now, EventKind::frame_dropped, subject(ev.actor), "f" + std::to_string(ev.frame) + " receiver down"});
          break;
        }
        if (cfg.trace_frames)
          result.trace.append({now, EventKind::frame_delivered, subject(ev.actor), "f" + std::to_string(ev.frame)});
        if (ev.actor < n_nodes) {
          absorb(ev.actor, now, nodes[ev.actor].on_frame(now, ev.bytes));
        } else {
          absorb(ev.actor, now, coords[ev.actor - n_nodes].on_frame(now, ev.bytes));
        }
        break;
      }
      case detail::SimEvent::timer:
        if (ev.actor < n_nodes) {
          absorb(ev.actor, now, nodes[ev.actor].on_timer(now, ev.timer_kind, ev.key));
        } else {
          absorb(ev.actor, now, coords[ev.actor - n_nodes].on_timer(now, ev.timer_kind, ev.key));
        }
        break;
      case detail::SimEvent::fault: {
        const auto& f = faults[ev.index];
        if (f.coordinator) {
          absorb(n_nodes + f.coordinator_index, now, coords[f.coordinator_index].kill(now));
        } else {
          const auto a = deploy::node_index(spec, f.node);
          absorb(a, now, nodes[a].kill(now));
        }
        break;
      }
      case detail::SimEvent::request: {
        const auto& x = workload.inputs[ev.index];
        for (const auto& m : wire::chunk_input(x, static_cast<std::uint32_t>(ev.index))) {
          const auto bytes = wire::encode_frame(m);
          for (std::size_t c = 0; c < n_coord; ++c) absorb(n_nodes + c, now, coords[c].on_frame(now, bytes));
        }
        break;
      }
    }
    if (resolved == result.predictions.size() && now >= settle) break;
  }
  result.end_time = now;
  return result;
}

// Convenience: float parameters straight from double ones.
inline SimResult run_simulation(const SimConfig& cfg, const nn::NetworkSpec& spec, const nn::Parameters<double>& params,
                                const Workload& workload, std::span<const FaultEvent> faults, std::uint64_t seed) {
  return run_simulation(cfg, spec, params.cast<float>(), workload, faults, seed);
}

}  // namespace ftmlp::runtime
