#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ftmlp/nn.hpp"
#include "ftmlp/runtime/cluster.hpp"
#include "ftmlp/wire.hpp"

namespace ftmlp::runtime {

// One neuron as an independent node. It waits for every live source of an
// inference (or its barrier timeout), computes f(sum w_i a_i + b) with
// missing sources as 0, broadcasts the single result and forgets the
// inference. Once killed it never emits again.
class NeuronNode {
 public:
  NeuronNode(nn::NeuronId id, const nn::NetworkSpec& spec, std::optional<wire::NeuronParams> params, Timing timing,
             Micros heartbeat_phase = 0)
      : id_(id),
        depth_(spec.depth()),
        fan_in_(spec.size(id.layer - 1)),
        kind_(spec.activation(id.layer)),
        timing_(timing),
        phase_(heartbeat_phase),
        source_failed_(fan_in_, 0),
        subject_(node_subject(id)) {
    if (id.layer < 1 || id.layer > depth_ || id.neuron >= spec.size(id.layer))
      throw ContractError("node id out of range: " + nn::to_string(id));
    if (params) install(std::move(*params));
  }

  const nn::NeuronId& id() const { return id_; }
  bool alive() const { return alive_; }
  bool ready() const { return params_.has_value(); }
  std::size_t pending() const { return pending_.size(); }

  Outbox start(Micros now) {
    Outbox out;
    if (alive_) out.timer(now + phase_, TimerKind::heartbeat);
    return out;
  }

  Outbox kill(Micros now) {
    Outbox out;
    if (alive_) out.note(now, EventKind::fault_injected, subject_);
    alive_ = false;
    pending_.clear();
    return out;
  }

  Outbox on_frame(Micros now, std::span<const std::uint8_t> bytes) {
    Outbox out;
    if (!alive_) return out;
    auto decoded = wire::decode_frame(bytes);
    if (!decoded) {
      out.note(now, EventKind::frame_ignored, subject_, std::string(wire::to_string(decoded.error)));
      return out;
    }
    const auto& m = *decoded.message;
    if (const auto* in = m.as<wire::InputVector>()) {
      if (id_.layer == 1) accept_inputs(now, m.inference_id, std::size_t{m.seq} * wire::kFloatsPerFrame, in->values, out);
    } else if (const auto* act = m.as<wire::Activation>()) {
      if (m.layer + 1u == id_.layer) {
        const float v = act->value;
        accept_inputs(now, m.inference_id, m.neuron, std::span<const float>(&v, 1), out);
      }
    } else if (const auto* roster = m.as<wire::Roster>()) {
      apply_roster(now, *roster, out);
    } else if (const auto* fault = m.as<wire::FaultInject>()) {
      if (fault->layer == id_.layer && fault->neuron == id_.neuron) {
        auto k = kill(now);
        out.log.insert(out.log.end(), k.log.begin(), k.log.end());
      }
    } else if (m.as<wire::WeightChunk>() != nullptr) {
      if (m.layer == id_.layer && m.neuron == id_.neuron && assembler_.add(m) && assembler_.complete()) {
        auto p = assembler_.assemble();
        if (p.weights.size() == fan_in_) install(std::move(p));
        assembler_ = {};
      }
    }
    return out;
  }

  Outbox on_timer(Micros now, TimerKind kind, std::uint32_t key) {
    Outbox out;
    if (!alive_) return out;
    if (kind == TimerKind::heartbeat) {
      wire::Message hb;
      hb.layer = static_cast<std::uint8_t>(id_.layer);
      hb.neuron = static_cast<std::uint8_t>(id_.neuron);
      hb.body = wire::Heartbeat{wire::Role::node, hb.layer, hb.neuron, heartbeat_counter_++};
      out.send(Channel::coordinators, wire::encode_frame(hb));
      out.timer(now + timing_.heartbeat_interval, TimerKind::heartbeat);
    } else if (kind == TimerKind::barrier) {
      auto it = pending_.find(key);
      if (it != pending_.end()) {
        out.note(now, EventKind::barrier_fired, subject_,
                 "i" + std::to_string(key) + " missing=" + std::to_string(fan_in_ - it->second.received));
        emit(now, key, it->second, out);
        pending_.erase(it);
      }
    }
    return out;
  }

 private:
  struct Pending {
    std::vector<float> values;
    std::vector<std::uint8_t> got;
    std::size_t received = 0;
    Micros first_arrival = 0;
  };

  void install(wire::NeuronParams p) {
    if (p.weights.size() != fan_in_) throw ContractError("weights do not match fan-in for " + subject_);
    params_ = std::move(p);
  }

  bool complete(const Pending& p) const {
    for (std::size_t i = 0; i < fan_in_; ++i)
      if (!p.got[i] && !source_failed_[i]) return false;
    return true;
  }

  void accept_inputs(Micros now, std::uint32_t inference, std::size_t first, std::span<const float> values,
                     Outbox& out) {
    if (!params_) return;
    if (done_.contains(inference)) {
      out.note(now, EventKind::frame_ignored, subject_, "late frame for i" + std::to_string(inference));
      return;
    }
    auto [it, fresh] = pending_.try_emplace(inference);
    auto& p = it->second;
    if (fresh) {
      p.values.assign(fan_in_, 0.0f);
      p.got.assign(fan_in_, 0);
      p.first_arrival = now;
      out.timer(now + timing_.layer_timeout, TimerKind::barrier, inference);
    }
    for (std::size_t j = 0; j < values.size(); ++j) {
      const std::size_t src = first + j;
      if (src >= fan_in_ || p.got[src]) continue;  // duplicates are idempotent
      p.values[src] = values[j];
      p.got[src] = 1;
      ++p.received;
    }
    if (complete(p)) {
      emit(now, inference, p, out);
      pending_.erase(it);
    }
  }

  void apply_roster(Micros now, const wire::Roster& roster, Outbox& out) {
    if (id_.layer < 2) return;
    for (const auto& f : roster.failed)
      if (f.layer + 1u == id_.layer && f.neuron < fan_in_) source_failed_[f.neuron] = 1;
    for (auto it = pending_.begin(); it != pending_.end();) {
      if (complete(it->second)) {
        emit(now, it->first, it->second, out);
        it = pending_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void emit(Micros, std::uint32_t inference, const Pending& p, Outbox& out) {
    done_.insert(inference);
    const float z = nn::neuron_preactivation<float>(params_->weights, params_->bias, p.values);
    const float a = nn::activate<float>(kind_, z);
    wire::Message m;
    m.inference_id = inference;
    m.layer = static_cast<std::uint8_t>(id_.layer);
    m.neuron = static_cast<std::uint8_t>(id_.neuron);
    if (id_.layer == depth_) {
      m.body = wire::Result{{a}};
      out.send(Channel::coordinators, wire::encode_frame(m));
    } else {
      m.body = wire::Activation{a};
      out.send(Channel::next_layer, wire::encode_frame(m));
    }
  }

  nn::NeuronId id_;
  std::size_t depth_;
  std::size_t fan_in_;
  nn::Activation kind_;
  Timing timing_;
  Micros phase_;
  std::optional<wire::NeuronParams> params_;
  wire::WeightAssembler assembler_;
  std::vector<std::uint8_t> source_failed_;
  std::map<std::uint32_t, Pending> pending_;
  std::set<std::uint32_t> done_;
  std::uint32_t heartbeat_counter_ = 0;
  bool alive_ = true;
  std::string subject_;
};

}  // namespace ftmlp::runtime
