#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ftmlp/deploy.hpp"
#include "ftmlp/nn.hpp"
#include "ftmlp/runtime/cluster.hpp"
#include "ftmlp/wire.hpp"

namespace ftmlp::runtime {

enum class PeerStatus { alive, suspected, failed };

// Routes requests into layer 1, collects RESULTs, tracks liveness of every
// neuron node (and of the other coordinator) through heartbeats, and takes
// over as primary when the acting one goes silent.
class Coordinator {
 public:
  Coordinator(std::size_t index, wire::Role role, const nn::NetworkSpec& spec, Timing timing, bool has_peer)
      : index_(index),
        role_(role),
        spec_(spec),
        timing_(timing),
        has_peer_(has_peer),
        node_total_(deploy::node_count(spec)),
        peers_(node_total_ + (has_peer ? 1 : 0)),
        subject_(coordinator_subject(index)) {
    if (role == wire::Role::node) throw ContractError("coordinator role must be primary or standby");
    if (index > 1) throw ContractError("coordinator index must be 0 or 1");
    timing.validate();
    for (std::size_t p = 0; p < node_total_; ++p) peers_[p].subject = node_subject(deploy::node_from_index(spec, p));
    if (has_peer) peers_.back().subject = coordinator_subject(1 - index);
  }

  std::size_t index() const { return index_; }
  wire::Role role() const { return role_; }
  bool is_primary() const { return alive_ && role_ == wire::Role::primary; }
  bool alive() const { return alive_; }
  PeerStatus status(std::size_t peer) const { return peers_.at(peer).status; }
  const std::vector<wire::FailedNode>& failed() const { return failed_; }

  Outbox start(Micros now) {
    Outbox out;
    if (!alive_) return out;
    for (auto& p : peers_) p.last = now + timing_.startup_grace;
    out.timer(now, TimerKind::heartbeat);
    if (role_ == wire::Role::primary) {
      arm_liveness(out);
    } else {
      primary_last_ = now + timing_.startup_grace;
      out.timer(primary_last_ + timing_.handover_timeout, TimerKind::peer_check);
    }
    return out;
  }

  Outbox kill(Micros now) {
    Outbox out;
    if (alive_) out.note(now, EventKind::fault_injected, subject_);
    alive_ = false;
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
    if (const auto* hb = m.as<wire::Heartbeat>()) {
      on_heartbeat(now, *hb, out);
    } else if (const auto* in = m.as<wire::InputVector>()) {
      on_input(now, m, *in, out);
    } else if (const auto* res = m.as<wire::Result>()) {
      if (m.layer == spec_.depth() && !res->values.empty()) on_result(now, m, res->values.front(), out);
    } else if (const auto* ack = m.as<wire::Ack>()) {
      // The acting primary answered this request; a later takeover must not.
      if (ack->acked == wire::MsgType::result && m.layer == wire::kCoordinatorLayer && !is_primary())
        requests_[request_of(m.inference_id)].answered = true;
    } else if (const auto* roster = m.as<wire::Roster>()) {
      for (const auto& f : roster->failed) mark_failed_quietly(f);
    } else if (const auto* fault = m.as<wire::FaultInject>()) {
      if (fault->layer == wire::kCoordinatorLayer && fault->neuron == index_) {
        auto k = kill(now);
        out.log.insert(out.log.end(), k.log.begin(), k.log.end());
      }
    }
    return out;
  }

  Outbox on_timer(Micros now, TimerKind kind, std::uint32_t key) {
    Outbox out;
    if (!alive_) return out;
    switch (kind) {
      case TimerKind::heartbeat: send_heartbeat(now, out); break;
      case TimerKind::liveness_check: check_peer(now, key, out); break;
      case TimerKind::peer_check: check_primary(now, out); break;
      case TimerKind::output_barrier: {
        auto it = requests_.find(request_of(key));
        if (it != requests_.end() && !it->second.done && it->second.attempt == key >> 24) finish(now, it->first, it->second, true, out);
        break;
      }
      case TimerKind::deadline: {
        auto it = requests_.find(request_of(key));
        if (it != requests_.end() && !it->second.done && it->second.attempt == key >> 24 && is_primary()) {
          it->second.done = true;
          out.note(now, EventKind::inference_failed, subject_, "r" + std::to_string(it->first) + " deadline");
          out.completions.push_back({it->first, false, {}});
          reply(it->first, {}, true, out);
        }
        break;
      }
      case TimerKind::barrier: break;
    }
    return out;
  }

 private:
  struct Peer {
    Micros last = 0;
    PeerStatus status = PeerStatus::alive;
    std::string subject;
  };

  struct Request {
    std::vector<float> input;
    std::vector<std::uint8_t> chunk_got;
    bool has_input = false;
    Micros arrival = 0;
    std::uint32_t attempt = 0;
    bool dispatched = false;
    bool done = false;
    bool answered = false;  // standby: the primary acknowledged its reply
    Micros done_at = 0;
    std::vector<float> outputs;
    std::vector<std::uint8_t> got;
    bool barrier_armed = false;
  };

  std::size_t outputs() const { return spec_.outputs(); }

  void arm_liveness(Outbox& out) {
    for (std::size_t p = 0; p < peers_.size(); ++p)
      if (peers_[p].status != PeerStatus::failed)
        out.timer(peers_[p].last + timing_.suspect_after(), TimerKind::liveness_check, static_cast<std::uint32_t>(p));
  }

  void send_heartbeat(Micros now, Outbox& out) {
    wire::Message hb;
    hb.layer = wire::kCoordinatorLayer;
    hb.neuron = static_cast<std::uint8_t>(index_);
    hb.body = wire::Heartbeat{role_, wire::kCoordinatorLayer, hb.neuron, heartbeat_counter_++};
    if (has_peer_) out.send(Channel::peer_coordinators, wire::encode_frame(hb));
    out.timer(now + timing_.heartbeat_interval, TimerKind::heartbeat);
  }

  void on_heartbeat(Micros now, const wire::Heartbeat& hb, Outbox& out) {
    std::size_t p = 0;
    if (hb.layer == wire::kCoordinatorLayer) {
      if (!has_peer_ || hb.neuron == index_) return;
      p = peers_.size() - 1;
      if (hb.role == wire::Role::primary) primary_last_ = now;
    } else {
      const nn::NeuronId id{hb.layer, hb.neuron};
      if (id.layer < 1 || id.layer > spec_.depth() || id.neuron >= spec_.size(id.layer)) return;
      p = deploy::node_index(spec_, id);
    }
    auto& peer = peers_[p];
    if (peer.status == PeerStatus::failed) return;  // no resurrection
    peer.last = now;
    if (peer.status == PeerStatus::suspected) {
      peer.status = PeerStatus::alive;
      if (is_primary()) out.note(now, EventKind::node_alive, peer.subject);
    }
  }

  // Lazy per-peer timer: it re-arms itself from the latest heartbeat instead
  // of being reset on every heartbeat.
  void check_peer(Micros now, std::uint32_t p, Outbox& out) {
    if (!is_primary() || p >= peers_.size()) return;
    auto& peer = peers_[p];
    if (peer.status == PeerStatus::failed) return;
    const Micros fail_at = peer.last + timing_.detection_budget();
    const Micros suspect_at = peer.last + timing_.suspect_after();
    if (now >= fail_at) {
      peer.status = PeerStatus::failed;
      out.note(now, EventKind::node_failed, peer.subject, "silent_us=" + std::to_string(now - peer.last));
      if (p < node_total_) {
        const auto id = deploy::node_from_index(spec_, p);
        add_failed({static_cast<std::uint8_t>(id.layer), static_cast<std::uint8_t>(id.neuron)});
        broadcast_roster(now, out);
        recheck_outputs(now, out);
      }
      return;
    }
    if (now >= suspect_at && peer.status == PeerStatus::alive) {
      peer.status = PeerStatus::suspected;
      out.note(now, EventKind::node_suspected, peer.subject, "silent_us=" + std::to_string(now - peer.last));
    }
    out.timer(now >= suspect_at ? fail_at : suspect_at, TimerKind::liveness_check, p);
  }

  void check_primary(Micros now, Outbox& out) {
    if (role_ != wire::Role::standby) return;
    const Micros due = primary_last_ + timing_.handover_timeout;
    if (now < due) {
      out.timer(due, TimerKind::peer_check);
      return;
    }
    promote(now, out);
  }

  void promote(Micros now, Outbox& out) {
    out.note(now, EventKind::handover_started, coordinator_subject(1 - index_),
             "silent_us=" + std::to_string(now - primary_last_));
    role_ = wire::Role::primary;
    peers_.back().status = PeerStatus::failed;
    broadcast_roster(now, out);
    for (auto& [req, r] : requests_) {
      if (r.answered) continue;
      if (r.done) {
        if (!r.outputs.empty()) {
          out.note(now, EventKind::inference_recovered, subject_, "r" + std::to_string(req));
          out.completions.push_back({req, true, r.outputs});
          reply(req, r.outputs, false, out);
        }
        continue;
      }
      if (!r.has_input) continue;
      r.attempt += 1;
      dispatch(now, req, r, out);
    }
    arm_liveness(out);
    out.note(now, EventKind::handover_finished, subject_);
  }

  void add_failed(wire::FailedNode f) {
    auto it = std::lower_bound(failed_.begin(), failed_.end(), f, [](const auto& a, const auto& b) {
      return std::pair(a.layer, a.neuron) < std::pair(b.layer, b.neuron);
    });
    if (it == failed_.end() || !(*it == f)) failed_.insert(it, f);
  }

  void mark_failed_quietly(const wire::FailedNode& f) {
    const nn::NeuronId id{f.layer, f.neuron};
    if (id.layer < 1 || id.layer > spec_.depth() || id.neuron >= spec_.size(id.layer)) return;
    peers_[deploy::node_index(spec_, id)].status = PeerStatus::failed;
    add_failed(f);
  }

  void broadcast_roster(Micros now, Outbox& out) {
    wire::Roster r;
    for (auto n : spec_.layer_sizes) r.layer_sizes.push_back(static_cast<std::uint8_t>(n));
    r.primary = static_cast<std::uint8_t>(index_);
    r.failed = failed_;
    wire::Message m;
    m.layer = wire::kCoordinatorLayer;
    m.neuron = static_cast<std::uint8_t>(index_);
    m.body = std::move(r);
    const auto bytes = wire::encode_frame(m);
    out.send(Channel::all_nodes, bytes);
    if (has_peer_) out.send(Channel::peer_coordinators, bytes);
    out.note(now, EventKind::roster_broadcast, subject_, "failed=" + std::to_string(failed_.size()));
  }

  void on_input(Micros now, const wire::Message& m, const wire::InputVector& in, Outbox& out) {
    const std::uint32_t req = request_of(m.inference_id);
    const std::size_t dim = spec_.inputs();
    const std::size_t chunks = (dim + wire::kFloatsPerFrame - 1) / wire::kFloatsPerFrame;
    auto [it, fresh] = requests_.try_emplace(req);
    auto& r = it->second;
    if (fresh || r.input.empty()) {
      r.input.assign(dim, 0.0f);
      r.chunk_got.assign(chunks, 0);
      r.arrival = now;
    }
    if (r.has_input || m.seq >= chunks) return;
    const std::size_t first = std::size_t{m.seq} * wire::kFloatsPerFrame;
    if (in.values.size() != std::min(wire::kFloatsPerFrame, dim - first)) return;
    std::copy(in.values.begin(), in.values.end(), r.input.begin() + static_cast<std::ptrdiff_t>(first));
    r.chunk_got[m.seq] = 1;
    r.has_input = std::all_of(r.chunk_got.begin(), r.chunk_got.end(), [](auto g) { return g != 0; });
    if (r.has_input && is_primary()) dispatch(now, req, r, out);
  }

  void dispatch(Micros now, std::uint32_t req, Request& r, Outbox& out) {
    r.dispatched = true;
    r.got.assign(outputs(), 0);
    r.outputs.assign(outputs(), 0.0f);
    r.barrier_armed = false;
    const std::uint32_t wid = wire_inference_id(req, r.attempt);
    for (const auto& m : wire::chunk_input(r.input, wid, wire::kCoordinatorLayer, static_cast<std::uint8_t>(index_)))
      out.send(Channel::input_layer, wire::encode_frame(m));
    out.note(now, EventKind::inference_dispatched, subject_, "r" + std::to_string(req) + " a" + std::to_string(r.attempt));
    out.timer(now + timing_.inference_deadline, TimerKind::deadline, wid);
  }

  bool output_failed(std::size_t k) const {
    const wire::FailedNode f{static_cast<std::uint8_t>(spec_.depth()), static_cast<std::uint8_t>(k)};
    return std::find(failed_.begin(), failed_.end(), f) != failed_.end();
  }

  bool outputs_complete(const Request& r) const {
    for (std::size_t k = 0; k < outputs(); ++k)
      if (!r.got[k] && !output_failed(k)) return false;
    return true;
  }

  void on_result(Micros now, const wire::Message& m, float value, Outbox& out) {
    const std::uint32_t req = request_of(m.inference_id);
    auto it = requests_.find(req);
    if (it == requests_.end()) return;
    auto& r = it->second;
    if (r.got.empty()) {
      r.got.assign(outputs(), 0);
      r.outputs.assign(outputs(), 0.0f);
    }
    if (r.done || (m.inference_id >> 24) != r.attempt || m.neuron >= outputs()) {
      out.note(now, EventKind::frame_ignored, subject_, "late result for r" + std::to_string(req));
      return;
    }
    if (r.got[m.neuron]) return;
    r.got[m.neuron] = 1;
    r.outputs[m.neuron] = value;
    if (!r.barrier_armed) {
      r.barrier_armed = true;
      out.timer(now + timing_.layer_timeout, TimerKind::output_barrier, m.inference_id);
    }
    if (outputs_complete(r)) finish(now, req, r, false, out);
  }

  void recheck_outputs(Micros now, Outbox& out) {
    for (auto& [req, r] : requests_)
      if (!r.done && r.barrier_armed && outputs_complete(r)) finish(now, req, r, false, out);
  }

  void finish(Micros now, std::uint32_t req, Request& r, bool by_barrier, Outbox& out) {
    r.done = true;
    r.done_at = now;
    if (spec_.output == nn::Activation::softmax) {
      std::vector<float> z = r.outputs;
      nn::softmax_into<float>(z, r.outputs, r.got);
    }
    if (!is_primary()) return;  // a standby only keeps track
    std::string detail = "r" + std::to_string(req) + " latency_us=" + std::to_string(now - r.arrival);
    if (by_barrier) detail += " barrier";
    out.note(now, EventKind::inference_completed, subject_, detail);
    out.completions.push_back({req, true, r.outputs});
    reply(req, r.outputs, false, out);
  }

  void reply(std::uint32_t req, const std::vector<float>& values, bool failed, Outbox& out) {
    wire::Message m;
    m.flags = failed ? wire::kResultFailed : 0;
    m.inference_id = req;
    m.layer = wire::kCoordinatorLayer;
    m.neuron = static_cast<std::uint8_t>(index_);
    m.body = wire::Result{values};
    out.send(Channel::client, wire::encode_frame(m));
    if (has_peer_) {
      m.flags = 0;
      m.body = wire::Ack{wire::MsgType::result, 0};
      out.send(Channel::peer_coordinators, wire::encode_frame(m));
    }
  }

  std::size_t index_;
  wire::Role role_;
  nn::NetworkSpec spec_;
  Timing timing_;
  bool has_peer_;
  std::size_t node_total_;
  std::vector<Peer> peers_;
  std::vector<wire::FailedNode> failed_;
  std::map<std::uint32_t, Request> requests_;
  Micros primary_last_ = 0;
  std::uint32_t heartbeat_counter_ = 0;
  bool alive_ = true;
  std::string subject_;
};

}  // namespace ftmlp::runtime
