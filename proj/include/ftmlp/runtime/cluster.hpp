#pragma once

// Types shared by the node and coordinator state machines and by both
// transports. State machines never touch clocks or sockets: they receive an
// explicit `now` and return an Outbox of frames, timer requests and trace
// events for the transport to act on.

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "ftmlp/error.hpp"
#include "ftmlp/nn.hpp"

namespace ftmlp::runtime {

using Micros = std::int64_t;

inline constexpr Micros kMillis = 1000;

struct Timing {
  Micros layer_timeout = 50 * kMillis;
  Micros heartbeat_interval = 25 * kMillis;
  int heartbeat_miss_threshold = 2;
  Micros handover_timeout = 200 * kMillis;
  Micros inference_deadline = 500 * kMillis;
  // Liveness tracking of a peer starts this long after start-up.
  Micros startup_grace = 0;

  Micros detection_budget() const { return heartbeat_interval * heartbeat_miss_threshold; }

  // Suspicion: one interval plus half an interval of jitter allowance.
  Micros suspect_after() const { return heartbeat_interval + heartbeat_interval / 2; }

  void validate() const {
    if (layer_timeout <= 0 || heartbeat_interval <= 0 || handover_timeout <= 0 || inference_deadline <= 0)
      throw ConfigError("timing values must be positive");
    if (heartbeat_miss_threshold < 1) throw ConfigError("heartbeat_miss_threshold must be >= 1");
  }
};

// Who a frame goes to. Addressing lives in the transport, not in the frame.
enum class Channel {
  next_layer,         // every node of the sender's layer + 1
  coordinators,       // every coordinator
  peer_coordinators,  // every coordinator except the sender
  input_layer,        // every node of layer 1
  all_nodes,          // every neuron node
  client,             // whoever submitted the request (socket mode)
};

struct Send {
  Channel channel;
  std::vector<std::uint8_t> bytes;
};

enum class TimerKind : std::uint8_t {
  heartbeat,
  barrier,         // key = inference id
  liveness_check,  // key = peer index
  peer_check,      // standby watching the primary
  output_barrier,  // key = inference id
  deadline,        // key = inference id
};

struct TimerRequest {
  Micros at = 0;
  TimerKind kind = TimerKind::heartbeat;
  std::uint32_t key = 0;
};

enum class EventKind {
  frame_sent,
  frame_delivered,
  frame_dropped,
  frame_ignored,
  fault_injected,
  node_suspected,
  node_alive,
  node_failed,
  barrier_fired,
  activation_emitted,
  inference_dispatched,
  inference_completed,
  inference_recovered,
  inference_failed,
  handover_started,
  handover_finished,
  roster_broadcast,
};

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::frame_sent: return "frame_sent";
    case EventKind::frame_delivered: return "frame_delivered";
    case EventKind::frame_dropped: return "frame_dropped";
    case EventKind::frame_ignored: return "frame_ignored";
    case EventKind::fault_injected: return "fault_injected";
    case EventKind::node_suspected: return "node_suspected";
    case EventKind::node_alive: return "node_alive";
    case EventKind::node_failed: return "node_failed";
    case EventKind::barrier_fired: return "barrier_fired";
    case EventKind::activation_emitted: return "activation_emitted";
    case EventKind::inference_dispatched: return "inference_dispatched";
    case EventKind::inference_completed: return "inference_completed";
    case EventKind::inference_recovered: return "inference_recovered";
    case EventKind::inference_failed: return "inference_failed";
    case EventKind::handover_started: return "handover_started";
    case EventKind::handover_finished: return "handover_finished";
    case EventKind::roster_broadcast: return "roster_broadcast";
  }
  return "?";
}

inline EventKind event_kind_from_string(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(EventKind::roster_broadcast); ++i) {
    const auto k = static_cast<EventKind>(i);
    if (to_string(k) == s) return k;
  }
  throw ParseError("unknown trace event '" + std::string(s) + "'");
}

struct TraceEvent {
  Micros time = 0;
  EventKind kind = EventKind::frame_sent;
  std::string subject;
  std::string detail;

  bool operator==(const TraceEvent&) const = default;
};

// Append-only, timestamps non-decreasing.
class Trace {
 public:
  void append(TraceEvent e) {
    if (!events_.empty() && e.time < events_.back().time) throw ContractError("trace time went backwards");
    events_.push_back(std::move(e));
  }

  const std::vector<TraceEvent>& events() const { return events_; }
  std::size_t size() const { return events_.size(); }

  bool operator==(const Trace&) const = default;

 private:
  std::vector<TraceEvent> events_;
};

inline void write_trace_header(std::ostream& out) { out << "time_us,event,subject,detail\n"; }

inline void write_trace_line(std::ostream& out, const TraceEvent& e) {
  out << e.time << ',' << to_string(e.kind) << ',' << e.subject << ',' << e.detail << '\n';
}

inline void write_trace_csv(std::ostream& out, const Trace& trace) {
  write_trace_header(out);
  for (const auto& e : trace.events()) write_trace_line(out, e);
}

struct Completion {
  std::uint32_t request = 0;
  bool ok = false;
  std::vector<float> outputs;
};

struct Outbox {
  std::vector<Send> sends;
  std::vector<TimerRequest> timers;
  std::vector<TraceEvent> log;
  std::vector<Completion> completions;

  void send(Channel c, std::vector<std::uint8_t> bytes) { sends.push_back({c, std::move(bytes)}); }
  void timer(Micros at, TimerKind kind, std::uint32_t key = 0) { timers.push_back({at, kind, key}); }
  void note(Micros now, EventKind kind, std::string subject, std::string detail = {}) {
    log.push_back({now, kind, std::move(subject), std::move(detail)});
  }
};

inline std::string node_subject(nn::NeuronId id) { return "n" + nn::to_string(id); }
inline std::string coordinator_subject(std::size_t index) { return "c" + std::to_string(index); }

// Inference ids on the wire: attempt number in the top byte, request in the rest.
inline constexpr std::uint32_t kRequestMask = 0x00FFFFFFu;
inline std::uint32_t wire_inference_id(std::uint32_t request, std::uint32_t attempt) {
  return (attempt << 24) | (request & kRequestMask);
}
inline std::uint32_t request_of(std::uint32_t wire_id) { return wire_id & kRequestMask; }

}  // namespace ftmlp::runtime
