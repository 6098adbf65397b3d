#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ftmlp/runtime/cluster.hpp"

namespace ftmlp::runtime {

// One record per injected fault.
//   detection     = first node_failed / handover_started naming the subject - injection
//   stabilization = first inference_completed at or after that declaration - declaration
struct RecoveryRecord {
  std::string subject;
  Micros injected = 0;
  std::optional<Micros> declared;
  std::optional<Micros> detection;
  std::optional<Micros> stabilization;

  bool censored() const { return !detection || !stabilization; }
  std::optional<Micros> total() const {
    if (!detection || !stabilization) return std::nullopt;
    return *detection + *stabilization;
  }
};

inline std::vector<RecoveryRecord> measure_recovery(const Trace& trace) {
  std::vector<RecoveryRecord> out;
  const auto& ev = trace.events();
  for (std::size_t i = 0; i < ev.size(); ++i) {
    if (ev[i].kind != EventKind::fault_injected) continue;
    RecoveryRecord r;
    r.subject = ev[i].subject;
    r.injected = ev[i].time;
    std::size_t j = i + 1;
    for (; j < ev.size(); ++j) {
      const auto& e = ev[j];
      if ((e.kind == EventKind::node_failed || e.kind == EventKind::handover_started) && e.subject == r.subject) {
        r.declared = e.time;
        r.detection = e.time - r.injected;
        break;
      }
    }
    if (r.declared) {
      for (; j < ev.size(); ++j) {
        if (ev[j].kind == EventKind::inference_completed) {
          r.stabilization = ev[j].time - *r.declared;
          break;
        }
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string format_ms(std::optional<Micros> us) {
  if (!us) return "censored";
  const Micros whole = *us / kMillis;
  const Micros frac = *us % kMillis;
  std::string f = std::to_string(frac);
  return std::to_string(whole) + "." + std::string(3 - f.size(), '0') + f;
}

}  // namespace ftmlp::runtime
