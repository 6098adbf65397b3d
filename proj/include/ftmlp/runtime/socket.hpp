#pragma once

// Datagram transport: the same node and coordinator state machines driven by
// a poll loop, steady-clock timers and UDP sockets. Broadcast is iterated
// unicast over the endpoints listed in the cluster file.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <string>
#include <vector>

#include "ftmlp/deploy.hpp"
#include "ftmlp/kv.hpp"
#include "ftmlp/runtime/cluster.hpp"
#include "ftmlp/runtime/coordinator.hpp"
#include "ftmlp/runtime/node.hpp"
#include "ftmlp/wire.hpp"

namespace ftmlp::runtime {

class SocketError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  sockaddr_in addr{};

  static Endpoint parse(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos) throw ConfigError("endpoint must be host:port, got '" + std::string(text) + "'");
    const std::string host(text.substr(0, colon));
    const auto port = parse_uint_list(text.substr(colon + 1)).at(0);
    if (port == 0 || port > 65535) throw ConfigError("bad port in '" + std::string(text) + "'");
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_DGRAM;
    addrinfo* res = nullptr;
    if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
      throw ConfigError("cannot resolve host '" + host + "'");
    Endpoint e;
    std::memcpy(&e.addr, res->ai_addr, sizeof(sockaddr_in));
    freeaddrinfo(res);
    e.addr.sin_port = htons(static_cast<std::uint16_t>(port));
    return e;
  }

  std::string str() const {
    char buf[INET_ADDRSTRLEN] = {};
    inet_ntop(AF_INET, &addr.sin_addr, buf, sizeof buf);
    return std::string(buf) + ":" + std::to_string(ntohs(addr.sin_port));
  }

  bool operator==(const Endpoint& o) const {
    return addr.sin_addr.s_addr == o.addr.sin_addr.s_addr && addr.sin_port == o.addr.sin_port;
  }
};

class UdpSocket {
 public:
  explicit UdpSocket(const std::optional<Endpoint>& bind_to = std::nullopt) {
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) throw SocketError(std::string("socket: ") + std::strerror(errno));
    Endpoint local;
    if (bind_to) {
      local = *bind_to;
    } else {
      local.addr.sin_family = AF_INET;
      local.addr.sin_addr.s_addr = htonl(INADDR_ANY);
    }
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&local.addr), sizeof local.addr) != 0) {
      const std::string why = std::strerror(errno);
      ::close(fd_);
      throw SocketError("cannot bind " + local.str() + ": " + why);
    }
  }
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;
  ~UdpSocket() { ::close(fd_); }

  Endpoint local() const {
    Endpoint e;
    socklen_t len = sizeof e.addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&e.addr), &len);
    return e;
  }

  void send_to(const Endpoint& to, std::span<const std::uint8_t> bytes) const {
    // Datagram semantics: a failed send is a lost frame.
    (void)::sendto(fd_, bytes.data(), bytes.size(), 0, reinterpret_cast<const sockaddr*>(&to.addr), sizeof to.addr);
  }

  // Waits up to timeout_ms for one datagram.
  std::optional<std::pair<std::vector<std::uint8_t>, Endpoint>> receive(int timeout_ms) const {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, timeout_ms) <= 0 || (p.revents & POLLIN) == 0) return std::nullopt;
    std::vector<std::uint8_t> buf(2048);
    Endpoint from;
    socklen_t len = sizeof from.addr;
    const auto n = ::recvfrom(fd_, buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&from.addr), &len);
    if (n < 0) return std::nullopt;
    buf.resize(static_cast<std::size_t>(n));
    return std::make_pair(std::move(buf), from);
  }

 private:
  int fd_ = -1;
};

// Cluster file:
//   layers=10,10,10,1
//   hidden_activation=relu
//   output_activation=linear
//   node.1.0=127.0.0.1:9100
//   coordinator.primary=127.0.0.1:9000
//   coordinator.standby=127.0.0.1:9001     (optional)
//   timing.layer_timeout_ms=50 ... timing.startup_grace_ms=2000
//   duplicate_sends=false                  (test hook: every datagram sent twice)
struct ClusterConfig {
  nn::NetworkSpec spec;
  std::vector<Endpoint> nodes;  // by deploy::node_index
  std::vector<Endpoint> coordinators;
  Timing timing;
  bool duplicate_sends = false;

  static ClusterConfig from(const KeyValues& kv) {
    ClusterConfig c;
    c.spec = deploy::spec_from(kv);
    for (std::size_t i = 0; i < deploy::node_count(c.spec); ++i) {
      const auto id = deploy::node_from_index(c.spec, i);
      const auto key = "node." + std::to_string(id.layer) + "." + std::to_string(id.neuron);
      c.nodes.push_back(Endpoint::parse(kv.require(key)));
    }
    c.coordinators.push_back(Endpoint::parse(kv.require("coordinator.primary")));
    if (auto s = kv.get("coordinator.standby")) c.coordinators.push_back(Endpoint::parse(*s));
    auto ms = [&](const std::string& key, Micros fallback) {
      return static_cast<Micros>(kv.number("timing." + key + "_ms", static_cast<double>(fallback) / kMillis) * kMillis);
    };
    c.timing.layer_timeout = ms("layer_timeout", c.timing.layer_timeout);
    c.timing.heartbeat_interval = ms("heartbeat_interval", c.timing.heartbeat_interval);
    c.timing.heartbeat_miss_threshold =
        static_cast<int>(kv.integer("timing.heartbeat_miss_threshold", static_cast<std::uint64_t>(c.timing.heartbeat_miss_threshold)));
    c.timing.handover_timeout = ms("handover_timeout", c.timing.handover_timeout);
    c.timing.inference_deadline = ms("inference_deadline", c.timing.inference_deadline);
    c.timing.startup_grace = ms("startup_grace", 2000 * kMillis);
    c.timing.validate();
    c.duplicate_sends = kv.boolean("duplicate_sends", false);
    return c;
  }

  static ClusterConfig load(const std::filesystem::path& path) { return from(KeyValues::load(path)); }

  std::vector<Endpoint> layer(std::size_t l) const {
    std::vector<Endpoint> out;
    if (l < 1 || l > spec.depth()) return out;
    const auto first = deploy::node_index(spec, {l, 0});
    for (std::size_t k = 0; k < spec.size(l); ++k) out.push_back(nodes[first + k]);
    return out;
  }
};

inline Micros steady_micros() {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Drives one state machine until `stop` is set or the actor dies.
template <class Actor>
class ActorLoop {
 public:
  using Router = std::function<std::vector<Endpoint>(Channel, std::span<const std::uint8_t>)>;
  using Sink = std::function<void(const TraceEvent&)>;

  ActorLoop(Actor& actor, UdpSocket& sock, Router route, Sink sink, bool duplicate)
      : actor_(actor), sock_(sock), route_(std::move(route)), sink_(std::move(sink)), duplicate_(duplicate) {}

  std::function<void(const wire::Message&, const Endpoint&)> on_receive;  // optional observer
  std::function<void(const Completion&)> on_completion;

  void run(const std::atomic<bool>& stop) {
    const Micros origin = steady_micros();
    auto now = [&] { return steady_micros() - origin; };
    absorb(now(), actor_.start(now()));
    while (!stop.load() && actor_.alive()) {
      Micros wait = 100 * kMillis;
      if (!timers_.empty()) wait = std::max<Micros>(0, timers_.top().at - now());
      const int timeout_ms = static_cast<int>(std::min<Micros>((wait + 999) / 1000, 100));
      if (auto got = sock_.receive(timeout_ms)) {
        if (on_receive) {
          if (auto d = wire::decode_frame(got->first)) on_receive(*d.message, got->second);
        }
        const Micros t = now();
        absorb(t, actor_.on_frame(t, got->first));
      }
      while (!timers_.empty() && timers_.top().at <= now()) {
        const auto t = timers_.top();
        timers_.pop();
        absorb(now(), actor_.on_timer(now(), t.kind, t.key));
      }
    }
  }

 private:
  struct Pending {
    Micros at;
    std::uint64_t seq;
    TimerKind kind;
    std::uint32_t key;
    bool operator>(const Pending& o) const { return at != o.at ? at > o.at : seq > o.seq; }
  };

  void absorb(Micros, Outbox&& out) {
    for (const auto& e : out.log)
      if (sink_) sink_(e);
    for (const auto& t : out.timers) timers_.push({t.at, seq_++, t.kind, t.key});
    for (const auto& s : out.sends)
      for (const auto& to : route_(s.channel, s.bytes)) {
        sock_.send_to(to, s.bytes);
        if (duplicate_) sock_.send_to(to, s.bytes);
      }
    for (const auto& c : out.completions)
      if (on_completion) on_completion(c);
  }

  Actor& actor_;
  UdpSocket& sock_;
  Router route_;
  Sink sink_;
  bool duplicate_;
  std::priority_queue<Pending, std::vector<Pending>, std::greater<>> timers_;
  std::uint64_t seq_ = 0;
};

inline void run_node(const ClusterConfig& cluster, nn::NeuronId id, wire::NeuronParams params,
                     const std::atomic<bool>& stop, std::function<void(const TraceEvent&)> sink = {}) {
  const auto self = cluster.nodes.at(deploy::node_index(cluster.spec, id));
  UdpSocket sock(self);
  NeuronNode node(id, cluster.spec, std::move(params), cluster.timing);
  const auto next = cluster.layer(id.layer + 1);
  ActorLoop<NeuronNode> loop(
      node, sock,
      [&](Channel ch, std::span<const std::uint8_t>) -> std::vector<Endpoint> {
        if (ch == Channel::next_layer) return next;
        if (ch == Channel::coordinators) return cluster.coordinators;
        return {};
      },
      std::move(sink), cluster.duplicate_sends);
  loop.run(stop);
}

inline void run_coordinator(const ClusterConfig& cluster, std::size_t index, const std::atomic<bool>& stop,
                            std::function<void(const TraceEvent&)> sink = {}) {
  if (index >= cluster.coordinators.size()) throw ConfigError("cluster file has no coordinator " + std::to_string(index));
  UdpSocket sock(cluster.coordinators[index]);
  const bool has_peer = cluster.coordinators.size() > 1;
  Coordinator coord(index, index == 0 ? wire::Role::primary : wire::Role::standby, cluster.spec, cluster.timing, has_peer);
  std::map<std::uint32_t, Endpoint> clients;
  std::vector<Endpoint> peers;
  for (std::size_t c = 0; c < cluster.coordinators.size(); ++c)
    if (c != index) peers.push_back(cluster.coordinators[c]);
  const auto input_layer = cluster.layer(1);
  ActorLoop<Coordinator> loop(
      coord, sock,
      [&](Channel ch, std::span<const std::uint8_t> bytes) -> std::vector<Endpoint> {
        switch (ch) {
          case Channel::input_layer: return input_layer;
          case Channel::all_nodes: return cluster.nodes;
          case Channel::peer_coordinators: return peers;
          case Channel::client: {
            auto d = wire::decode_frame(bytes);
            if (!d) return {};
            auto it = clients.find(request_of(d.message->inference_id));
            if (it == clients.end()) return {};
            return {it->second};
          }
          default: return {};
        }
      },
      std::move(sink), cluster.duplicate_sends);
  loop.on_receive = [&](const wire::Message& m, const Endpoint& from) {
    if (m.as<wire::InputVector>() != nullptr && m.layer != wire::kCoordinatorLayer)
      clients.emplace(request_of(m.inference_id), from);
  };
  loop.run(stop);
}

// Submits inputs to every coordinator and gathers the first RESULT per request.
class Client {
 public:
  explicit Client(const ClusterConfig& cluster) : cluster_(cluster) {}

  void submit(std::uint32_t request, std::span<const float> x, bool duplicate = false) {
    for (const auto& m : wire::chunk_input(x, request)) {
      const auto bytes = wire::encode_frame(m);
      for (const auto& c : cluster_.coordinators) {
        sock_.send_to(c, bytes);
        if (duplicate) sock_.send_to(c, bytes);
      }
    }
  }

  // Returns once `count` distinct requests are answered or the wait expires.
  std::map<std::uint32_t, Completion> collect(std::size_t count, Micros max_wait) {
    const Micros end = steady_micros() + max_wait;
    while (answers_.size() < count && steady_micros() < end) {
      auto got = sock_.receive(20);
      if (!got) continue;
      auto d = wire::decode_frame(got->first);
      if (!d) continue;
      const auto* r = d.message->as<wire::Result>();
      if (r == nullptr) continue;
      const bool failed = (d.message->flags & wire::kResultFailed) != 0;
      answers_.try_emplace(d.message->inference_id, Completion{d.message->inference_id, !failed, r->values});
    }
    return answers_;
  }

  void inject(const Endpoint& to, std::uint8_t layer, std::uint8_t neuron) {
    wire::Message m;
    m.layer = layer;
    m.neuron = neuron;
    m.body = wire::FaultInject{layer, neuron};
    sock_.send_to(to, wire::encode_frame(m));
  }

 private:
  const ClusterConfig& cluster_;
  UdpSocket sock_;
  std::map<std::uint32_t, Completion> answers_;
};

}  // namespace ftmlp::runtime
