#pragma once

// Binary framing for every message exchanged between neuron nodes and
// coordinators. See docs/wire-format.md for the normative byte layout.
//
//   off  size  field
//   0    2     magic 0x4E 0x43
//   2    1     version 0x01
//   3    1     msg_type
//   4    1     flags
//   5    4     inference_id (u32 LE)
//   9    1     layer
//   10   1     neuron
//   11   2     seq (u16 LE)
//   13   2     payload_len (u16 LE)
//   15   n     payload
//   15+n 4     CRC32/IEEE over bytes [0, 15+n), LE

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ftmlp::wire {

inline constexpr std::uint8_t kMagic0 = 0x4E;
inline constexpr std::uint8_t kMagic1 = 0x43;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 15;
inline constexpr std::size_t kCrcSize = 4;
inline constexpr std::size_t kMaxFrame = 250;
inline constexpr std::size_t kMaxPayload = 224;
inline constexpr std::size_t kFloatsPerFrame = kMaxPayload / 4;

// ---------------------------------------------------------------------------
// byte helpers

namespace detail {

constexpr std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}

inline constexpr auto kCrcTable = make_crc_table();

}  // namespace detail

inline std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (auto b : bytes) c = detail::kCrcTable[(c ^ b) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

inline float get_f32(std::span<const std::uint8_t> b, std::size_t off) { return std::bit_cast<float>(get_u32(b, off)); }

// ---------------------------------------------------------------------------
// messages

enum class MsgType : std::uint8_t {
  weight_chunk = 0x01,
  input_vector = 0x02,
  activation = 0x03,
  result = 0x04,
  heartbeat = 0x05,
  fault_inject = 0x06,
  ack = 0x07,
  roster = 0x08,
};

enum class Role : std::uint8_t { node = 0, primary = 1, standby = 2 };

// layer value naming a coordinator in FAULT_INJECT / HEARTBEAT.
inline constexpr std::uint8_t kCoordinatorLayer = 0xFF;

// RESULT flags
inline constexpr std::uint8_t kResultFailed = 0x01;

// Slice of [bias, w0, w1, ...]. The header carries fan_in in inference_id
// and the activation kind in flags.
struct WeightChunk {
  std::vector<float> values;
  bool operator==(const WeightChunk&) const = default;
};

// Input floats; seq is the chunk index (56 floats per chunk).
struct InputVector {
  std::vector<float> values;
  bool operator==(const InputVector&) const = default;
};

struct Activation {
  float value = 0.0f;
  bool operator==(const Activation&) const = default;
};

struct Result {
  std::vector<float> values;
  bool operator==(const Result&) const = default;
};

struct Heartbeat {
  Role role = Role::node;
  std::uint8_t layer = 0;
  std::uint8_t neuron = 0;
  std::uint32_t counter = 0;
  bool operator==(const Heartbeat&) const = default;
};

struct FaultInject {
  std::uint8_t layer = 0;
  std::uint8_t neuron = 0;
  bool operator==(const FaultInject&) const = default;
};

struct Ack {
  MsgType acked = MsgType::ack;
  std::uint16_t seq = 0;
  bool operator==(const Ack&) const = default;
};

struct FailedNode {
  std::uint8_t layer = 0;
  std::uint8_t neuron = 0;
  bool operator==(const FailedNode&) const = default;
};

struct Roster {
  std::vector<std::uint8_t> layer_sizes;  // n0 .. nL
  std::uint8_t primary = 0;               // index of the acting coordinator
  std::vector<FailedNode> failed;
  bool operator==(const Roster&) const = default;
};

using Body = std::variant<WeightChunk, InputVector, Activation, Result, Heartbeat, FaultInject, Ack, Roster>;

struct Message {
  std::uint8_t flags = 0;
  std::uint32_t inference_id = 0;
  std::uint8_t layer = 0;
  std::uint8_t neuron = 0;
  std::uint16_t seq = 0;
  Body body;

  MsgType type() const { return static_cast<MsgType>(body.index() + 1); }

  template <class B>
  const B* as() const {
    return std::get_if<B>(&body);
  }

  bool operator==(const Message&) const = default;
};

class FrameError : public std::length_error {
 public:
  using std::length_error::length_error;
};

// ---------------------------------------------------------------------------
// encode

namespace detail {

inline void put_floats(std::vector<std::uint8_t>& out, const std::vector<float>& v) {
  for (float f : v) put_f32(out, f);
}

inline std::vector<std::uint8_t> encode_payload(const Body& body) {
  std::vector<std::uint8_t> p;
  std::visit(
      [&](const auto& b) {
        using B = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<B, WeightChunk> || std::is_same_v<B, InputVector> || std::is_same_v<B, Result>) {
          put_floats(p, b.values);
        } else if constexpr (std::is_same_v<B, Activation>) {
          put_f32(p, b.value);
        } else if constexpr (std::is_same_v<B, Heartbeat>) {
          p.push_back(static_cast<std::uint8_t>(b.role));
          p.push_back(b.layer);
          p.push_back(b.neuron);
          p.push_back(0);
          put_u32(p, b.counter);
        } else if constexpr (std::is_same_v<B, FaultInject>) {
          p.push_back(b.layer);
          p.push_back(b.neuron);
          put_u16(p, 0);
        } else if constexpr (std::is_same_v<B, Ack>) {
          p.push_back(static_cast<std::uint8_t>(b.acked));
          p.push_back(0);
          put_u16(p, b.seq);
        } else if constexpr (std::is_same_v<B, Roster>) {
          if (b.layer_sizes.size() > 255 || b.failed.size() > 255) throw FrameError("roster exceeds frame cap");
          p.push_back(static_cast<std::uint8_t>(b.layer_sizes.size()));
          p.insert(p.end(), b.layer_sizes.begin(), b.layer_sizes.end());
          p.push_back(b.primary);
          p.push_back(static_cast<std::uint8_t>(b.failed.size()));
          for (const auto& f : b.failed) {
            p.push_back(f.layer);
            p.push_back(f.neuron);
          }
        }
      },
      body);
  return p;
}

}  // namespace detail

// Encoded length is always kHeaderSize + payload + kCrcSize <= 250.
inline std::vector<std::uint8_t> encode_frame(const Message& m) {
  const auto payload = detail::encode_payload(m.body);
  if (payload.size() > kMaxPayload)
    throw FrameError("payload of " + std::to_string(payload.size()) + " bytes exceeds frame cap of " +
                     std::to_string(kMaxPayload));
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + payload.size() + kCrcSize);
  out.push_back(kMagic0);
  out.push_back(kMagic1);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(m.type()));
  out.push_back(m.flags);
  put_u32(out, m.inference_id);
  out.push_back(m.layer);
  out.push_back(m.neuron);
  put_u16(out, m.seq);
  put_u16(out, static_cast<std::uint16_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32(out, crc32(out));
  return out;
}

// ---------------------------------------------------------------------------
// decode

enum class DecodeError {
  none,
  bad_magic,
  unknown_version,
  unknown_type,
  length_mismatch,
  crc_mismatch,
  bad_payload,
};

inline std::string_view to_string(DecodeError e) {
  switch (e) {
    case DecodeError::none: return "ok";
    case DecodeError::bad_magic: return "bad magic";
    case DecodeError::unknown_version: return "unknown version";
    case DecodeError::unknown_type: return "unknown message type";
    case DecodeError::length_mismatch: return "length mismatch";
    case DecodeError::crc_mismatch: return "crc mismatch";
    case DecodeError::bad_payload: return "payload violates message schema";
  }
  return "?";
}

struct Decoded {
  std::optional<Message> message;
  DecodeError error = DecodeError::none;

  explicit operator bool() const { return message.has_value(); }
};

namespace detail {

inline std::optional<std::vector<float>> floats(std::span<const std::uint8_t> p, bool allow_empty) {
  if (p.size() % 4 != 0 || (!allow_empty && p.empty())) return std::nullopt;
  std::vector<float> v(p.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = get_f32(p, 4 * i);
  return v;
}

inline std::optional<Body> decode_payload(MsgType type, std::span<const std::uint8_t> p) {
  switch (type) {
    case MsgType::weight_chunk:
      if (auto v = floats(p, false)) return WeightChunk{std::move(*v)};
      return std::nullopt;
    case MsgType::input_vector:
      if (auto v = floats(p, false)) return InputVector{std::move(*v)};
      return std::nullopt;
    case MsgType::activation:
      if (p.size() != 4) return std::nullopt;
      return Activation{get_f32(p, 0)};
    case MsgType::result:
      if (auto v = floats(p, true)) return Result{std::move(*v)};
      return std::nullopt;
    case MsgType::heartbeat:
      if (p.size() != 8 || p[0] > 2 || p[3] != 0) return std::nullopt;
      return Heartbeat{static_cast<Role>(p[0]), p[1], p[2], get_u32(p, 4)};
    case MsgType::fault_inject:
      if (p.size() != 4 || get_u16(p, 2) != 0) return std::nullopt;
      return FaultInject{p[0], p[1]};
    case MsgType::ack:
      if (p.size() != 4 || p[0] < 1 || p[0] > 8 || p[1] != 0) return std::nullopt;
      return Ack{static_cast<MsgType>(p[0]), get_u16(p, 2)};
    case MsgType::roster: {
      if (p.size() < 1) return std::nullopt;
      const std::size_t n = p[0];
      if (n < 2 || p.size() < 1 + n + 2) return std::nullopt;
      Roster r;
      r.layer_sizes.assign(p.begin() + 1, p.begin() + 1 + static_cast<std::ptrdiff_t>(n));
      if (std::find(r.layer_sizes.begin(), r.layer_sizes.end(), 0) != r.layer_sizes.end()) return std::nullopt;
      r.primary = p[1 + n];
      const std::size_t count = p[2 + n];
      if (p.size() != 3 + n + 2 * count) return std::nullopt;
      for (std::size_t i = 0; i < count; ++i) r.failed.push_back({p[3 + n + 2 * i], p[4 + n + 2 * i]});
      return r;
    }
  }
  return std::nullopt;
}

}  // namespace detail

// Total on arbitrary input: returns a message or a typed error, never throws.
inline Decoded decode_frame(std::span<const std::uint8_t> bytes) noexcept {
  auto fail = [](DecodeError e) { return Decoded{std::nullopt, e}; };
  if (bytes.size() >= 2 && (bytes[0] != kMagic0 || bytes[1] != kMagic1)) return fail(DecodeError::bad_magic);
  if (bytes.size() < kHeaderSize + kCrcSize) return fail(DecodeError::length_mismatch);
  if (bytes[2] != kVersion) return fail(DecodeError::unknown_version);
  const std::uint8_t raw_type = bytes[3];
  if (raw_type < 0x01 || raw_type > 0x08) return fail(DecodeError::unknown_type);
  const std::size_t payload_len = get_u16(bytes, 13);
  if (payload_len > kMaxPayload || bytes.size() != kHeaderSize + payload_len + kCrcSize)
    return fail(DecodeError::length_mismatch);
  const std::size_t body_end = kHeaderSize + payload_len;
  if (crc32(bytes.first(body_end)) != get_u32(bytes, body_end)) return fail(DecodeError::crc_mismatch);

  try {
    auto body = detail::decode_payload(static_cast<MsgType>(raw_type), bytes.subspan(kHeaderSize, payload_len));
    if (!body) return fail(DecodeError::bad_payload);
    Message m;
    m.flags = bytes[4];
    m.inference_id = get_u32(bytes, 5);
    m.layer = bytes[9];
    m.neuron = bytes[10];
    m.seq = get_u16(bytes, 11);
    m.body = std::move(*body);
    return Decoded{std::move(m), DecodeError::none};
  } catch (...) {
    // allocation failure is the only thing that can get here
    return fail(DecodeError::bad_payload);
  }
}

// ---------------------------------------------------------------------------
// weight deployment chunks

struct NeuronParams {
  std::vector<float> weights;
  float bias = 0.0f;
  std::uint8_t activation = 0;  // nn::Activation value
  bool operator==(const NeuronParams&) const = default;
};

// [bias, w0, w1, ...] split into <= 224-byte WEIGHT_CHUNK frames, ascending seq.
inline std::vector<Message> chunk_weight_load(const NeuronParams& p, std::uint8_t layer, std::uint8_t neuron) {
  if (p.weights.size() > 0xFFFF) throw FrameError("fan_in exceeds 65535");
  std::vector<float> all;
  all.reserve(p.weights.size() + 1);
  all.push_back(p.bias);
  all.insert(all.end(), p.weights.begin(), p.weights.end());
  std::vector<Message> out;
  for (std::size_t off = 0, seq = 0; off < all.size(); off += kFloatsPerFrame, ++seq) {
    const std::size_t end = std::min(all.size(), off + kFloatsPerFrame);
    Message m;
    m.flags = p.activation;
    m.inference_id = static_cast<std::uint32_t>(p.weights.size());
    m.layer = layer;
    m.neuron = neuron;
    m.seq = static_cast<std::uint16_t>(seq);
    m.body = WeightChunk{std::vector<float>(all.begin() + static_cast<std::ptrdiff_t>(off),
                                            all.begin() + static_cast<std::ptrdiff_t>(end))};
    out.push_back(std::move(m));
  }
  return out;
}

// INPUT_VECTOR frames for one input, 56 floats each, seq = chunk index.
inline std::vector<Message> chunk_input(std::span<const float> x, std::uint32_t inference_id, std::uint8_t layer = 0,
                                        std::uint8_t neuron = 0) {
  std::vector<Message> out;
  for (std::size_t off = 0, seq = 0; off < x.size(); off += kFloatsPerFrame, ++seq) {
    const auto chunk = x.subspan(off, std::min(kFloatsPerFrame, x.size() - off));
    Message m;
    m.inference_id = inference_id;
    m.layer = layer;
    m.neuron = neuron;
    m.seq = static_cast<std::uint16_t>(seq);
    m.body = InputVector{std::vector<float>(chunk.begin(), chunk.end())};
    out.push_back(std::move(m));
  }
  return out;
}

inline std::size_t chunk_count(std::size_t fan_in) { return (fan_in + 1 + kFloatsPerFrame - 1) / kFloatsPerFrame; }

class IncompleteError : public std::runtime_error {
 public:
  IncompleteError(std::vector<std::uint16_t> missing, const std::string& what)
      : std::runtime_error(what), missing_(std::move(missing)) {}
  const std::vector<std::uint16_t>& missing() const { return missing_; }

 private:
  std::vector<std::uint16_t> missing_;
};

// Accumulates WEIGHT_CHUNK frames in any order; duplicates are ignored.
class WeightAssembler {
 public:
  // Returns false if the chunk conflicts with earlier ones.
  bool add(const Message& m) {
    const auto* chunk = m.as<WeightChunk>();
    if (chunk == nullptr) return false;
    if (!fan_in_) {
      fan_in_ = m.inference_id;
      activation_ = m.flags;
      layer_ = m.layer;
      neuron_ = m.neuron;
    } else if (*fan_in_ != m.inference_id || activation_ != m.flags || layer_ != m.layer || neuron_ != m.neuron) {
      return false;
    }
    if (*fan_in_ > 0xFFFF || m.seq >= chunk_count(*fan_in_)) return false;
    const std::size_t expected = std::min(kFloatsPerFrame, *fan_in_ + 1 - std::size_t{m.seq} * kFloatsPerFrame);
    if (chunk->values.size() != expected) return false;
    auto [it, inserted] = chunks_.emplace(m.seq, chunk->values);
    return inserted || it->second == chunk->values;
  }

  std::vector<std::uint16_t> missing() const {
    std::vector<std::uint16_t> out;
    if (!fan_in_) return out;
    for (std::size_t s = 0; s < chunk_count(*fan_in_); ++s)
      if (!chunks_.contains(static_cast<std::uint16_t>(s))) out.push_back(static_cast<std::uint16_t>(s));
    return out;
  }

  bool complete() const { return fan_in_.has_value() && missing().empty(); }

  NeuronParams assemble() const {
    if (!fan_in_) throw IncompleteError({0}, "no weight chunks received");
    if (auto miss = missing(); !miss.empty()) {
      std::string list;
      for (auto s : miss) list += (list.empty() ? "" : ",") + std::to_string(s);
      throw IncompleteError(miss, "weight load incomplete, missing seq " + list);
    }
    std::vector<float> all;
    for (const auto& [seq, values] : chunks_) all.insert(all.end(), values.begin(), values.end());
    NeuronParams p;
    p.bias = all.front();
    p.weights.assign(all.begin() + 1, all.end());
    p.activation = activation_;
    return p;
  }

 private:
  std::optional<std::size_t> fan_in_;
  std::uint8_t activation_ = 0;
  std::uint8_t layer_ = 0;
  std::uint8_t neuron_ = 0;
  std::map<std::uint16_t, std::vector<float>> chunks_;
};

inline NeuronParams reassemble(std::span<const Message> frames) {
  WeightAssembler a;
  for (const auto& f : frames)
    if (!a.add(f)) throw FrameError("inconsistent weight chunk (seq " + std::to_string(f.seq) + ")");
  return a.assemble();
}

}  // namespace ftmlp::wire
