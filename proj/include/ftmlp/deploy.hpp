#pragma once

// Deployment bundle: one binary blob per non-input neuron plus a text
// manifest. Blob layout (little-endian):
//
//   'N' 'C' | version u8 | activation u8 | fan_in u16 | bias f32 | weights f32 x fan_in | crc32 u32
//
// The CRC covers every preceding byte of the blob. Weights are quantized to
// float at write time. Trained double parameters are persisted separately as
// text (params.txt) with exact round-trip formatting.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ftmlp/data.hpp"
#include "ftmlp/error.hpp"
#include "ftmlp/kv.hpp"
#include "ftmlp/nn.hpp"
#include "ftmlp/wire.hpp"

namespace ftmlp::deploy {

using nn::NetworkSpec;
using nn::NeuronId;
using nn::Parameters;
using wire::NeuronParams;

class CorruptBundle : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sequential id over non-input neurons: (1,0) is 0, then layer by layer.
inline std::size_t node_index(const NetworkSpec& spec, NeuronId id) {
  if (id.layer < 1 || id.layer > spec.depth() || id.neuron >= spec.size(id.layer))
    throw ContractError("unknown node " + nn::to_string(id));
  std::size_t idx = 0;
  for (std::size_t l = 1; l < id.layer; ++l) idx += spec.size(l);
  return idx + id.neuron;
}

inline NeuronId node_from_index(const NetworkSpec& spec, std::size_t idx) {
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    if (idx < spec.size(l)) return {l, idx};
    idx -= spec.size(l);
  }
  throw ContractError("node index out of range");
}

inline std::size_t node_count(const NetworkSpec& spec) {
  std::size_t n = 0;
  for (std::size_t l = 1; l <= spec.depth(); ++l) n += spec.size(l);
  return n;
}

inline NeuronId parse_node_id(std::string_view s) {
  const auto colon = s.find_first_of(":.");
  if (colon == std::string_view::npos) throw ConfigError("node id must look like LAYER:NEURON, got '" + std::string(s) + "'");
  const auto l = parse_uint_list(s.substr(0, colon));
  const auto k = parse_uint_list(s.substr(colon + 1));
  return {static_cast<std::size_t>(l.at(0)), static_cast<std::size_t>(k.at(0))};
}

inline std::vector<std::uint8_t> encode_blob(const NeuronParams& p) {
  if (p.weights.size() > 0xFFFF) throw ContractError("fan_in exceeds 65535");
  std::vector<std::uint8_t> out{wire::kMagic0, wire::kMagic1, wire::kVersion, p.activation};
  wire::put_u16(out, static_cast<std::uint16_t>(p.weights.size()));
  wire::put_f32(out, p.bias);
  for (float w : p.weights) wire::put_f32(out, w);
  wire::put_u32(out, wire::crc32(out));
  return out;
}

inline NeuronParams decode_blob(std::span<const std::uint8_t> b) {
  if (b.size() < 14) throw CorruptBundle("blob too short");
  const std::size_t body = b.size() - 4;
  if (wire::crc32(b.first(body)) != wire::get_u32(b, body)) throw CorruptBundle("blob crc mismatch");
  if (b[0] != wire::kMagic0 || b[1] != wire::kMagic1 || b[2] != wire::kVersion) throw CorruptBundle("bad blob magic");
  NeuronParams p;
  p.activation = b[3];
  const std::size_t fan_in = wire::get_u16(b, 4);
  if (b.size() != 14 + 4 * fan_in) throw CorruptBundle("blob length does not match fan_in");
  p.bias = wire::get_f32(b, 6);
  p.weights.resize(fan_in);
  for (std::size_t i = 0; i < fan_in; ++i) p.weights[i] = wire::get_f32(b, 10 + 4 * i);
  return p;
}

inline NeuronParams neuron_params(const NetworkSpec& spec, const Parameters<float>& params, NeuronId id) {
  const auto& layer = params.layer(id.layer);
  NeuronParams p;
  const auto row = layer.row(id.neuron);
  p.weights.assign(row.begin(), row.end());
  p.bias = layer.bias[id.neuron];
  p.activation = static_cast<std::uint8_t>(spec.activation(id.layer));
  return p;
}

inline std::string blob_name(NeuronId id) {
  return "node_" + std::to_string(id.layer) + "_" + std::to_string(id.neuron) + ".bin";
}

inline std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

inline void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string spec_lines(const NetworkSpec& spec) {
  return "layers=" + join(spec.layer_sizes) + "\nhidden_activation=" + std::string(nn::to_string(spec.hidden)) +
         "\noutput_activation=" + std::string(nn::to_string(spec.output)) + "\n";
}

inline NetworkSpec spec_from(const KeyValues& kv) {
  NetworkSpec spec;
  for (auto n : parse_uint_list(kv.require("layers"))) spec.layer_sizes.push_back(static_cast<std::size_t>(n));
  spec.hidden = nn::activation_from_string(kv.str("hidden_activation", "relu"));
  spec.output = nn::activation_from_string(kv.str("output_activation", "linear"));
  spec.validate();
  return spec;
}

// Writes node_L_N.bin for every non-input neuron plus manifest.txt.
template <class T>
void write_bundle(const std::filesystem::path& dir, const NetworkSpec& spec, const Parameters<T>& params) {
  if (!params.matches(spec)) throw ContractError("parameters do not match network spec");
  if (!params.all_finite()) throw ContractError("parameters contain non-finite values");
  std::filesystem::create_directories(dir);
  const auto quantized = params.template cast<float>();
  std::ostringstream manifest;
  manifest << "format=1\n" << spec_lines(spec);
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    for (std::size_t k = 0; k < spec.size(l); ++k) {
      const NeuronId id{l, k};
      const auto blob = encode_blob(neuron_params(spec, quantized, id));
      write_bytes(dir / blob_name(id), blob);
      manifest << "node." << node_index(spec, id) << "=" << l << ":" << k << " " << blob_name(id) << " "
               << hex32(wire::crc32(std::span(blob).first(blob.size() - 4))) << "\n";
    }
  }
  std::ofstream out(dir / "manifest.txt");
  out << manifest.str();
}

inline NetworkSpec read_manifest_spec(const std::filesystem::path& dir) { return spec_from(KeyValues::load(dir / "manifest.txt")); }

// Validates the blob against both its own CRC and the manifest entry.
inline NeuronParams read_neuron(const std::filesystem::path& dir, NeuronId id) {
  const auto kv = KeyValues::load(dir / "manifest.txt");
  const auto spec = spec_from(kv);
  if (id.layer < 1 || id.layer > spec.depth() || id.neuron >= spec.size(id.layer))
    throw ConfigError("unknown node id " + nn::to_string(id));
  const auto entry = kv.get("node." + std::to_string(node_index(spec, id)));
  if (!entry) throw ConfigError("manifest has no entry for node " + nn::to_string(id));
  std::istringstream fields(*entry);
  std::string where, file, crc;
  fields >> where >> file >> crc;
  if (where != std::to_string(id.layer) + ":" + std::to_string(id.neuron))
    throw CorruptBundle("manifest entry for node " + nn::to_string(id) + " names " + where);
  const auto bytes = read_bytes(dir / file);
  auto p = decode_blob(bytes);
  if (hex32(wire::crc32(std::span(bytes).first(bytes.size() - 4))) != crc)
    throw CorruptBundle("blob " + file + " does not match manifest crc");
  if (p.weights.size() != spec.size(id.layer - 1)) throw CorruptBundle("blob " + file + " has wrong fan_in");
  return p;
}

inline Parameters<float> read_bundle(const std::filesystem::path& dir, NetworkSpec* spec_out = nullptr) {
  const auto spec = read_manifest_spec(dir);
  auto params = Parameters<float>::zeros(spec);
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    auto& layer = params.layer(l);
    for (std::size_t k = 0; k < spec.size(l); ++k) {
      const auto p = read_neuron(dir, {l, k});
      std::copy(p.weights.begin(), p.weights.end(), layer.weights.begin() + static_cast<std::ptrdiff_t>(k * layer.fan_in));
      layer.bias[k] = p.bias;
    }
  }
  if (spec_out != nullptr) *spec_out = spec;
  return params;
}

// --- params.txt: exact text form of double parameters ----------------------

template <class T>
void write_params(std::ostream& out, const NetworkSpec& spec, const Parameters<T>& params) {
  out << spec_lines(spec);
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    out << "W." << l << "=" << join(params.layer(l).weights) << "\n";
    out << "b." << l << "=" << join(params.layer(l).bias) << "\n";
  }
}

inline void write_params(const std::filesystem::path& path, const NetworkSpec& spec, const Parameters<double>& params) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  write_params(out, spec, params);
}

inline Parameters<double> read_params(const std::filesystem::path& path, NetworkSpec& spec) {
  const auto kv = KeyValues::load(path);
  spec = spec_from(kv);
  auto params = Parameters<double>::zeros(spec);
  auto fill = [&](const std::string& key, std::vector<double>& dst) {
    const auto text = kv.require(key);
    const auto fields = data::split_fields(text);
    if (fields.size() != dst.size()) throw ParseError(path.string() + ": " + key + " has the wrong length");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = data::parse_double(trim(fields[i]));
  };
  for (std::size_t l = 1; l <= spec.depth(); ++l) {
    fill("W." + std::to_string(l), params.layer(l).weights);
    fill("b." + std::to_string(l), params.layer(l).bias);
  }
  return params;
}

}  // namespace ftmlp::deploy
