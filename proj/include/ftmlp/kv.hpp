#pragma once

// Flat key=value text files with '#' comments. Used for experiment configs,
// cluster configs, deployment manifests and dataset metadata.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ftmlp/data.hpp"
#include "ftmlp/error.hpp"

namespace ftmlp {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

class KeyValues {
 public:
  static KeyValues parse(std::istream& in, const std::string& source = "<input>") {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string_view s = line;
      if (auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
      s = trim(s);
      if (s.empty()) continue;
      const auto eq = s.find('=');
      if (eq == std::string_view::npos || eq == 0)
        throw ParseError(source + ":" + std::to_string(lineno) + ": expected key=value");
      kv.set(std::string(trim(s.substr(0, eq))), std::string(trim(s.substr(eq + 1))));
    }
    return kv;
  }

  static KeyValues parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse(in);
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read " + path.string());
    return parse(in, path.string());
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) order_.push_back(key);
    values_[key] = value;
  }

  void merge(const KeyValues& other) {
    for (const auto& k : other.order_) set(k, other.values_.at(k));
  }

  bool has(const std::string& key) const { return values_.contains(key); }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string str(const std::string& key, const std::string& fallback) const { return get(key).value_or(fallback); }

  std::string require(const std::string& key) const {
    auto v = get(key);
    if (!v) throw ConfigError("missing key '" + key + "'");
    return *v;
  }

  double number(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
      return data::parse_double(*v);
    } catch (const ParseError&) {
      throw ConfigError("key '" + key + "': not a number: '" + *v + "'");
    }
  }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    auto res = std::from_chars(v->data(), v->data() + v->size(), out);
    if (res.ec != std::errc{} || res.ptr != v->data() + v->size())
      throw ConfigError("key '" + key + "': not an unsigned integer: '" + *v + "'");
    return out;
  }

  bool boolean(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError("key '" + key + "': not a boolean: '" + *v + "'");
  }

  std::vector<std::string> keys_with_prefix(std::string_view prefix) const {
    std::vector<std::string> out;
    for (const auto& k : order_)
      if (k.starts_with(prefix)) out.push_back(k);
    return out;
  }

  const std::vector<std::string>& keys() const { return order_; }

  std::string dump() const {
    std::string out;
    for (const auto& k : order_) out += k + "=" + values_.at(k) + "\n";
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

inline std::vector<std::uint64_t> parse_uint_list(std::string_view s) {
  std::vector<std::uint64_t> out;
  for (auto field : data::split_fields(s)) {
    field = trim(field);
    std::uint64_t v = 0;
    auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || res.ec != std::errc{} || res.ptr != field.data() + field.size())
      throw ConfigError("not an unsigned integer list: '" + std::string(s) + "'");
    out.push_back(v);
  }
  return out;
}

template <class Seq>
std::string join(const Seq& values, std::string_view sep = ",") {
  std::string out;
  bool first = true;
  for (const auto& v : values) {
    if (!first) out += sep;
    first = false;
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) {
      out += data::format_double(static_cast<double>(v));
    } else {
      out += std::to_string(v);
    }
  }
  return out;
}

}  // namespace ftmlp
