#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bestow {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat dotted-key configuration, e.g. `policy.K=10`. One entry per line,
/// `#` starts a comment. Keys are kept sorted so serialisation is stable.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& origin = "<config>") {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
      }
      const auto key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      kv.values_[key] = trim(line.substr(eq + 1));
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  /// Parses a single `key=value` override.
  void set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + assignment + "'");
    values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  template <class T>
  void set(const std::string& key, T value) {
    if constexpr (std::is_same_v<T, bool>) {
      values_[key] = value ? "true" : "false";
    } else if constexpr (std::is_floating_point_v<T>) {
      char buf[64];
      const auto res = std::to_chars(buf, buf + sizeof buf, value);  // shortest round-trip form
      values_[key] = std::string(buf, res.ptr);
    } else {
      values_[key] = std::to_string(value);
    }
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  std::string require_string(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key " + key);
    return it->second;
  }

  template <class T>
  T get(const std::string& key, T fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return convert<T>(key, it->second);
  }

  std::vector<std::size_t> get_list(const std::string& key, std::vector<std::size_t> fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return parse_size_list(key, it->second);
  }

  /// Overlays `other` on top of this (other wins).
  void merge(const KeyValues& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
    return os.str();
  }

  const std::map<std::string, std::string>& entries() const { return values_; }
  bool operator==(const KeyValues&) const = default;

  /// Accepts "3,4,5" and inclusive ranges "3..12" (and mixes of both).
  static std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      if (auto dots = item.find(".."); dots != std::string::npos) {
        const auto lo = convert<std::size_t>(key, item.substr(0, dots));
        const auto hi = convert<std::size_t>(key, item.substr(dots + 2));
        if (hi < lo) throw ConfigError(key + ": empty range " + item);
        for (auto v = lo; v <= hi; ++v) out.push_back(v);
      } else {
        out.push_back(convert<std::size_t>(key, item));
      }
    }
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  template <class T>
  static T convert(const std::string& key, const std::string& text) {
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError(key + ": expected boolean, got '" + text + "'");
    } else if constexpr (std::is_floating_point_v<T>) {
      try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return static_cast<T>(v);
      } catch (const std::exception&) {
        throw ConfigError(key + ": expected number, got '" + text + "'");
      }
    } else {
      T v{};
      const auto* first = text.data();
      const auto* last = text.data() + text.size();
      auto [p, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || p != last) throw ConfigError(key + ": expected integer, got '" + text + "'");
      return v;
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace bestow
