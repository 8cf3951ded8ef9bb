#pragma once

/**
 * Plain-text run configuration: `key = value` entries grouped under
 * `[section]` headers, `#` or `;` comments. Flat, diffable, no schema
 * tooling. Unknown keys are rejected with the offending line number, and
 * every run can serialize the exact values it resolved (defaults included)
 * next to its outputs.
 */

#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>

#include "spg/types.hpp"

namespace spg {

struct ConfigError : Error {
  using Error::Error;
};

class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in, const std::string& source_name) {
    Config cfg;
    cfg.source_ = source_name;
    std::string line, section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string body = strip(line.substr(0, line.find_first_of("#;")));
      if (body.empty()) continue;
      if (body.front() == '[') {
        if (body.back() != ']')
          throw ConfigError(source_name + ":" + std::to_string(line_no) +
                            ": malformed section header '" + body + "'");
        section = strip(body.substr(1, body.size() - 2));
        if (section.empty())
          throw ConfigError(source_name + ":" + std::to_string(line_no) + ": empty section name");
        continue;
      }
      size_t eq = body.find('=');
      if (eq == std::string::npos)
        throw ConfigError(source_name + ":" + std::to_string(line_no) +
                          ": expected 'key = value', got '" + body + "'");
      std::string key = strip(body.substr(0, eq));
      std::string value = strip(body.substr(eq + 1));
      if (key.empty())
        throw ConfigError(source_name + ":" + std::to_string(line_no) + ": empty key");
      std::string full = section.empty() ? key : section + "." + key;
      cfg.entries_[full] = {value, line_no};
    }
    return cfg;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse(in, path);
  }

  /// Command-line overrides land on top of the file contents.
  void set(const std::string& key, const std::string& value) { entries_[key] = {value, 0}; }

  bool contains(const std::string& key) const { return entries_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    auto it = entries_.find(key);
    std::string value = it == entries_.end() ? fallback : it->second.value;
    if (it != entries_.end()) consumed_[key] = true;
    resolved_[key] = value;
    return value;
  }

  double get_number(const std::string& key, double fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      resolved_[key] = format_number(fallback);
      return fallback;
    }
    consumed_[key] = true;
    try {
      size_t used = 0;
      double value = std::stod(it->second.value, &used);
      if (used != it->second.value.size()) throw std::invalid_argument("trailing characters");
      resolved_[key] = it->second.value;
      return value;
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": expected a number for '" + key + "', got '" +
                        it->second.value + "'");
    }
  }

  long get_integer(const std::string& key, long fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      resolved_[key] = std::to_string(fallback);
      return fallback;
    }
    consumed_[key] = true;
    try {
      size_t used = 0;
      long value = std::stol(it->second.value, &used);
      if (used != it->second.value.size()) throw std::invalid_argument("trailing characters");
      resolved_[key] = it->second.value;
      return value;
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": expected an integer for '" + key + "', got '" +
                        it->second.value + "'");
    }
  }

  uint64_t get_u64(const std::string& key, uint64_t fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      resolved_[key] = std::to_string(fallback);
      return fallback;
    }
    consumed_[key] = true;
    try {
      size_t used = 0;
      uint64_t value = std::stoull(it->second.value, &used);
      if (used != it->second.value.size()) throw std::invalid_argument("trailing characters");
      resolved_[key] = it->second.value;
      return value;
    } catch (const std::exception&) {
      throw ConfigError(where(key) + ": expected an unsigned integer for '" + key + "', got '" +
                        it->second.value + "'");
    }
  }

  /// Every key present in the sources must have been consumed by a getter.
  void reject_unknown_keys() const {
    for (const auto& [key, entry] : entries_)
      if (!consumed_.count(key))
        throw ConfigError(where(key) + ": unknown key '" + key + "'");
  }

  /// Resolved values (defaults included) in canonical sorted sections.
  std::string resolved_text() const {
    std::ostringstream out;
    std::string section;
    bool first = true;
    for (const auto& [key, value] : resolved_) {
      size_t dot = key.find('.');
      std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
      std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
      if (sec != section || first) {
        if (!first) out << "\n";
        if (!sec.empty()) out << "[" << sec << "]\n";
        section = sec;
        first = false;
      }
      out << name << " = " << value << "\n";
    }
    return out.str();
  }

 private:
  struct Entry {
    std::string value;
    int line;
  };

  static std::string strip(const std::string& s) {
    size_t begin = 0, end = s.size();
    while (begin < end && std::isspace(static_cast<unsigned char>(s[begin]))) ++begin;
    while (end > begin && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
    return s.substr(begin, end - begin);
  }

  static std::string format_number(double value) {
    std::ostringstream out;
    out << value;
    return out.str();
  }

  std::string where(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end() || it->second.line == 0) return source_.empty() ? "<args>" : source_;
    return source_ + ":" + std::to_string(it->second.line);
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
  std::map<std::string, bool> consumed_;
  std::map<std::string, std::string> resolved_;
};

}  // namespace spg
