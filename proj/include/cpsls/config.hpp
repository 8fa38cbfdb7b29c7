#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cpsls::config {

/// Plain-text key-value configuration: one `key = value` pair per line,
/// `#` starts a comment, blank lines are skipped, later keys override
/// earlier ones. Values may be scalars, strings, or comma-separated lists.
struct Config {
  std::map<std::string, std::string> values;

  [[nodiscard]] bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  /// Typed getters. The one-argument forms throw std::out_of_range when the
  /// key is absent; the two-argument forms return the fallback instead.
  /// All forms throw std::invalid_argument when the value does not parse.
  [[nodiscard]] std::string get_string(const std::string& key) const;
  [[nodiscard]] std::string get_string(const std::string& key,
                                       const std::string& fallback) const;
  [[nodiscard]] double get_double(const std::string& key) const;
  [[nodiscard]] double get_double(const std::string& key, double fallback) const;
  [[nodiscard]] int get_int(const std::string& key) const;
  [[nodiscard]] int get_int(const std::string& key, int fallback) const;
  [[nodiscard]] std::uint64_t get_u64(const std::string& key) const;
  [[nodiscard]] std::uint64_t get_u64(const std::string& key,
                                      std::uint64_t fallback) const;
  [[nodiscard]] bool get_bool(const std::string& key) const;
  [[nodiscard]] bool get_bool(const std::string& key, bool fallback) const;
  [[nodiscard]] std::vector<double> get_doubles(const std::string& key) const;
};

/// Parses configuration text. Throws std::invalid_argument on a malformed
/// line (anything that is neither blank, comment, nor `key = value`).
[[nodiscard]] Config parse_string(const std::string& text);

/// Reads and parses a configuration file. Throws std::runtime_error when the
/// file cannot be opened.
[[nodiscard]] Config parse_file(const std::string& path);

}  // namespace cpsls::config
