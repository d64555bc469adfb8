#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace opental {

/// Flat TOML-style key/value configuration. Supports `key = value` lines,
/// `[section]` headers (keys become `section.key`), `#` comments, quoted
/// strings, numbers and booleans. Arrays and inline tables are not supported.
class KvConfig {
 public:
  static KvConfig parse(const std::string& text);
  /// Throws InputError when the file is missing or malformed.
  static KvConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  void set(const std::string& key, const std::string& raw) { values_[key] = raw; }
  void set_string(const std::string& key, const std::string& v) { values_[key] = "\"" + v + "\""; }
  void set_double(const std::string& key, double v);
  void set_int(const std::string& key, long long v) { values_[key] = std::to_string(v); }
  void set_bool(const std::string& key, bool v) { values_[key] = v ? "true" : "false"; }

  /// Sorted `key = value` lines, grouped under section headers.
  std::string dump() const;
  void save(const std::filesystem::path& path) const;

  const std::map<std::string, std::string>& raw() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace opental
