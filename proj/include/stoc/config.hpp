#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace stoc {

// Flat key-value store with dotted-path keys. Config files are plain text,
// one `key = value` per line, `#` starts a comment. Section headers of the
// form `[section]` prefix subsequent keys with `section.`. CLI overrides are
// applied last and win.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  void set(const std::string& key, const std::string& value);
  // Parses "key=value"; throws ConfigurationError on malformed input.
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Comma-separated list of doubles.
  std::vector<double> get_double_list(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  std::string to_string() const;

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace stoc
