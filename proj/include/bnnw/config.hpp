#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace bnnw {

inline constexpr int kConfigSchemaVersion = 1;

/// Flat `key = value` document. `#` starts a comment; keys are unique; `schema_version` is required.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::string> get_strings(const std::string& key) const;

  /// Keys sharing a prefix, e.g. "functional." -> {"functional.ate", ...}.
  std::vector<std::string> keys_with_prefix(const std::string& prefix) const;
  std::vector<std::string> keys() const;
  /// Sorted `key=value` lines; stable under comment and whitespace edits.
  std::string canonical() const;

 private:
  const std::string& raw(const std::string& key) const;

  std::map<std::string, std::string> values_;
};

std::vector<std::string> split_list(const std::string& value);

}  // namespace bnnw
