#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace recon {

// Plain-text `key = value` configuration ('#' starts a comment, blank lines
// ignored). Keys are kept sorted so serialization is deterministic.
class KeyValues {
 public:
  static KeyValues parse_string(const std::string& text);
  static KeyValues parse_file(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& all() const { return values_; }

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  long long get_int(const std::string& key) const;
  std::uint64_t get_uint64(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set_double(const std::string& key, double value);
  void set_int(const std::string& key, long long value);
  void set_uint64(const std::string& key, std::uint64_t value);
  void set_bool(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }

  std::string serialize() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace recon
