#include "recon/config_file.hpp"

#include <fstream>
#include <sstream>

#include "recon/csv.hpp"
#include "recon/types.hpp"

namespace recon {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

KeyValues KeyValues::parse_string(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + " has no '=': " + trimmed);
    const std::string key = trim(trimmed.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + " has empty key");
    kv.values_[key] = trim(trimmed.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_string(buf.str());
}

std::string KeyValues::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key: " + key);
  return it->second;
}

double KeyValues::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw ConfigError("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a number: " + v);
  }
}

long long KeyValues::get_int(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used != v.size()) throw ConfigError("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an integer: " + v);
  }
}

std::uint64_t KeyValues::get_uint64(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    std::size_t used = 0;
    const std::uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw ConfigError("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an unsigned integer: " + v);
  }
}

bool KeyValues::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: " + v);
}

void KeyValues::set_double(const std::string& key, double value) {
  values_[key] = csv::format_double(value);
}

void KeyValues::set_int(const std::string& key, long long value) {
  values_[key] = std::to_string(value);
}

void KeyValues::set_uint64(const std::string& key, std::uint64_t value) {
  values_[key] = std::to_string(value);
}

std::string KeyValues::serialize() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_) out << key << " = " << value << "\n";
  return out.str();
}

}  // namespace recon
