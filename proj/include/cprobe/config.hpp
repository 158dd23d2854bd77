#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace cprobe {

// Flat, line-oriented key=value configuration. Lines that are blank or
// start with '#' are ignored; duplicate keys are configuration errors.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);
  void erase(const std::string& key);

  // Throwing getters (std::invalid_argument on missing key or bad value).
  std::string get_str(const std::string& key) const;
  long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;  // true/false/1/0
  std::uint64_t get_u64(const std::string& key) const;

  // Defaulted getters.
  std::string get_str(const std::string& key, const std::string& dflt) const;
  long get_int(const std::string& key, long dflt) const;
  double get_double(const std::string& key, double dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const;

  // Order-independent content hash, recorded in every artifact.
  std::uint64_t hash() const;

  const std::map<std::string, std::string>& entries() const {
    return entries_;
  }

 private:
  std::map<std::string, std::string> entries_;
};

// Render a hash the way artifacts store it (16 hex digits).
std::string hash_hex(std::uint64_t h);
std::uint64_t parse_hash_hex(const std::string& s);

}  // namespace cprobe
