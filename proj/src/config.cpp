#include "cprobe/config.hpp"

#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cprobe {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void bad(const std::string& msg) {
  throw std::invalid_argument("config: " + msg);
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad("cannot open file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str());
}

Config Config::from_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      bad("line " + std::to_string(lineno) + " is not key=value: '" + t + "'");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) bad("line " + std::to_string(lineno) + " has empty key");
    if (cfg.entries_.count(key)) bad("duplicate key '" + key + "'");
    cfg.entries_[key] = value;
  }
  return cfg;
}

bool Config::has(const std::string& key) const { return entries_.count(key) > 0; }

void Config::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

void Config::erase(const std::string& key) { entries_.erase(key); }

std::string Config::get_str(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) bad("missing required key '" + key + "'");
  return it->second;
}

long Config::get_int(const std::string& key) const {
  std::string v = get_str(key);
  errno = 0;
  char* end = nullptr;
  long out = std::strtol(v.c_str(), &end, 10);
  if (errno != 0 || end == v.c_str() || *end != '\0') {
    bad("key '" + key + "' is not an integer: '" + v + "'");
  }
  return out;
}

double Config::get_double(const std::string& key) const {
  std::string v = get_str(key);
  errno = 0;
  char* end = nullptr;
  double out = std::strtod(v.c_str(), &end);
  if (errno != 0 || end == v.c_str() || *end != '\0') {
    bad("key '" + key + "' is not a number: '" + v + "'");
  }
  return out;
}

bool Config::get_bool(const std::string& key) const {
  std::string v = get_str(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad("key '" + key + "' is not a boolean: '" + v + "'");
}

std::uint64_t Config::get_u64(const std::string& key) const {
  std::string v = get_str(key);
  errno = 0;
  char* end = nullptr;
  unsigned long long out = std::strtoull(v.c_str(), &end, 10);
  if (errno != 0 || end == v.c_str() || *end != '\0' || v.find('-') != std::string::npos) {
    bad("key '" + key + "' is not an unsigned integer: '" + v + "'");
  }
  return static_cast<std::uint64_t>(out);
}

std::string Config::get_str(const std::string& key, const std::string& dflt) const {
  return has(key) ? get_str(key) : dflt;
}
long Config::get_int(const std::string& key, long dflt) const {
  return has(key) ? get_int(key) : dflt;
}
double Config::get_double(const std::string& key, double dflt) const {
  return has(key) ? get_double(key) : dflt;
}
bool Config::get_bool(const std::string& key, bool dflt) const {
  return has(key) ? get_bool(key) : dflt;
}
std::uint64_t Config::get_u64(const std::string& key, std::uint64_t dflt) const {
  return has(key) ? get_u64(key) : dflt;
}

std::uint64_t Config::hash() const {
  // FNV-1a over the canonical "key=value\n" rendering in sorted key order.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& [k, v] : entries_) {
    mix(k);
    mix("=");
    mix(v);
    mix("\n");
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::uint64_t parse_hash_hex(const std::string& s) {
  if (s.size() != 16) throw std::invalid_argument("config: bad hash string '" + s + "'");
  errno = 0;
  char* end = nullptr;
  unsigned long long out = std::strtoull(s.c_str(), &end, 16);
  if (errno != 0 || end != s.c_str() + 16) {
    throw std::invalid_argument("config: bad hash string '" + s + "'");
  }
  return static_cast<std::uint64_t>(out);
}

}  // namespace cprobe
