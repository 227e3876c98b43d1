#include "densebody/core/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "densebody/core/errors.hpp"

namespace densebody::core {

namespace {
std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

Config Config::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str());
}

Config Config::parse_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      cfg.sections_[section];
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    cfg.sections_[section][key] = value;
  }
  return cfg;
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) != 0;
}

std::string Config::str(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  if (it == sections_.end() || !it->second.count(key))
    throw ConfigError("missing config key [" + section + "] " + key);
  return it->second.at(key);
}

std::string Config::str_or(const std::string& section, const std::string& key,
                           const std::string& fallback) const {
  return has(section, key) ? str(section, key) : fallback;
}

double Config::num(const std::string& section, const std::string& key) const {
  const std::string s = str(section, key);
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key [" + section + "] " + key + " is not a number: " + s);
  }
}

double Config::num_or(const std::string& section, const std::string& key,
                      double fallback) const {
  return has(section, key) ? num(section, key) : fallback;
}

int64_t Config::integer(const std::string& section, const std::string& key) const {
  const std::string s = str(section, key);
  try {
    size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key [" + section + "] " + key + " is not an integer: " + s);
  }
}

int64_t Config::integer_or(const std::string& section, const std::string& key,
                           int64_t fallback) const {
  return has(section, key) ? integer(section, key) : fallback;
}

bool Config::boolean_or(const std::string& section, const std::string& key,
                        bool fallback) const {
  if (!has(section, key)) return fallback;
  const std::string s = str(section, key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config key [" + section + "] " + key + " is not a boolean: " + s);
}

void Config::set(const std::string& section, const std::string& key,
                 const std::string& value) {
  sections_[section][key] = value;
}

void Config::set_num(const std::string& section, const std::string& key,
                     double value) {
  char buf[64];
  if (value == std::floor(value) && std::abs(value) < 1e15)
    std::snprintf(buf, sizeof buf, "%.1f", value);
  else
    std::snprintf(buf, sizeof buf, "%.17g", value);
  set(section, key, buf);
}

void Config::set_int(const std::string& section, const std::string& key,
                     int64_t value) {
  set(section, key, std::to_string(value));
}

std::string Config::serialize() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& [sec, kv] : sections_) {
    if (!first) out << "\n";
    first = false;
    out << "[" << sec << "]\n";
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  }
  return out.str();
}

void Config::write_file(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write config file: " + path);
  f << serialize();
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace densebody::core
