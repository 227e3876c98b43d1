#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace densebody::core {

// Sectioned key=value config. '#' and ';' start comments; whitespace around
// keys and values is trimmed. Serialization is deterministic (sorted sections
// and keys) so configs round-trip and hash stably.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;

  std::string str(const std::string& section, const std::string& key) const;
  std::string str_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  double num(const std::string& section, const std::string& key) const;
  double num_or(const std::string& section, const std::string& key,
                double fallback) const;
  int64_t integer(const std::string& section, const std::string& key) const;
  int64_t integer_or(const std::string& section, const std::string& key,
                     int64_t fallback) const;
  bool boolean_or(const std::string& section, const std::string& key,
                  bool fallback) const;

  void set(const std::string& section, const std::string& key,
           const std::string& value);
  void set_num(const std::string& section, const std::string& key, double value);
  void set_int(const std::string& section, const std::string& key, int64_t value);

  std::string serialize() const;
  void write_file(const std::string& path) const;

  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace densebody::core
