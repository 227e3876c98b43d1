#include "densebody/core/hash.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <vector>

#include "densebody/core/errors.hpp"

namespace densebody::core {

namespace fs = std::filesystem;

uint64_t hash_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read file for hashing: " + path);
  uint64_t h = kFnvOffset;
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof buf);
    h = fnv1a(buf, size_t(f.gcount()), h);
  }
  return h;
}

uint64_t hash_dir(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
  std::vector<std::string> rels;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file())
      rels.push_back(fs::relative(e.path(), dir).generic_string());
  std::sort(rels.begin(), rels.end());
  uint64_t h = kFnvOffset;
  for (const auto& r : rels) {
    h = fnv1a(r, h);
    h = fnv1a("\0", 1, h);
    std::ifstream f(fs::path(dir) / r, std::ios::binary);
    if (!f) throw IoError("cannot read file for hashing: " + r);
    char buf[1 << 16];
    while (f) {
      f.read(buf, sizeof buf);
      h = fnv1a(buf, size_t(f.gcount()), h);
    }
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[size_t(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

}  // namespace densebody::core
