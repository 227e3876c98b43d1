#pragma once

#include <cstdint>
#include <string>

namespace densebody::core {

// FNV-1a 64-bit. Stable across platforms; used to fingerprint datasets,
// checkpoints and reports in determinism checks.
inline constexpr uint64_t kFnvOffset = 14695981039346656037ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = kFnvOffset) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = kFnvOffset) {
  return fnv1a(s.data(), s.size(), h);
}

// Hash of a file's raw bytes. Throws IoError if unreadable.
uint64_t hash_file(const std::string& path);

// Combined hash over every regular file under `dir`, visited in sorted
// relative-path order; each file contributes its path then its bytes.
uint64_t hash_dir(const std::string& dir);

std::string hash_hex(uint64_t h);

}  // namespace densebody::core
