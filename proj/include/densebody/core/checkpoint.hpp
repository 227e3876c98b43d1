#pragma once

#include <string>

#include <json.hpp>

#include "densebody/core/params.hpp"

namespace densebody::core {

using Json = nlohmann::ordered_json;

// Checkpoint container: "DBCK" magic, u32 format version, u64 manifest
// length, manifest JSON, then all parameter blobs as little-endian float64 in
// manifest order. The manifest lists every parameter (name, shape, offset,
// count, trainable) plus a free-form "meta" object.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const ParamStore& ps, const Json& meta);

// Replaces the contents of `ps`. Returns the meta object.
Json load_checkpoint(const std::string& path, ParamStore& ps);

// Reads only the meta object (no parameter payload).
Json load_checkpoint_meta(const std::string& path);

}  // namespace densebody::core
