#pragma once

#include <stdexcept>
#include <string>

namespace densebody {

// Error taxonomy shared across the library. The CLI maps ConfigError to
// exit code 2 and CompatError to exit code 3; everything else is 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct CompatError : std::runtime_error {
  explicit CompatError(const std::string& m) : std::runtime_error(m) {}
};

struct LayoutError : std::runtime_error {
  explicit LayoutError(const std::string& m) : std::runtime_error(m) {}
};

struct DegenerateRotationError : std::runtime_error {
  explicit DegenerateRotationError(const std::string& m) : std::runtime_error(m) {}
};

struct StatsError : std::runtime_error {
  explicit StatsError(const std::string& m) : std::runtime_error(m) {}
};

struct SpecError : std::runtime_error {
  explicit SpecError(const std::string& m) : std::runtime_error(m) {}
};

struct EpisodeError : std::runtime_error {
  explicit EpisodeError(const std::string& m) : std::runtime_error(m) {}
};

struct RangeError : std::runtime_error {
  explicit RangeError(const std::string& m) : std::runtime_error(m) {}
};

struct InputError : std::runtime_error {
  explicit InputError(const std::string& m) : std::runtime_error(m) {}
};

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& m) : std::runtime_error(m) {}
};

struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& m) : std::runtime_error(m) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace densebody
