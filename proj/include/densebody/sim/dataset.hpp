#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "densebody/sim/world.hpp"

namespace densebody::sim {

using Json = nlohmann::ordered_json;

// One timestep of a demonstration: the observation the policy would see and
// the absolute-pose action the expert took from it.
struct StepRecord {
  std::array<Image, 4> images;
  std::vector<std::array<float, 3>> cloud;
  morph::RobotState state;
  morph::ActionVector action;
};

struct Episode {
  std::vector<StepRecord> steps;
};

// Binary episode container. Written atomically (tmp + rename); IoError on
// filesystem problems, InputError on malformed content.
void write_episode(const std::string& path, const Episode& e);
Episode read_episode(const std::string& path);

// Rolls expert demonstrations until `n` successes, writing ep_NNNN.dsb files
// plus meta.json (task knobs, layout, per-dimension normalization stats,
// episode table) into `out_dir`. Failed attempts are resampled; if the expert
// keeps failing (success rate under one half after 20 attempts) the run
// aborts with EpisodeError. Returns the metadata document.
Json generate_demos(const TaskSpec& spec, int n, uint64_t seed,
                    const std::string& out_dir);

Json read_meta(const std::string& dir);  // IoError / InputError

}  // namespace densebody::sim
