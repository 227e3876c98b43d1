#pragma once

#include <array>
#include <string>

#include "densebody/core/config.hpp"
#include "densebody/core/graph.hpp"
#include "densebody/core/params.hpp"
#include "densebody/core/rng.hpp"
#include "densebody/enc/encoders.hpp"
#include "densebody/fuse/qfusion.hpp"
#include "densebody/head/densehead.hpp"
#include "densebody/head/diffhead.hpp"
#include "densebody/sim/world.hpp"

namespace densebody::pipe {

using core::Config;
using core::Graph;
using core::ParamStore;
using core::Rng;
using core::Scalar;
using core::Tensor;

// Whole-policy architecture knobs, serializable as the [model] config
// section. Defaults are sized for CPU training at desk scale.
struct ModelConfig {
  int dim = 48;  // shared token width

  Scalar voxel_size = 0.05;
  int sparse_c0 = 12;
  int sparse_c1 = 24;
  int voxel_tokens = 144;

  int patch = 8;
  int patch_layers = 2;
  int patch_hidden = 96;
  int patch_heads = 4;
  int lora_rank = 8;

  int state_hidden = 96;
  Scalar state_mask_prob = 0.30;

  int fusion_heads = 4;

  std::string head = "dense";         // dense | diffusion
  std::string encoder_mode = "lora";  // frozen | lora | full
  int horizon = 16;
  int exec_steps = 8;
  int decoder_layers = 2;
  int decoder_heads = 4;
  int decoder_hidden = 96;
  int diffusion_steps = 50;
  Scalar loss_beta = 1.0;

  enc::SparseEncSpec sparse_spec() const;
  enc::PatchEncSpec patch_spec() const;
  enc::StateEncSpec state_spec() const;
  fuse::FusionSpec fusion_spec() const;
  head::DenseHeadSpec dense_spec() const;
  head::DiffHeadSpec diff_spec() const;

  // ConfigError on unknown head/mode names or non-positive sizes.
  void validate() const;

  static ModelConfig from_config(const Config& c);  // [model] section
  void to_config(Config& c) const;
};

// Parameter prefixes of the policy's building blocks.
inline constexpr const char* kSparsePrefix = "enc3d";
inline constexpr const char* kPatchPrefix = "enc2d";
inline constexpr const char* kStatePrefix = "encst";
inline constexpr const char* kFusionPrefix = "fusion";
const char* head_prefix(const ModelConfig& mc);  // "dense" or "diff"

// Creates every parameter group for the configured head and applies the
// encoder fine-tuning mode (adapters always exist, so modes can change
// between runs on one checkpoint).
void init_policy(ParamStore& ps, const ModelConfig& mc, Rng& rng);
void apply_mode(ParamStore& ps, const ModelConfig& mc);

// State vector normalized with the action statistics of its source dims
// (state dim i maps to action dim i+3); quaternion dims pass through.
morph::RobotState normalize_state(const morph::RobotState& s,
                                  const morph::NormStats& stats);

struct PolicyFeatures {
  fuse::FusedFeatureSet fv;
  int fs = -1;
};

// Full observation encoding: sparse 3D tokens + four patched views fused by
// the positional queries, plus the masked state feature. `rng` is consumed
// only when training (state masking draws).
PolicyFeatures policy_features(Graph& g, ParamStore& ps,
                               const std::array<sim::Image, enc::kNumViews>& images,
                               const enc::Voxels& vox,
                               const morph::RobotState& state,
                               const morph::NormStats& stats, bool training,
                               Rng& rng, const ModelConfig& mc);
PolicyFeatures policy_features(Graph& g, ParamStore& ps,
                               const sim::Observation& obs,
                               const morph::NormStats& stats, bool training,
                               Rng& rng, const ModelConfig& mc);

// Plans a normalized action sequence with the configured head. The seed
// drives diffusion sampling; the dense head ignores it.
head::ActionSequence policy_plan(Graph& g, ParamStore& ps,
                                 const PolicyFeatures& f, uint64_t seed,
                                 const ModelConfig& mc);

// Scalar training-loss node for one sample against the normalized truth
// sequence [horizon, 25].
int policy_loss(Graph& g, ParamStore& ps, const PolicyFeatures& f,
                const Tensor& truth, Rng& rng, const ModelConfig& mc);

}  // namespace densebody::pipe
