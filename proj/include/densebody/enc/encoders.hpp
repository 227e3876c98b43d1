#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "densebody/core/graph.hpp"
#include "densebody/core/params.hpp"
#include "densebody/core/rng.hpp"
#include "densebody/core/tensor.hpp"
#include "densebody/morph/morphology.hpp"
#include "densebody/sim/render.hpp"

namespace densebody::enc {

using core::Graph;
using core::ParamStore;
using core::Rng;
using core::Scalar;
using core::Tensor;

// ---------------------------------------------------------------------------
// Voxelization

struct Voxels {
  // Occupied integer cells, sorted lexicographically, unique.
  std::vector<std::array<int32_t, 3>> cells;
  // N x 4 per-cell features: occupancy (always 1) + mean point offset from
  // the cell center, in cell units (each component in [-0.5, 0.5)).
  Tensor feats;
};

// Bins a point cloud into occupied voxels. Output is independent of input
// point order. Empty cloud -> empty set.
Voxels voxelize(const std::vector<std::array<float, 3>>& cloud,
                Scalar voxel_size);

// ---------------------------------------------------------------------------
// Sine-cosine positional embedding

// coords: M x 3 (meters) -> M x dim. Per axis, dim/6 interleaved (sin, cos)
// pairs at geometric frequencies; axes concatenated. Every row has norm
// sqrt(dim/2). Throws ConfigError unless dim is a positive multiple of 6.
Tensor sincos_embed(const Tensor& coords, int dim);

// ---------------------------------------------------------------------------
// Sparse voxel encoder

struct SparseEncSpec {
  Scalar voxel_size = 0.05;
  int c0 = 32;          // channels after stage 0 (stride 1)
  int c1 = 64;          // channels after stage 1 (stride 2)
  int dim = 128;        // token width after stage 2 (stride 2) + projection
  int max_tokens = 300; // farthest-point subsample cap
};

// F_P / Pos_P token set. Rows past n_valid are zero padding.
struct VoxelFeatureSet {
  int tokens = -1;  // graph node, [max_tokens, dim]
  Tensor coords;    // [max_tokens, 3] surviving voxel centers, meters
  Tensor pos_embed; // [max_tokens, dim]
  Tensor valid;     // [max_tokens, 1] of 1/0
  int n_valid = 0;
};

void init_sparse_encoder(ParamStore& ps, const std::string& prefix,
                         const SparseEncSpec& spec, Rng& rng);

// 3x3x3 sparse convolutions: stride 1 -> stride 2 -> stride 2 (GELU between),
// then a linear projection. Token coords are the surviving coarse voxel
// centers (pitch = 4 * voxel_size); over-budget sets are farthest-point
// subsampled to max_tokens with ties broken by lowest sorted voxel index.
VoxelFeatureSet sparse_encode(Graph& g, ParamStore& ps, const Voxels& vox,
                              const std::string& prefix,
                              const SparseEncSpec& spec);

// ---------------------------------------------------------------------------
// Patch encoder

enum class EncoderMode { frozen, lora, full };

EncoderMode encoder_mode_from(const std::string& name);  // ConfigError
const char* to_string(EncoderMode m);

struct PatchEncSpec {
  int patch = 8;
  int dim = 128;
  int hidden = 256;
  int layers = 4;
  int heads = 4;
  int lora_rank = 8;  // adapters on Q and V, scaling 2/rank
  int image_h = 64;
  int image_w = 64;
  int patches_per_view() const {
    return (image_h / patch) * (image_w / patch);
  }
  int patch_inputs() const { return patch * patch * 3; }
};

inline constexpr int kNumViews = 4;

// Backbone: patch embed + learned patch positions + `layers` pre-LN encoder
// blocks + final LN. `with_lora` additionally creates rank-`lora_rank`
// adapters on the attention Q/V projections (zero-initialized B). The
// policy-side head (dim -> dim) is created trainable in every mode.
void init_patch_backbone(ParamStore& ps, const std::string& prefix,
                         const PatchEncSpec& spec, Rng& rng, bool with_lora);

// Pretext head (dim -> 4): per-patch mean RGB + mean depth regression target
// used to pre-train the backbone on procedurally generated scenes.
void init_patch_pretext(ParamStore& ps, const std::string& prefix,
                        const PatchEncSpec& spec, Rng& rng);

// Sets trainable flags for `mode`: frozen -> head only; lora -> head +
// adapters; full -> everything. Throws ConfigError if mode is lora but no
// adapters exist under `prefix`.
void apply_encoder_mode(ParamStore& ps, const std::string& prefix,
                        EncoderMode mode);

// Image -> [patches_per_view, patch*patch*3] rows of pixel values in [0,1].
// Throws InputError on size mismatch with the spec.
Tensor patch_pixels(const sim::Image& img, const PatchEncSpec& spec);

// Backbone features for one view: [patches_per_view, dim] (post final LN,
// before the policy head). In lora mode the adapter path is active.
int patch_backbone(Graph& g, ParamStore& ps, const Tensor& pixels,
                   EncoderMode mode, const std::string& prefix,
                   const PatchEncSpec& spec);

// Policy-side tokens F_I^v for one view: head(backbone(pixels)).
int patch_encode_view(Graph& g, ParamStore& ps, const Tensor& pixels,
                      EncoderMode mode, const std::string& prefix,
                      const PatchEncSpec& spec);

// All four camera views with shared weights.
std::array<int, kNumViews> patch_encode(
    Graph& g, ParamStore& ps, const std::array<sim::Image, kNumViews>& images,
    EncoderMode mode, const std::string& prefix, const PatchEncSpec& spec);

// Pretext predictions: [patches_per_view, 4] from backbone features.
int patch_pretext(Graph& g, ParamStore& ps, int backbone_tokens,
                  const std::string& prefix);

// ---------------------------------------------------------------------------
// State encoder

struct StateEncSpec {
  int dim = 128;
  int hidden = 256;
  Scalar mask_prob = 0.30;
};

void init_state_encoder(ParamStore& ps, const std::string& prefix,
                        const StateEncSpec& spec, Rng& rng);

// F_S: per-block linear embeddings of the five pose blocks (torso, arms,
// head, grippers — the chassis pose is excluded by the RobotState type),
// concatenated and passed through an MLP. During training each block is
// independently replaced by a learned mask token with probability
// spec.mask_prob (one uniform draw per block, always consumed); blocks with
// a zero validity bit are always masked.
int encode_state(Graph& g, ParamStore& ps, const morph::RobotState& s,
                 bool training, Rng& rng, const std::string& prefix,
                 const StateEncSpec& spec);

}  // namespace densebody::enc
