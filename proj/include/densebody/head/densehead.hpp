#pragma once

#include <string>
#include <utility>
#include <vector>

#include "densebody/core/graph.hpp"
#include "densebody/core/params.hpp"
#include "densebody/core/rng.hpp"
#include "densebody/core/tensor.hpp"
#include "densebody/fuse/qfusion.hpp"
#include "densebody/morph/morphology.hpp"

namespace densebody::head {

using core::Graph;
using core::ParamStore;
using core::Rng;
using core::Scalar;
using core::Tensor;

struct DenseHeadSpec {
  int horizon = 16;  // T, power of two
  int dim = 128;
  int hidden = 256;
  int layers = 4;
  int heads = 4;
  int exec_steps = 8;  // receding-horizon execution prefix
  Scalar loss_beta = 1.0;
};

// log2(T); ConfigError unless T is a power of two >= 1.
int num_levels(int T);

// Level set A^n = {i < T : i mod T/2^n == 0}, sorted ascending. ConfigError
// on invalid T, RangeError unless 0 <= n <= log2(T).
std::vector<int64_t> level_index_set(int T, int n);

// The level at which index i first appears (smallest n with i in A^n).
int level_of_origin(int T, int i);

// Doubles a level's rows: even output rows copy the input; odd rows take the
// linear midpoint of their two neighbors (the final row copies its left
// neighbor). Quaternion dims are renormalized to unit length with w >= 0; a
// (near-)cancelling midpoint falls back to the left neighbor's quaternion.
// InputError unless rows is a power of two < T and cols == 25.
Tensor upsample(const Tensor& level_actions, int T);

// Copy of an action matrix with both quaternion chunks of every row
// renormalized to unit length, w >= 0 (zero-norm chunks left untouched).
Tensor canonicalize_quats(const Tensor& actions);

// Normalized action sequence over the horizon.
struct ActionSequence {
  Tensor actions;                    // [T, 25]
  std::vector<int> level_of_origin;  // per timestep
  int decoder_calls = 0;
};

void init_dense_head(ParamStore& ps, const std::string& prefix,
                     const DenseHeadSpec& spec, Rng& rng);

// Cross-attention memory: [F_V tokens || F_S] projected once per decoder
// layer and shared by every refinement pass; invalid F_V rows are masked
// with a large negative additive key bias.
struct DecoderMemory {
  std::vector<std::pair<int, int>> kv;  // per layer (K, V)
  Tensor key_bias;                      // [1, n_tokens + 1]
};

DecoderMemory project_memory(Graph& g, ParamStore& ps,
                             const fuse::FusedFeatureSet& fv, int fs,
                             const std::string& prefix,
                             const DenseHeadSpec& spec);

// One bidirectional refinement pass at `level`. For level 0 pass actions =
// -1: the pass runs on the learned start token and predicts A^0 directly.
// For level n >= 1, `actions` holds the [2^n, 25] initialization at A^n's
// indices and the result is actions + predicted residuals.
int refine(Graph& g, ParamStore& ps, const DecoderMemory& mem, int actions,
           int level, const std::string& prefix, const DenseHeadSpec& spec);

// Coarse-to-fine inference: start token -> A^0, then upsample + refine per
// level; exactly log2(T)+1 decoder passes. CheckpointError if the head's
// parameters are absent.
ActionSequence generate(Graph& g, ParamStore& ps,
                        const fuse::FusedFeatureSet& fv, int fs,
                        const std::string& prefix, const DenseHeadSpec& spec);

// Teacher-forced multi-level loss for one sample: level 0 from the start
// token; each level n >= 1 refines the upsampled ground truth of A^{n-1};
// smooth-L1 against the (quaternion-canonicalized) truth at A^n, averaged
// over levels. TrainingError on non-finite targets.
struct LossNodes {
  int total = -1;
  std::vector<int> per_level;
};

LossNodes sequence_loss(Graph& g, ParamStore& ps,
                        const fuse::FusedFeatureSet& fv, int fs,
                        const Tensor& truth, const std::string& prefix,
                        const DenseHeadSpec& spec);

}  // namespace densebody::head
