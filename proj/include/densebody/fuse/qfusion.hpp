#pragma once

#include <string>
#include <vector>

#include "densebody/core/graph.hpp"
#include "densebody/core/params.hpp"
#include "densebody/core/rng.hpp"
#include "densebody/core/tensor.hpp"
#include "densebody/enc/encoders.hpp"

namespace densebody::fuse {

using core::Graph;
using core::ParamStore;
using core::Rng;
using core::Scalar;
using core::Tensor;

struct FusionSpec {
  int dim = 128;
  int heads = 4;
  int n_queries = 300;       // slot-aligned with the padded VoxelFeatureSet
  int patches_per_view = 64;
  int views = 4;
};

// F_V: cross-attention retrieval added residually to F_P.
struct FusedFeatureSet {
  int tokens = -1;  // graph node, [n_queries, dim]; invalid rows are zero
  Tensor valid;     // copied from the voxel set
  int n_valid = 0;
};

// Query bank: Q_learn [n_queries, dim], one multi-head cross-attention
// block, per-view patch position embeddings Pos_I and a per-view id
// embedding (both initialized to zero).
void init_fusion(ParamStore& ps, const std::string& prefix,
                 const FusionSpec& spec, Rng& rng);

// Q = Q_learn + Pos_P, elementwise per slot. Rows at invalid voxels are
// still computed; the caller carries the validity mask. Throws ConfigError
// when the voxel set's embedding shape does not match the bank.
int form_queries(Graph& g, ParamStore& ps, const enc::VoxelFeatureSet& vox,
                 const std::string& prefix, const FusionSpec& spec);

// F_V = Attn(Q, K, V) + F_P where keys/values concatenate all views of
// F_I^v + Pos_I^v + view_embed^v. Attention output at invalid query rows is
// zeroed so padded F_V rows stay zero. Throws InputError unless exactly
// spec.views patch token sets are supplied.
FusedFeatureSet fuse(Graph& g, ParamStore& ps,
                     const enc::VoxelFeatureSet& vox,
                     const std::vector<int>& patch_tokens,
                     const std::string& prefix, const FusionSpec& spec);

}  // namespace densebody::fuse
