#pragma once

#include <string>
#include <vector>

#include "densebody/core/graph.hpp"
#include "densebody/core/params.hpp"
#include "densebody/core/rng.hpp"

namespace densebody::nn {

using core::Graph;
using core::ParamStore;
using core::Rng;
using core::Scalar;
using core::Tensor;

// Parameter naming convention: "<prefix>.w" / "<prefix>.b" for a linear,
// "<prefix>.{q,k,v,o}.{w,b}" for attention, "<prefix>.lnN.{g,b}" for norms.

void init_linear(ParamStore& ps, const std::string& prefix, int64_t in,
                 int64_t out, Rng& rng);
int linear(Graph& g, ParamStore& ps, int x, const std::string& prefix);

void init_layernorm(ParamStore& ps, const std::string& prefix, int64_t dim);
int layernorm(Graph& g, ParamStore& ps, int x, const std::string& prefix);

struct MhaOpts {
  int heads = 4;
  // Additive bias over keys (1 x Tk), broadcast over queries; use large
  // negative values to mask keys out.
  const Tensor* key_bias = nullptr;
  // Low-rank adapters on the Q and V projections.
  bool lora_qv = false;
  Scalar lora_scale = 0.0;
};

void init_mha(ParamStore& ps, const std::string& prefix, int64_t dim, Rng& rng);
void init_mha_lora(ParamStore& ps, const std::string& prefix, int64_t dim,
                   int64_t rank, Rng& rng);

// Full attention: projects q from q_in and k/v from kv_in.
int mha(Graph& g, ParamStore& ps, int q_in, int kv_in, const std::string& prefix,
        const MhaOpts& opts);

// Attention with pre-projected keys/values (for memory shared across calls).
int mha_kv(Graph& g, ParamStore& ps, int q_in, int K, int V,
           const std::string& prefix, const MhaOpts& opts);
// Projects memory once; reuse the returned ids across mha_kv calls.
std::pair<int, int> kv_project(Graph& g, ParamStore& ps, int mem,
                               const std::string& prefix, const MhaOpts& opts);

// Pre-LN transformer encoder block: self-attention + MLP, residual both.
void init_encoder_block(ParamStore& ps, const std::string& prefix, int64_t dim,
                        int64_t hidden, Rng& rng, int64_t lora_rank = 0);
int encoder_block(Graph& g, ParamStore& ps, int x, const std::string& prefix,
                  const MhaOpts& attn_opts);

// Pre-LN decoder block: self-attention, cross-attention to precomputed K/V,
// MLP; residual everywhere.
void init_decoder_block(ParamStore& ps, const std::string& prefix, int64_t dim,
                        int64_t hidden, Rng& rng);
int decoder_block(Graph& g, ParamStore& ps, int x, int memK, int memV,
                  const std::string& prefix, const MhaOpts& self_opts,
                  const MhaOpts& cross_opts);

// Two-layer MLP with GELU.
void init_mlp(ParamStore& ps, const std::string& prefix, int64_t in,
              int64_t hidden, int64_t out, Rng& rng);
int mlp(Graph& g, ParamStore& ps, int x, const std::string& prefix);

}  // namespace densebody::nn
