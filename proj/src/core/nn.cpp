#include "densebody/core/nn.hpp"

#include <cmath>

namespace densebody::nn {

void init_linear(ParamStore& ps, const std::string& prefix, int64_t in,
                 int64_t out, Rng& rng) {
  ps.create_xavier(prefix + ".w", in, out, rng);
  ps.create_zeros(prefix + ".b", {1, out});
}

int linear(Graph& g, ParamStore& ps, int x, const std::string& prefix) {
  int w = g.param(ps, prefix + ".w");
  int b = g.param(ps, prefix + ".b");
  return g.add_rowvec(g.matmul(x, w), b);
}

void init_layernorm(ParamStore& ps, const std::string& prefix, int64_t dim) {
  ps.create_const(prefix + ".g", {1, dim}, 1.0);
  ps.create_zeros(prefix + ".b", {1, dim});
}

int layernorm(Graph& g, ParamStore& ps, int x, const std::string& prefix) {
  int ga = g.param(ps, prefix + ".g");
  int be = g.param(ps, prefix + ".b");
  return g.layernorm(x, ga, be);
}

void init_mha(ParamStore& ps, const std::string& prefix, int64_t dim, Rng& rng) {
  for (const char* p : {".q", ".k", ".v", ".o"})
    init_linear(ps, prefix + p, dim, dim, rng);
}

void init_mha_lora(ParamStore& ps, const std::string& prefix, int64_t dim,
                   int64_t rank, Rng& rng) {
  for (const char* p : {".q", ".v"}) {
    ps.create_normal(prefix + p + ".lora_a", {dim, rank}, 0.02, rng);
    ps.create_zeros(prefix + p + ".lora_b", {rank, dim});
  }
}

namespace {

int proj_with_lora(Graph& g, ParamStore& ps, int x, const std::string& prefix,
                   bool lora, Scalar lora_scale) {
  int y = linear(g, ps, x, prefix);
  if (lora) {
    int a = g.param(ps, prefix + ".lora_a");
    int b = g.param(ps, prefix + ".lora_b");
    int delta = g.matmul(g.matmul(x, a), b);
    y = g.add(y, g.scale(delta, lora_scale));
  }
  return y;
}

int attention_core(Graph& g, int Q, int K, int V, const MhaOpts& opts) {
  const int64_t dim = g.val(Q).cols();
  const int64_t dh = dim / opts.heads;
  const Scalar inv_sqrt = 1.0 / std::sqrt(Scalar(dh));
  std::vector<int> head_outs;
  head_outs.reserve(size_t(opts.heads));
  for (int h = 0; h < opts.heads; ++h) {
    int Qh = g.slice_cols(Q, h * dh, dh);
    int Kh = g.slice_cols(K, h * dh, dh);
    int Vh = g.slice_cols(V, h * dh, dh);
    int scores = g.scale(g.matmul(Qh, Kh, false, true), inv_sqrt);
    if (opts.key_bias) scores = g.add_colbroadcast_const(scores, *opts.key_bias);
    int P = g.softmax_rows(scores);
    head_outs.push_back(g.matmul(P, Vh));
  }
  return g.concat_cols(head_outs);
}

}  // namespace

std::pair<int, int> kv_project(Graph& g, ParamStore& ps, int mem,
                               const std::string& prefix, const MhaOpts& opts) {
  int K = linear(g, ps, mem, prefix + ".k");
  int V = proj_with_lora(g, ps, mem, prefix + ".v", opts.lora_qv, opts.lora_scale);
  return {K, V};
}

int mha_kv(Graph& g, ParamStore& ps, int q_in, int K, int V,
           const std::string& prefix, const MhaOpts& opts) {
  int Q = proj_with_lora(g, ps, q_in, prefix + ".q", opts.lora_qv, opts.lora_scale);
  int ctx = attention_core(g, Q, K, V, opts);
  return linear(g, ps, ctx, prefix + ".o");
}

int mha(Graph& g, ParamStore& ps, int q_in, int kv_in, const std::string& prefix,
        const MhaOpts& opts) {
  auto [K, V] = kv_project(g, ps, kv_in, prefix, opts);
  return mha_kv(g, ps, q_in, K, V, prefix, opts);
}

void init_mlp(ParamStore& ps, const std::string& prefix, int64_t in,
              int64_t hidden, int64_t out, Rng& rng) {
  init_linear(ps, prefix + ".fc1", in, hidden, rng);
  init_linear(ps, prefix + ".fc2", hidden, out, rng);
}

int mlp(Graph& g, ParamStore& ps, int x, const std::string& prefix) {
  return linear(g, ps, g.gelu(linear(g, ps, x, prefix + ".fc1")), prefix + ".fc2");
}

void init_encoder_block(ParamStore& ps, const std::string& prefix, int64_t dim,
                        int64_t hidden, Rng& rng, int64_t lora_rank) {
  init_layernorm(ps, prefix + ".ln1", dim);
  init_mha(ps, prefix + ".attn", dim, rng);
  if (lora_rank > 0) init_mha_lora(ps, prefix + ".attn", dim, lora_rank, rng);
  init_layernorm(ps, prefix + ".ln2", dim);
  init_mlp(ps, prefix + ".mlp", dim, hidden, dim, rng);
}

int encoder_block(Graph& g, ParamStore& ps, int x, const std::string& prefix,
                  const MhaOpts& attn_opts) {
  int h = layernorm(g, ps, x, prefix + ".ln1");
  int x1 = g.add(x, mha(g, ps, h, h, prefix + ".attn", attn_opts));
  int h2 = layernorm(g, ps, x1, prefix + ".ln2");
  return g.add(x1, mlp(g, ps, h2, prefix + ".mlp"));
}

void init_decoder_block(ParamStore& ps, const std::string& prefix, int64_t dim,
                        int64_t hidden, Rng& rng) {
  init_layernorm(ps, prefix + ".ln1", dim);
  init_mha(ps, prefix + ".self", dim, rng);
  init_layernorm(ps, prefix + ".ln2", dim);
  init_mha(ps, prefix + ".cross", dim, rng);
  init_layernorm(ps, prefix + ".ln3", dim);
  init_mlp(ps, prefix + ".mlp", dim, hidden, dim, rng);
}

int decoder_block(Graph& g, ParamStore& ps, int x, int memK, int memV,
                  const std::string& prefix, const MhaOpts& self_opts,
                  const MhaOpts& cross_opts) {
  int h = layernorm(g, ps, x, prefix + ".ln1");
  int x1 = g.add(x, mha(g, ps, h, h, prefix + ".self", self_opts));
  int h2 = layernorm(g, ps, x1, prefix + ".ln2");
  int x2 = g.add(x1, mha_kv(g, ps, h2, memK, memV, prefix + ".cross", cross_opts));
  int h3 = layernorm(g, ps, x2, prefix + ".ln3");
  return g.add(x2, mlp(g, ps, h3, prefix + ".mlp"));
}

}  // namespace densebody::nn
