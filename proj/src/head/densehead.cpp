#include "densebody/head/densehead.hpp"

#include <cmath>

#include "densebody/core/errors.hpp"
#include "densebody/core/nn.hpp"

namespace densebody::head {

namespace {

constexpr Scalar kMaskBias = -1e30;

void check_horizon(int T) {
  if (T < 1 || (T & (T - 1)) != 0)
    throw ConfigError("horizon must be a power of two, got " +
                      std::to_string(T));
}

// Renormalize the two quaternion chunks of one 25-dim action row in place;
// falls back to `left` on a (near-)zero midpoint.
void fix_quats(Tensor& t, int64_t row, const Tensor& left, int64_t lrow) {
  for (int off : {morph::kLeftQuatOffset, morph::kRightQuatOffset}) {
    Scalar n2 = 0;
    for (int i = 0; i < 4; ++i)
      n2 += t.at(row, off + i) * t.at(row, off + i);
    if (n2 > 1e-16) {
      const Scalar inv = (t.at(row, off) < 0 ? -1.0 : 1.0) / std::sqrt(n2);
      for (int i = 0; i < 4; ++i) t.at(row, off + i) *= inv;
    } else {
      for (int i = 0; i < 4; ++i) t.at(row, off + i) = left.at(lrow, off + i);
    }
  }
}

// Truth rows at the given indices, with canonical (w >= 0, unit) quats.
Tensor truth_rows(const Tensor& truth, const std::vector<int64_t>& idx) {
  Tensor out = Tensor::zeros(int64_t(idx.size()), truth.cols());
  for (size_t r = 0; r < idx.size(); ++r) {
    for (int64_t c = 0; c < truth.cols(); ++c)
      out.at(int64_t(r), c) = truth.at(idx[r], c);
    fix_quats(out, int64_t(r), out, int64_t(r));
  }
  return out;
}

}  // namespace

Tensor canonicalize_quats(const Tensor& actions) {
  if (actions.cols() != morph::kActionDims)
    throw InputError("expected 25 action dims");
  Tensor out = actions;
  for (int64_t r = 0; r < out.rows(); ++r) fix_quats(out, r, out, r);
  return out;
}

int num_levels(int T) {
  check_horizon(T);
  int n = 0;
  while ((1 << n) < T) ++n;
  return n;
}

std::vector<int64_t> level_index_set(int T, int n) {
  const int N = num_levels(T);
  if (n < 0 || n > N)
    throw RangeError("level " + std::to_string(n) + " out of [0, " +
                     std::to_string(N) + "]");
  const int stride = T >> n;
  std::vector<int64_t> idx;
  idx.reserve(size_t(1) << n);
  for (int i = 0; i < T; i += stride) idx.push_back(i);
  return idx;
}

int level_of_origin(int T, int i) {
  const int N = num_levels(T);
  if (i < 0 || i >= T) throw RangeError("timestep out of range");
  for (int n = 0; n <= N; ++n)
    if (i % (T >> n) == 0) return n;
  return N;
}

Tensor upsample(const Tensor& level_actions, int T) {
  check_horizon(T);
  const int64_t k = level_actions.rows();
  if (k < 1 || (k & (k - 1)) != 0 || 2 * k > int64_t(T))
    throw InputError("upsample: rows must be a power of two below the "
                     "horizon");
  if (level_actions.cols() != morph::kActionDims)
    throw InputError("upsample: expected 25 action dims");
  Tensor out = Tensor::zeros(2 * k, morph::kActionDims);
  for (int64_t j = 0; j < k; ++j) {
    for (int64_t c = 0; c < morph::kActionDims; ++c)
      out.at(2 * j, c) = level_actions.at(j, c);
    const int64_t right = j + 1 < k ? j + 1 : j;  // extrapolate by copy
    for (int64_t c = 0; c < morph::kActionDims; ++c)
      out.at(2 * j + 1, c) =
          0.5 * (level_actions.at(j, c) + level_actions.at(right, c));
    fix_quats(out, 2 * j + 1, level_actions, j);
  }
  return out;
}

void init_dense_head(ParamStore& ps, const std::string& prefix,
                     const DenseHeadSpec& spec, Rng& rng) {
  const int N = num_levels(spec.horizon);
  nn::init_linear(ps, prefix + ".in", morph::kActionDims, spec.dim, rng);
  ps.create_normal(prefix + ".start", {1, spec.dim}, 0.02, rng);
  ps.create_normal(prefix + ".time", {spec.horizon, spec.dim}, 0.02, rng);
  ps.create_normal(prefix + ".level", {N + 1, spec.dim}, 0.02, rng);
  for (int l = 0; l < spec.layers; ++l)
    nn::init_decoder_block(ps, prefix + ".blk" + std::to_string(l), spec.dim,
                           spec.hidden, rng);
  nn::init_layernorm(ps, prefix + ".ln_f", spec.dim);
  nn::init_linear(ps, prefix + ".out", spec.dim, morph::kActionDims, rng);
}

DecoderMemory project_memory(Graph& g, ParamStore& ps,
                             const fuse::FusedFeatureSet& fv, int fs,
                             const std::string& prefix,
                             const DenseHeadSpec& spec) {
  if (!ps.has(prefix + ".start"))
    throw CheckpointError("dense head parameters missing under '" + prefix +
                          "'");
  const int mem = g.concat_rows({fv.tokens, fs});
  DecoderMemory out;
  const int64_t n_tok = g.val(fv.tokens).rows();
  out.key_bias = Tensor::zeros(1, n_tok + 1);
  for (int64_t i = 0; i < n_tok; ++i)
    if (fv.valid.at(i, 0) == 0.0) out.key_bias.at(0, i) = kMaskBias;
  nn::MhaOpts opts;
  opts.heads = spec.heads;
  for (int l = 0; l < spec.layers; ++l)
    out.kv.push_back(nn::kv_project(
        g, ps, mem, prefix + ".blk" + std::to_string(l) + ".cross", opts));
  return out;
}

int refine(Graph& g, ParamStore& ps, const DecoderMemory& mem, int actions,
           int level, const std::string& prefix, const DenseHeadSpec& spec) {
  const std::vector<int64_t> idx = level_index_set(spec.horizon, level);
  int x;
  if (level == 0) {
    if (actions != -1)
      throw InputError("level 0 runs on the start token; pass actions = -1");
    x = g.param(ps, prefix + ".start");
  } else {
    if (actions == -1)
      throw InputError("levels >= 1 need an action initialization");
    const Tensor& a = g.val(actions);
    if (a.rows() != int64_t(idx.size()) || a.cols() != morph::kActionDims)
      throw InputError("refine: actions do not match level " +
                       std::to_string(level));
    x = nn::linear(g, ps, actions, prefix + ".in");
  }
  x = g.add(x, g.gather_rows(g.param(ps, prefix + ".time"), idx));
  x = g.add_rowvec(x, g.gather_rows(g.param(ps, prefix + ".level"),
                                    {int64_t(level)}));

  nn::MhaOpts self_opts, cross_opts;
  self_opts.heads = spec.heads;
  cross_opts.heads = spec.heads;
  cross_opts.key_bias = &mem.key_bias;
  for (int l = 0; l < spec.layers; ++l) {
    const auto& [K, V] = mem.kv[size_t(l)];
    x = nn::decoder_block(g, ps, x, K, V, prefix + ".blk" + std::to_string(l),
                          self_opts, cross_opts);
  }
  x = nn::linear(g, ps, nn::layernorm(g, ps, x, prefix + ".ln_f"),
                 prefix + ".out");
  return level == 0 ? x : g.add(actions, x);
}

ActionSequence generate(Graph& g, ParamStore& ps,
                        const fuse::FusedFeatureSet& fv, int fs,
                        const std::string& prefix, const DenseHeadSpec& spec) {
  const int N = num_levels(spec.horizon);
  const DecoderMemory mem = project_memory(g, ps, fv, fs, prefix, spec);
  ActionSequence seq;
  int cur = refine(g, ps, mem, -1, 0, prefix, spec);
  ++seq.decoder_calls;
  for (int n = 1; n <= N; ++n) {
    const int init = g.leaf(upsample(g.val(cur), spec.horizon));
    cur = refine(g, ps, mem, init, n, prefix, spec);
    ++seq.decoder_calls;
  }
  seq.actions = g.val(cur);
  for (int i = 0; i < spec.horizon; ++i)
    seq.level_of_origin.push_back(level_of_origin(spec.horizon, i));
  return seq;
}

LossNodes sequence_loss(Graph& g, ParamStore& ps,
                        const fuse::FusedFeatureSet& fv, int fs,
                        const Tensor& truth, const std::string& prefix,
                        const DenseHeadSpec& spec) {
  const int N = num_levels(spec.horizon);
  if (truth.rows() != spec.horizon || truth.cols() != morph::kActionDims)
    throw InputError("sequence loss: truth must be horizon x 25");
  for (Scalar v : truth.v)
    if (!std::isfinite(v))
      throw TrainingError("non-finite action target in training batch");

  const DecoderMemory mem = project_memory(g, ps, fv, fs, prefix, spec);
  LossNodes out;
  for (int n = 0; n <= N; ++n) {
    int pred;
    if (n == 0) {
      pred = refine(g, ps, mem, -1, 0, prefix, spec);
    } else {
      const Tensor prev =
          truth_rows(truth, level_index_set(spec.horizon, n - 1));
      pred = refine(g, ps, mem, g.leaf(upsample(prev, spec.horizon)), n,
                    prefix, spec);
    }
    const Tensor target = truth_rows(truth, level_index_set(spec.horizon, n));
    out.per_level.push_back(g.smooth_l1(pred, target, spec.loss_beta));
  }
  int total = out.per_level[0];
  for (size_t i = 1; i < out.per_level.size(); ++i)
    total = g.add(total, out.per_level[i]);
  out.total = g.scale(total, 1.0 / Scalar(N + 1));
  if (!std::isfinite(g.val(out.total).v[0]))
    throw TrainingError("non-finite dense-head loss");
  return out;
}

}  // namespace densebody::head
