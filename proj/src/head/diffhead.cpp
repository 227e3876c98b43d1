#include "densebody/head/diffhead.hpp"

#include <cmath>

#include "densebody/core/errors.hpp"
#include "densebody/core/nn.hpp"

namespace densebody::head {

namespace {

constexpr Scalar kMaskBias = -1e30;
constexpr Scalar kCosineS = 0.008;
constexpr Scalar kCleanClip = 3.0;  // bound on x0 estimates, normalized units

// Squared-cosine signal profile over normalized time u in [0, 1].
Scalar cos2(Scalar u) {
  const Scalar half_pi = std::acos(Scalar(0));
  const Scalar c = std::cos((u + kCosineS) / (1.0 + kCosineS) * half_pi);
  return c * c;
}

}  // namespace

DiffusionSchedule make_schedule(int steps) {
  if (steps < 2)
    throw ConfigError("diffusion needs at least 2 steps, got " +
                      std::to_string(steps));
  DiffusionSchedule s;
  const Scalar f0 = cos2(0.0);
  Scalar cum = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const Scalar target = cos2(Scalar(t) / Scalar(steps)) / f0;
    Scalar beta = 1.0 - target / cum;
    beta = std::min(std::max(beta, Scalar(1e-8)), Scalar(0.999));
    cum *= 1.0 - beta;
    s.beta.push_back(beta);
    s.alpha_bar.push_back(cum);
  }
  if (s.alpha_bar[0] <= 0.99)
    throw ConfigError(
        "too few diffusion steps: initial signal fraction " +
        std::to_string(s.alpha_bar[0]) + " does not exceed 0.99");
  return s;
}

Tensor diffuse(const DiffusionSchedule& sch, const Tensor& clean, int t,
               const Tensor& noise) {
  if (t < 0 || t >= sch.steps())
    throw RangeError("diffusion step " + std::to_string(t) + " out of [0, " +
                     std::to_string(sch.steps()) + ")");
  if (noise.shape != clean.shape)
    throw InputError("noise shape does not match the clean sample");
  const Scalar sa = std::sqrt(sch.alpha_bar[size_t(t)]);
  const Scalar sn = std::sqrt(1.0 - sch.alpha_bar[size_t(t)]);
  Tensor out = clean;
  for (size_t i = 0; i < out.v.size(); ++i)
    out.v[i] = sa * clean.v[i] + sn * noise.v[i];
  return out;
}

void init_diff_head(ParamStore& ps, const std::string& prefix,
                    const DiffHeadSpec& spec, Rng& rng) {
  make_schedule(spec.steps);  // validate early
  nn::init_linear(ps, prefix + ".in", morph::kActionDims, spec.dim, rng);
  ps.create_normal(prefix + ".time", {spec.horizon, spec.dim}, 0.02, rng);
  ps.create_normal(prefix + ".tstep", {spec.steps, spec.dim}, 0.02, rng);
  for (int l = 0; l < spec.layers; ++l)
    nn::init_decoder_block(ps, prefix + ".blk" + std::to_string(l), spec.dim,
                           spec.hidden, rng);
  nn::init_layernorm(ps, prefix + ".ln_f", spec.dim);
  nn::init_linear(ps, prefix + ".out", spec.dim, morph::kActionDims, rng);
}

DecoderMemory project_diff_memory(Graph& g, ParamStore& ps,
                                  const fuse::FusedFeatureSet& fv, int fs,
                                  const std::string& prefix,
                                  const DiffHeadSpec& spec) {
  if (!ps.has(prefix + ".tstep"))
    throw CheckpointError("diffusion head parameters missing under '" +
                          prefix + "'");
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

int predict_noise(Graph& g, ParamStore& ps, const DecoderMemory& mem, int x_t,
                  int t, const std::string& prefix, const DiffHeadSpec& spec) {
  if (t < 0 || t >= spec.steps)
    throw RangeError("diffusion step out of range");
  const Tensor& xv = g.val(x_t);
  if (xv.rows() != spec.horizon || xv.cols() != morph::kActionDims)
    throw InputError("noisy sample must be horizon x 25");
  int x = nn::linear(g, ps, x_t, prefix + ".in");
  x = g.add(x, g.param(ps, prefix + ".time"));
  x = g.add_rowvec(x, g.gather_rows(g.param(ps, prefix + ".tstep"),
                                    {int64_t(t)}));
  nn::MhaOpts self_opts, cross_opts;
  self_opts.heads = spec.heads;
  cross_opts.heads = spec.heads;
  cross_opts.key_bias = &mem.key_bias;
  for (int l = 0; l < spec.layers; ++l) {
    const auto& [K, V] = mem.kv[size_t(l)];
    x = nn::decoder_block(g, ps, x, K, V, prefix + ".blk" + std::to_string(l),
                          self_opts, cross_opts);
  }
  return nn::linear(g, ps, nn::layernorm(g, ps, x, prefix + ".ln_f"),
                    prefix + ".out");
}

ActionSequence denoise_sample(Graph& g, ParamStore& ps,
                              const fuse::FusedFeatureSet& fv, int fs,
                              uint64_t seed, const std::string& prefix,
                              const DiffHeadSpec& spec) {
  const DiffusionSchedule sch = make_schedule(spec.steps);
  const DecoderMemory mem = project_diff_memory(g, ps, fv, fs, prefix, spec);
  Rng rng(seed);
  Tensor x(spec.horizon, morph::kActionDims);
  for (auto& v : x.v) v = rng.normal();

  ActionSequence seq;
  for (int t = sch.steps() - 1; t >= 0; --t) {
    const int eps = predict_noise(g, ps, mem, g.leaf(x), t, prefix, spec);
    ++seq.decoder_calls;
    const Tensor& e = g.val(eps);
    const Scalar ab = sch.alpha_bar[size_t(t)];
    const Scalar ab_prev = t > 0 ? sch.alpha_bar[size_t(t) - 1] : 1.0;
    const Scalar beta = sch.beta[size_t(t)];
    // posterior mean through the clamped clean estimate: keeps the terminal
    // high-beta steps from amplifying prediction error
    const Scalar sn = std::sqrt(1.0 - ab);
    const Scalar inv_sa = 1.0 / std::sqrt(ab);
    const Scalar c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const Scalar c1 = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
    const Scalar sigma =
        t > 0 ? std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab)) : 0.0;
    for (size_t i = 0; i < x.v.size(); ++i) {
      Scalar x0 = (x.v[i] - sn * e.v[i]) * inv_sa;
      x0 = std::min(std::max(x0, -kCleanClip), kCleanClip);
      const Scalar mu = c0 * x0 + c1 * x.v[i];
      x.v[i] = t > 0 ? mu + sigma * rng.normal() : mu;
    }
  }
  seq.actions = x;
  return seq;
}

int diffusion_loss(Graph& g, ParamStore& ps, const fuse::FusedFeatureSet& fv,
                   int fs, const Tensor& truth, Rng& rng,
                   const std::string& prefix, const DiffHeadSpec& spec) {
  if (truth.rows() != spec.horizon || truth.cols() != morph::kActionDims)
    throw InputError("diffusion loss: truth must be horizon x 25");
  for (Scalar v : truth.v)
    if (!std::isfinite(v))
      throw TrainingError("non-finite action target in training batch");
  const DiffusionSchedule sch = make_schedule(spec.steps);
  const Tensor clean = canonicalize_quats(truth);
  const int t = int(rng.uniform_int(uint64_t(sch.steps())));
  Tensor noise(spec.horizon, morph::kActionDims);
  for (auto& v : noise.v) v = rng.normal();
  const Tensor x_t = diffuse(sch, clean, t, noise);
  const DecoderMemory mem = project_diff_memory(g, ps, fv, fs, prefix, spec);
  const int eps = predict_noise(g, ps, mem, g.leaf(x_t), t, prefix, spec);
  const int loss = g.mse(eps, noise);
  if (!std::isfinite(g.val(loss).v[0]))
    throw TrainingError("non-finite diffusion loss");
  return loss;
}

}  // namespace densebody::head
