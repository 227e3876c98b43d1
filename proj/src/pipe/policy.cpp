#include "densebody/pipe/policy.hpp"

#include <vector>

#include "densebody/core/errors.hpp"

namespace densebody::pipe {

enc::SparseEncSpec ModelConfig::sparse_spec() const {
  enc::SparseEncSpec s;
  s.voxel_size = voxel_size;
  s.c0 = sparse_c0;
  s.c1 = sparse_c1;
  s.dim = dim;
  s.max_tokens = voxel_tokens;
  return s;
}

enc::PatchEncSpec ModelConfig::patch_spec() const {
  enc::PatchEncSpec s;
  s.patch = patch;
  s.dim = dim;
  s.hidden = patch_hidden;
  s.layers = patch_layers;
  s.heads = patch_heads;
  s.lora_rank = lora_rank;
  return s;
}

enc::StateEncSpec ModelConfig::state_spec() const {
  enc::StateEncSpec s;
  s.dim = dim;
  s.hidden = state_hidden;
  s.mask_prob = state_mask_prob;
  return s;
}

fuse::FusionSpec ModelConfig::fusion_spec() const {
  fuse::FusionSpec s;
  s.dim = dim;
  s.heads = fusion_heads;
  s.n_queries = voxel_tokens;
  s.patches_per_view = patch_spec().patches_per_view();
  s.views = enc::kNumViews;
  return s;
}

head::DenseHeadSpec ModelConfig::dense_spec() const {
  head::DenseHeadSpec s;
  s.horizon = horizon;
  s.dim = dim;
  s.hidden = decoder_hidden;
  s.layers = decoder_layers;
  s.heads = decoder_heads;
  s.exec_steps = exec_steps;
  s.loss_beta = loss_beta;
  return s;
}

head::DiffHeadSpec ModelConfig::diff_spec() const {
  head::DiffHeadSpec s;
  s.horizon = horizon;
  s.dim = dim;
  s.hidden = decoder_hidden;
  s.layers = decoder_layers;
  s.heads = decoder_heads;
  s.steps = diffusion_steps;
  s.exec_steps = exec_steps;
  return s;
}

void ModelConfig::validate() const {
  if (head != "dense" && head != "diffusion")
    throw ConfigError("unknown head '" + head + "'");
  enc::encoder_mode_from(encoder_mode);  // throws on bad names
  for (int v : {dim, sparse_c0, sparse_c1, voxel_tokens, patch, patch_layers,
                patch_hidden, patch_heads, state_hidden, fusion_heads, horizon,
                exec_steps, decoder_layers, decoder_heads, decoder_hidden,
                diffusion_steps})
    if (v <= 0) throw ConfigError("model sizes must be positive");
  if (voxel_size <= 0) throw ConfigError("voxel_size must be positive");
  if (dim % patch_heads != 0 || dim % fusion_heads != 0 ||
      dim % decoder_heads != 0)
    throw ConfigError("dim must be divisible by every head count");
  if (exec_steps < 1 || exec_steps > horizon)
    throw ConfigError("exec_steps must lie in [1, horizon]");
  if (lora_rank < 1) throw ConfigError("lora_rank must be positive");
  head::num_levels(horizon);  // power-of-two check
}

ModelConfig ModelConfig::from_config(const Config& c) {
  ModelConfig m;
  const std::string s = "model";
  m.dim = int(c.integer_or(s, "dim", m.dim));
  m.voxel_size = c.num_or(s, "voxel_size", m.voxel_size);
  m.sparse_c0 = int(c.integer_or(s, "sparse_c0", m.sparse_c0));
  m.sparse_c1 = int(c.integer_or(s, "sparse_c1", m.sparse_c1));
  m.voxel_tokens = int(c.integer_or(s, "voxel_tokens", m.voxel_tokens));
  m.patch = int(c.integer_or(s, "patch", m.patch));
  m.patch_layers = int(c.integer_or(s, "patch_layers", m.patch_layers));
  m.patch_hidden = int(c.integer_or(s, "patch_hidden", m.patch_hidden));
  m.patch_heads = int(c.integer_or(s, "patch_heads", m.patch_heads));
  m.lora_rank = int(c.integer_or(s, "lora_rank", m.lora_rank));
  m.state_hidden = int(c.integer_or(s, "state_hidden", m.state_hidden));
  m.state_mask_prob = c.num_or(s, "state_mask_prob", m.state_mask_prob);
  m.fusion_heads = int(c.integer_or(s, "fusion_heads", m.fusion_heads));
  m.head = c.str_or(s, "head", m.head);
  m.encoder_mode = c.str_or(s, "encoder_mode", m.encoder_mode);
  m.horizon = int(c.integer_or(s, "horizon", m.horizon));
  m.exec_steps = int(c.integer_or(s, "exec_steps", m.exec_steps));
  m.decoder_layers = int(c.integer_or(s, "decoder_layers", m.decoder_layers));
  m.decoder_heads = int(c.integer_or(s, "decoder_heads", m.decoder_heads));
  m.decoder_hidden = int(c.integer_or(s, "decoder_hidden", m.decoder_hidden));
  m.diffusion_steps =
      int(c.integer_or(s, "diffusion_steps", m.diffusion_steps));
  m.loss_beta = c.num_or(s, "loss_beta", m.loss_beta);
  m.validate();
  return m;
}

void ModelConfig::to_config(Config& c) const {
  const std::string s = "model";
  c.set_int(s, "dim", dim);
  c.set_num(s, "voxel_size", voxel_size);
  c.set_int(s, "sparse_c0", sparse_c0);
  c.set_int(s, "sparse_c1", sparse_c1);
  c.set_int(s, "voxel_tokens", voxel_tokens);
  c.set_int(s, "patch", patch);
  c.set_int(s, "patch_layers", patch_layers);
  c.set_int(s, "patch_hidden", patch_hidden);
  c.set_int(s, "patch_heads", patch_heads);
  c.set_int(s, "lora_rank", lora_rank);
  c.set_int(s, "state_hidden", state_hidden);
  c.set_num(s, "state_mask_prob", state_mask_prob);
  c.set_int(s, "fusion_heads", fusion_heads);
  c.set(s, "head", head);
  c.set(s, "encoder_mode", encoder_mode);
  c.set_int(s, "horizon", horizon);
  c.set_int(s, "exec_steps", exec_steps);
  c.set_int(s, "decoder_layers", decoder_layers);
  c.set_int(s, "decoder_heads", decoder_heads);
  c.set_int(s, "decoder_hidden", decoder_hidden);
  c.set_int(s, "diffusion_steps", diffusion_steps);
  c.set_num(s, "loss_beta", loss_beta);
}

const char* head_prefix(const ModelConfig& mc) {
  return mc.head == "dense" ? "dense" : "diff";
}

void init_policy(ParamStore& ps, const ModelConfig& mc, Rng& rng) {
  mc.validate();
  enc::init_sparse_encoder(ps, kSparsePrefix, mc.sparse_spec(), rng);
  enc::init_patch_backbone(ps, kPatchPrefix, mc.patch_spec(), rng,
                           /*with_lora=*/true);
  enc::init_state_encoder(ps, kStatePrefix, mc.state_spec(), rng);
  fuse::init_fusion(ps, kFusionPrefix, mc.fusion_spec(), rng);
  if (mc.head == "dense")
    head::init_dense_head(ps, head_prefix(mc), mc.dense_spec(), rng);
  else
    head::init_diff_head(ps, head_prefix(mc), mc.diff_spec(), rng);
  apply_mode(ps, mc);
}

void apply_mode(ParamStore& ps, const ModelConfig& mc) {
  enc::apply_encoder_mode(ps, kPatchPrefix,
                          enc::encoder_mode_from(mc.encoder_mode));
}

morph::RobotState normalize_state(const morph::RobotState& s,
                                  const morph::NormStats& stats) {
  morph::RobotState out = s;
  for (int i = 0; i < morph::kStateDims; ++i) {
    const int dim = i + 3;  // the chassis block is not part of the state
    if (!morph::is_quat_dim(dim))
      out.values[size_t(i)] = (s.values[size_t(i)] - stats.location[size_t(dim)]) /
                              stats.scale[size_t(dim)];
  }
  return out;
}

PolicyFeatures policy_features(Graph& g, ParamStore& ps,
                               const std::array<sim::Image, enc::kNumViews>& images,
                               const enc::Voxels& vox,
                               const morph::RobotState& state,
                               const morph::NormStats& stats, bool training,
                               Rng& rng, const ModelConfig& mc) {
  const enc::VoxelFeatureSet vfs =
      enc::sparse_encode(g, ps, vox, kSparsePrefix, mc.sparse_spec());
  const auto patches =
      enc::patch_encode(g, ps, images, enc::encoder_mode_from(mc.encoder_mode),
                        kPatchPrefix, mc.patch_spec());
  const morph::RobotState ns = normalize_state(state, stats);
  PolicyFeatures f;
  f.fs = enc::encode_state(g, ps, ns, training, rng, kStatePrefix,
                           mc.state_spec());
  f.fv = fuse::fuse(g, ps, vfs,
                    std::vector<int>(patches.begin(), patches.end()),
                    kFusionPrefix, mc.fusion_spec());
  return f;
}

PolicyFeatures policy_features(Graph& g, ParamStore& ps,
                               const sim::Observation& obs,
                               const morph::NormStats& stats, bool training,
                               Rng& rng, const ModelConfig& mc) {
  return policy_features(g, ps, obs.images,
                         enc::voxelize(obs.cloud, mc.voxel_size), obs.state,
                         stats, training, rng, mc);
}

head::ActionSequence policy_plan(Graph& g, ParamStore& ps,
                                 const PolicyFeatures& f, uint64_t seed,
                                 const ModelConfig& mc) {
  if (mc.head == "dense")
    return head::generate(g, ps, f.fv, f.fs, head_prefix(mc),
                          mc.dense_spec());
  return head::denoise_sample(g, ps, f.fv, f.fs, seed, head_prefix(mc),
                              mc.diff_spec());
}

int policy_loss(Graph& g, ParamStore& ps, const PolicyFeatures& f,
                const Tensor& truth, Rng& rng, const ModelConfig& mc) {
  if (mc.head == "dense")
    return head::sequence_loss(g, ps, f.fv, f.fs, truth, head_prefix(mc),
                               mc.dense_spec())
        .total;
  return head::diffusion_loss(g, ps, f.fv, f.fs, truth, rng, head_prefix(mc),
                              mc.diff_spec());
}

}  // namespace densebody::pipe
