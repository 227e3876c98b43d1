#include "densebody/fuse/qfusion.hpp"

#include "densebody/core/errors.hpp"
#include "densebody/core/nn.hpp"

namespace densebody::fuse {

void init_fusion(ParamStore& ps, const std::string& prefix,
                 const FusionSpec& spec, Rng& rng) {
  ps.create_normal(prefix + ".q_learn", {spec.n_queries, spec.dim}, 0.02,
                   rng);
  nn::init_mha(ps, prefix + ".attn", spec.dim, rng);
  for (int v = 0; v < spec.views; ++v)
    ps.create_zeros(prefix + ".pos_i" + std::to_string(v),
                    {spec.patches_per_view, spec.dim});
  ps.create_zeros(prefix + ".view", {spec.views, spec.dim});
}

int form_queries(Graph& g, ParamStore& ps, const enc::VoxelFeatureSet& vox,
                 const std::string& prefix, const FusionSpec& spec) {
  if (vox.pos_embed.rows() != spec.n_queries ||
      vox.pos_embed.cols() != spec.dim)
    throw ConfigError("voxel positional embedding does not match the query "
                      "bank shape");
  return g.add(g.param(ps, prefix + ".q_learn"), g.leaf(vox.pos_embed));
}

FusedFeatureSet fuse(Graph& g, ParamStore& ps,
                     const enc::VoxelFeatureSet& vox,
                     const std::vector<int>& patch_tokens,
                     const std::string& prefix, const FusionSpec& spec) {
  if (int(patch_tokens.size()) != spec.views)
    throw InputError("fusion expects " + std::to_string(spec.views) +
                     " views, got " + std::to_string(patch_tokens.size()));
  const int Q = form_queries(g, ps, vox, prefix, spec);

  std::vector<int> kv;
  kv.reserve(patch_tokens.size());
  for (int v = 0; v < spec.views; ++v) {
    const Tensor& pt = g.val(patch_tokens[size_t(v)]);
    if (pt.rows() != spec.patches_per_view || pt.cols() != spec.dim)
      throw InputError("patch token set " + std::to_string(v) +
                       " does not match the fusion spec");
    int x = g.add(patch_tokens[size_t(v)],
                  g.param(ps, prefix + ".pos_i" + std::to_string(v)));
    x = g.add_rowvec(
        x, g.gather_rows(g.param(ps, prefix + ".view"), {int64_t(v)}));
    kv.push_back(x);
  }
  const int mem = g.concat_rows(kv);

  nn::MhaOpts opts;
  opts.heads = spec.heads;
  const int attn = nn::mha(g, ps, Q, mem, prefix + ".attn", opts);
  const int masked = g.mul_rowmask_const(attn, vox.valid);

  FusedFeatureSet out;
  out.tokens = g.add(masked, vox.tokens);
  out.valid = vox.valid;
  out.n_valid = vox.n_valid;
  return out;
}

}  // namespace densebody::fuse
