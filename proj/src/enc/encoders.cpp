#include "densebody/enc/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "densebody/core/errors.hpp"
#include "densebody/core/nn.hpp"

namespace densebody::enc {

namespace {

using Cell = std::array<int32_t, 3>;

constexpr Scalar kTwoPi = 6.283185307179586476925286766559;
constexpr Scalar kLambdaMax = 4.0;  // meters
constexpr Scalar kLambdaMin = 0.1;

int32_t floor_div2(int32_t v) { return v >= 0 ? v / 2 : (v - 1) / 2; }

int find_cell(const std::vector<Cell>& cells, const Cell& c) {
  auto it = std::lower_bound(cells.begin(), cells.end(), c);
  if (it == cells.end() || *it != c) return -1;
  return int(it - cells.begin());
}

std::vector<Cell> downsample2(const std::vector<Cell>& cells) {
  std::vector<Cell> out;
  out.reserve(cells.size());
  for (const Cell& c : cells)
    out.push_back({floor_div2(c[0]), floor_div2(c[1]), floor_div2(c[2])});
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// One 3x3x3 sparse convolution layer (no activation). Kernel offset k maps
// to weights "<prefix>.k00".."<prefix>.k26"; bias "<prefix>.b".
int sparse_conv(Graph& g, ParamStore& ps, int x,
                const std::vector<Cell>& in_cells,
                const std::vector<Cell>& out_cells, int stride,
                const std::string& prefix, int64_t c_out) {
  const int64_t n_out = int64_t(out_cells.size());
  int acc = -1;
  for (int k = 0; k < 27; ++k) {
    const int32_t dx = k / 9 - 1;
    const int32_t dy = (k / 3) % 3 - 1;
    const int32_t dz = k % 3 - 1;
    std::vector<int64_t> gi, si;
    for (int64_t i = 0; i < n_out; ++i) {
      const Cell& oc = out_cells[size_t(i)];
      const Cell probe{oc[0] * stride + dx, oc[1] * stride + dy,
                       oc[2] * stride + dz};
      const int j = find_cell(in_cells, probe);
      if (j < 0) continue;
      gi.push_back(j);
      si.push_back(i);
    }
    if (gi.empty()) continue;
    char name[8];
    std::snprintf(name, sizeof name, ".k%02d", k);
    const int w = g.param(ps, prefix + name);
    const int part = g.scatter_add_rows(
        g.matmul(g.gather_rows(x, std::move(gi)), w), std::move(si), n_out);
    acc = acc < 0 ? part : g.add(acc, part);
  }
  if (acc < 0) acc = g.leaf(Tensor::zeros(n_out, c_out));
  return g.add_rowvec(acc, g.param(ps, prefix + ".b"));
}

void init_conv_stage(ParamStore& ps, const std::string& prefix, int64_t c_in,
                     int64_t c_out, Rng& rng) {
  const Scalar stddev = std::sqrt(2.0 / (27.0 * Scalar(c_in)));
  for (int k = 0; k < 27; ++k) {
    char name[8];
    std::snprintf(name, sizeof name, ".k%02d", k);
    ps.create_normal(prefix + name, {c_in, c_out}, stddev, rng);
  }
  ps.create_zeros(prefix + ".b", {1, c_out});
}

// Farthest-point subsampling over row coords; seeds at index 0, ties go to
// the lowest index. Returns `budget` ascending indices.
std::vector<int64_t> fps_select(const std::vector<std::array<Scalar, 3>>& pts,
                                int budget) {
  const int n = int(pts.size());
  std::vector<Scalar> best(static_cast<size_t>(n));
  std::vector<char> taken(size_t(n), 0);
  std::vector<int64_t> keep;
  keep.reserve(size_t(budget));
  auto add = [&](int idx) {
    taken[size_t(idx)] = 1;
    keep.push_back(idx);
    for (int i = 0; i < n; ++i) {
      const Scalar ddx = pts[size_t(i)][0] - pts[size_t(idx)][0];
      const Scalar ddy = pts[size_t(i)][1] - pts[size_t(idx)][1];
      const Scalar ddz = pts[size_t(i)][2] - pts[size_t(idx)][2];
      const Scalar d = ddx * ddx + ddy * ddy + ddz * ddz;
      if (keep.size() == 1 || d < best[size_t(i)]) best[size_t(i)] = d;
    }
  };
  add(0);
  while (int(keep.size()) < budget) {
    int pick = -1;
    Scalar far = -1.0;
    for (int i = 0; i < n; ++i) {
      if (taken[size_t(i)]) continue;
      if (best[size_t(i)] > far) {
        far = best[size_t(i)];
        pick = i;
      }
    }
    add(pick);
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

bool starts_with(const std::string& s, const std::string& p) {
  return s.rfind(p, 0) == 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Voxelization

Voxels voxelize(const std::vector<std::array<float, 3>>& cloud,
                Scalar voxel_size) {
  if (!(voxel_size > 0.0))
    throw ConfigError("voxel_size must be positive");
  std::map<Cell, std::vector<std::array<Scalar, 3>>> bins;
  for (const auto& p : cloud) {
    Cell c;
    std::array<Scalar, 3> off;
    for (int a = 0; a < 3; ++a) {
      const Scalar u = Scalar(p[size_t(a)]) / voxel_size;
      const Scalar f = std::floor(u);
      c[size_t(a)] = int32_t(f);
      off[size_t(a)] = u - f - 0.5;
    }
    bins[c].push_back(off);
  }
  Voxels out;
  out.cells.reserve(bins.size());
  out.feats = Tensor::zeros(int64_t(bins.size()), 4);
  int64_t row = 0;
  for (auto& [cell, offs] : bins) {
    out.cells.push_back(cell);
    // Sort before summing so the mean is bit-exact under input permutation.
    std::sort(offs.begin(), offs.end());
    std::array<Scalar, 3> sum{0.0, 0.0, 0.0};
    for (const auto& o : offs)
      for (int a = 0; a < 3; ++a) sum[size_t(a)] += o[size_t(a)];
    out.feats.at(row, 0) = 1.0;
    for (int a = 0; a < 3; ++a)
      out.feats.at(row, 1 + a) = sum[size_t(a)] / Scalar(offs.size());
    ++row;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sine-cosine embedding

Tensor sincos_embed(const Tensor& coords, int dim) {
  if (dim <= 0 || dim % 6 != 0)
    throw ConfigError("sincos embedding width must be a positive "
                            "multiple of 6, got " + std::to_string(dim));
  if (coords.cols() != 3)
    throw InputError("sincos_embed expects M x 3 coords");
  const int pairs = dim / 6;
  std::vector<Scalar> omega(static_cast<size_t>(pairs));
  for (int j = 0; j < pairs; ++j) {
    const Scalar t = pairs > 1 ? Scalar(j) / Scalar(pairs - 1) : 0.0;
    const Scalar lambda = kLambdaMax * std::pow(kLambdaMin / kLambdaMax, t);
    omega[size_t(j)] = kTwoPi / lambda;
  }
  Tensor out = Tensor::zeros(coords.rows(), dim);
  for (int64_t r = 0; r < coords.rows(); ++r)
    for (int a = 0; a < 3; ++a) {
      const Scalar v = coords.at(r, a);
      for (int j = 0; j < pairs; ++j) {
        const Scalar ph = omega[size_t(j)] * v;
        out.at(r, a * 2 * pairs + 2 * j) = std::sin(ph);
        out.at(r, a * 2 * pairs + 2 * j + 1) = std::cos(ph);
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Sparse voxel encoder

void init_sparse_encoder(ParamStore& ps, const std::string& prefix,
                         const SparseEncSpec& spec, Rng& rng) {
  init_conv_stage(ps, prefix + ".s0", 4, spec.c0, rng);
  init_conv_stage(ps, prefix + ".s1", spec.c0, spec.c1, rng);
  init_conv_stage(ps, prefix + ".s2", spec.c1, spec.dim, rng);
  nn::init_linear(ps, prefix + ".proj", spec.dim, spec.dim, rng);
}

VoxelFeatureSet sparse_encode(Graph& g, ParamStore& ps, const Voxels& vox,
                              const std::string& prefix,
                              const SparseEncSpec& spec) {
  const int M = spec.max_tokens;
  VoxelFeatureSet out;
  out.coords = Tensor::zeros(M, 3);
  out.pos_embed = Tensor::zeros(M, spec.dim);
  out.valid = Tensor::zeros(M, 1);
  if (vox.cells.empty()) {
    out.tokens = g.leaf(Tensor::zeros(M, spec.dim));
    return out;
  }

  int x = g.leaf(vox.feats);
  x = g.gelu(sparse_conv(g, ps, x, vox.cells, vox.cells, 1, prefix + ".s0",
                         spec.c0));
  const std::vector<Cell> mid = downsample2(vox.cells);
  x = g.gelu(
      sparse_conv(g, ps, x, vox.cells, mid, 2, prefix + ".s1", spec.c1));
  const std::vector<Cell> coarse = downsample2(mid);
  x = g.gelu(
      sparse_conv(g, ps, x, mid, coarse, 2, prefix + ".s2", spec.dim));
  x = nn::linear(g, ps, x, prefix + ".proj");

  // Coarse cell c covers fine cells [4c, 4c+3]; its center in meters.
  const Scalar pitch = 4.0 * spec.voxel_size;
  std::vector<std::array<Scalar, 3>> centers(coarse.size());
  for (size_t i = 0; i < coarse.size(); ++i)
    for (int a = 0; a < 3; ++a)
      centers[i][size_t(a)] =
          Scalar(coarse[i][size_t(a)]) * pitch + 0.5 * pitch;

  std::vector<int64_t> keep;
  if (int(coarse.size()) <= M) {
    keep.resize(coarse.size());
    for (size_t i = 0; i < keep.size(); ++i) keep[i] = int64_t(i);
  } else {
    keep = fps_select(centers, M);
  }
  out.n_valid = int(keep.size());

  int tok = g.gather_rows(x, keep);
  if (out.n_valid < M)
    tok = g.concat_rows(
        {tok, g.leaf(Tensor::zeros(M - out.n_valid, spec.dim))});
  out.tokens = tok;

  Tensor vc = Tensor::zeros(out.n_valid, 3);
  for (int i = 0; i < out.n_valid; ++i)
    for (int a = 0; a < 3; ++a) {
      const Scalar v = centers[size_t(keep[size_t(i)])][size_t(a)];
      vc.at(i, a) = v;
      out.coords.at(i, a) = v;
    }
  const int embed_dim = spec.dim / 6 * 6;
  if (embed_dim <= 0)
    throw ConfigError("feature_dim too small for sincos embedding");
  const Tensor pe = sincos_embed(vc, embed_dim);
  for (int i = 0; i < out.n_valid; ++i) {
    for (int c = 0; c < embed_dim; ++c)
      out.pos_embed.at(i, c) = pe.at(i, c);
    out.valid.at(i, 0) = 1.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch encoder

EncoderMode encoder_mode_from(const std::string& name) {
  if (name == "frozen") return EncoderMode::frozen;
  if (name == "lora") return EncoderMode::lora;
  if (name == "full") return EncoderMode::full;
  throw ConfigError("unknown encoder_mode '" + name +
                          "' (expected frozen|lora|full)");
}

const char* to_string(EncoderMode m) {
  switch (m) {
    case EncoderMode::frozen: return "frozen";
    case EncoderMode::lora: return "lora";
    case EncoderMode::full: return "full";
  }
  return "?";
}

void init_patch_backbone(ParamStore& ps, const std::string& prefix,
                         const PatchEncSpec& spec, Rng& rng, bool with_lora) {
  if (spec.image_h % spec.patch != 0 || spec.image_w % spec.patch != 0)
    throw ConfigError("patch_size must divide the image dimensions");
  nn::init_linear(ps, prefix + ".embed", spec.patch_inputs(), spec.dim, rng);
  ps.create_normal(prefix + ".pos", {spec.patches_per_view(), spec.dim}, 0.02,
                   rng);
  for (int l = 0; l < spec.layers; ++l)
    nn::init_encoder_block(ps, prefix + ".blk" + std::to_string(l), spec.dim,
                           spec.hidden, rng);
  nn::init_layernorm(ps, prefix + ".ln_f", spec.dim);
  nn::init_linear(ps, prefix + ".head", spec.dim, spec.dim, rng);
  // Adapters are created after every base draw so that the base weights are
  // identical whether or not LoRA is present.
  if (with_lora)
    for (int l = 0; l < spec.layers; ++l)
      nn::init_mha_lora(ps, prefix + ".blk" + std::to_string(l) + ".attn",
                        spec.dim, spec.lora_rank, rng);
}

void init_patch_pretext(ParamStore& ps, const std::string& prefix,
                        const PatchEncSpec& spec, Rng& rng) {
  nn::init_linear(ps, prefix + ".pretext", spec.dim, 4, rng);
}

void apply_encoder_mode(ParamStore& ps, const std::string& prefix,
                        EncoderMode mode) {
  const std::string root = prefix + ".";
  if (mode == EncoderMode::full) {
    ps.set_trainable(root, true);
    return;
  }
  ps.set_trainable(root, false);
  ps.set_trainable(prefix + ".head.", true);
  if (mode == EncoderMode::lora) {
    bool any = false;
    for (const auto& name : ps.names()) {
      if (!starts_with(name, root)) continue;
      if (name.find(".lora_") == std::string::npos) continue;
      ps.at(name).trainable = true;
      any = true;
    }
    if (!any)
      throw ConfigError("encoder_mode is lora but no adapters exist "
                              "under '" + prefix + "'");
  }
}

Tensor patch_pixels(const sim::Image& img, const PatchEncSpec& spec) {
  if (img.h != spec.image_h || img.w != spec.image_w ||
      img.rgb.size() != size_t(img.h) * size_t(img.w) * 3)
    throw InputError("image does not match the patch encoder layout");
  const int pw = spec.image_w / spec.patch;
  Tensor out = Tensor::zeros(spec.patches_per_view(), spec.patch_inputs());
  for (int64_t p = 0; p < out.rows(); ++p) {
    const int py = int(p) / pw, px = int(p) % pw;
    for (int dy = 0; dy < spec.patch; ++dy)
      for (int dx = 0; dx < spec.patch; ++dx)
        for (int c = 0; c < 3; ++c) {
          const int y = py * spec.patch + dy, x = px * spec.patch + dx;
          out.at(p, (dy * spec.patch + dx) * 3 + c) =
              Scalar(img.rgb[size_t((y * img.w + x) * 3 + c)]) / 255.0;
        }
  }
  return out;
}

int patch_backbone(Graph& g, ParamStore& ps, const Tensor& pixels,
                   EncoderMode mode, const std::string& prefix,
                   const PatchEncSpec& spec) {
  nn::MhaOpts opts;
  opts.heads = spec.heads;
  if (mode == EncoderMode::lora) {
    if (!ps.has(prefix + ".blk0.attn.q.lora_a"))
      throw ConfigError("encoder_mode is lora but the backbone has no "
                              "adapters");
    opts.lora_qv = true;
    opts.lora_scale = 2.0 / Scalar(spec.lora_rank);
  }
  int x = nn::linear(g, ps, g.leaf(pixels), prefix + ".embed");
  x = g.add(x, g.param(ps, prefix + ".pos"));
  for (int l = 0; l < spec.layers; ++l)
    x = nn::encoder_block(g, ps, x, prefix + ".blk" + std::to_string(l),
                          opts);
  return nn::layernorm(g, ps, x, prefix + ".ln_f");
}

int patch_encode_view(Graph& g, ParamStore& ps, const Tensor& pixels,
                      EncoderMode mode, const std::string& prefix,
                      const PatchEncSpec& spec) {
  return nn::linear(g, ps, patch_backbone(g, ps, pixels, mode, prefix, spec),
                    prefix + ".head");
}

std::array<int, kNumViews> patch_encode(
    Graph& g, ParamStore& ps, const std::array<sim::Image, kNumViews>& images,
    EncoderMode mode, const std::string& prefix, const PatchEncSpec& spec) {
  std::array<int, kNumViews> out{};
  for (int v = 0; v < kNumViews; ++v)
    out[size_t(v)] = patch_encode_view(g, ps, patch_pixels(images[size_t(v)],
                                                           spec),
                                       mode, prefix, spec);
  return out;
}

int patch_pretext(Graph& g, ParamStore& ps, int backbone_tokens,
                  const std::string& prefix) {
  return nn::linear(g, ps, backbone_tokens, prefix + ".pretext");
}

// ---------------------------------------------------------------------------
// State encoder

void init_state_encoder(ParamStore& ps, const std::string& prefix,
                        const StateEncSpec& spec, Rng& rng) {
  for (int b = 1; b < morph::kNumBlocks; ++b)
    nn::init_linear(ps, prefix + ".b" + std::to_string(b - 1),
                    morph::kLayout[size_t(b)].width, spec.dim, rng);
  ps.create_normal(prefix + ".mask", {morph::kNumBlocks - 1, spec.dim}, 0.02,
                   rng);
  nn::init_mlp(ps, prefix + ".mlp", (morph::kNumBlocks - 1) * spec.dim,
               spec.hidden, spec.dim, rng);
}

int encode_state(Graph& g, ParamStore& ps, const morph::RobotState& s,
                 bool training, Rng& rng, const std::string& prefix,
                 const StateEncSpec& spec) {
  std::vector<int> parts;
  parts.reserve(morph::kNumBlocks - 1);
  for (int b = 1; b < morph::kNumBlocks; ++b) {
    const morph::Block& blk = morph::kLayout[size_t(b)];
    // One draw per block whenever training, so randomness consumption does
    // not depend on the validity mask.
    const Scalar u = training ? rng.uniform() : 1.0;
    const bool masked =
        s.mask[size_t(b)] == 0 || (training && u < spec.mask_prob);
    if (masked) {
      parts.push_back(
          g.gather_rows(g.param(ps, prefix + ".mask"), {int64_t(b - 1)}));
      continue;
    }
    Tensor t = Tensor::zeros(1, blk.width);
    for (int w = 0; w < blk.width; ++w)
      t.at(0, w) = s.values[size_t(blk.offset - 3 + w)];
    parts.push_back(g.gelu(nn::linear(
        g, ps, g.leaf(std::move(t)), prefix + ".b" + std::to_string(b - 1))));
  }
  return nn::mlp(g, ps, g.concat_cols(parts), prefix + ".mlp");
}

}  // namespace densebody::enc
