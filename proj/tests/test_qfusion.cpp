#include <cmath>

#include "densebody/core/errors.hpp"
#include "densebody/core/nn.hpp"
#include "densebody/fuse/qfusion.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace densebody;
using core::Graph;
using core::ParamStore;
using core::Rng;
using core::Scalar;
using core::Tensor;
using fuse::FusedFeatureSet;
using fuse::FusionSpec;

namespace {

FusionSpec tiny_spec() {
  FusionSpec s;
  s.dim = 8;
  s.heads = 2;
  s.n_queries = 4;
  s.patches_per_view = 2;
  s.views = 2;
  return s;
}

// Hand-built voxel set: zero rows wherever valid is 0, matching the padding
// contract of the sparse encoder.
enc::VoxelFeatureSet make_vox(Graph& g, Tensor feats, Tensor pos,
                              const std::vector<int>& validity) {
  enc::VoxelFeatureSet v;
  v.n_valid = 0;
  v.valid = Tensor::zeros(feats.rows(), 1);
  for (size_t i = 0; i < validity.size(); ++i) {
    v.valid.at(int64_t(i), 0) = validity[i] ? 1.0 : 0.0;
    if (validity[i]) {
      ++v.n_valid;
    } else {
      for (int64_t c = 0; c < feats.cols(); ++c) feats.at(int64_t(i), c) = 0.0;
      for (int64_t c = 0; c < pos.cols(); ++c) pos.at(int64_t(i), c) = 0.0;
    }
  }
  v.coords = Tensor::zeros(feats.rows(), 3);
  v.pos_embed = std::move(pos);
  v.tokens = g.leaf(std::move(feats));
  return v;
}

void randomize(ParamStore& ps, const std::string& name, Rng& rng) {
  for (auto& x : ps.at(name).value.v) x = rng.normal(0.0, 0.3);
}

}  // namespace

TEST_CASE("form_queries: slot arithmetic of learnable plus positional") {
  FusionSpec spec = tiny_spec();
  spec.n_queries = 5;
  ParamStore ps;
  Rng rng(1);
  fuse::init_fusion(ps, "fuse", spec, rng);
  Rng drng(2);
  Tensor feats = testutil::random_tensor(5, 8, drng);
  Tensor pos = testutil::random_tensor(5, 8, drng);

  SUBCASE("zero positions give the learnable bank") {
    Graph g(false);
    auto vox = make_vox(g, feats, Tensor::zeros(5, 8), {1, 1, 1, 1, 1});
    const Tensor& q = g.val(fuse::form_queries(g, ps, vox, "fuse", spec));
    const Tensor& learn = ps.at("fuse.q_learn").value;
    for (size_t i = 0; i < q.v.size(); ++i) CHECK(q.v[i] == learn.v[i]);
  }

  SUBCASE("zero bank gives the positional embedding") {
    ParamStore zps;
    Rng r2(1);
    fuse::init_fusion(zps, "fuse", spec, r2);
    for (auto& x : zps.at("fuse.q_learn").value.v) x = 0.0;
    Graph g(false);
    auto vox = make_vox(g, feats, pos, {1, 1, 1, 1, 1});
    const Tensor& q = g.val(fuse::form_queries(g, zps, vox, "fuse", spec));
    for (int64_t r = 0; r < 5; ++r)
      for (int64_t c = 0; c < 8; ++c)
        CHECK(q.at(r, c) == vox.pos_embed.at(r, c));
  }

  SUBCASE("swapping voxel slots moves the positional part only") {
    Graph g(false);
    auto vox = make_vox(g, feats, pos, {1, 1, 1, 1, 1});
    Tensor swapped = vox.pos_embed;
    for (int64_t c = 0; c < 8; ++c)
      std::swap(swapped.at(1, c), swapped.at(3, c));
    auto vox2 = make_vox(g, feats, swapped, {1, 1, 1, 1, 1});
    const Tensor& q2 = g.val(fuse::form_queries(g, ps, vox2, "fuse", spec));
    const Tensor& learn = ps.at("fuse.q_learn").value;
    for (int64_t c = 0; c < 8; ++c) {
      CHECK(q2.at(1, c) == learn.at(1, c) + vox.pos_embed.at(3, c));
      CHECK(q2.at(3, c) == learn.at(3, c) + vox.pos_embed.at(1, c));
    }
  }

  SUBCASE("shape mismatch is a config error") {
    Graph g(false);
    auto bad = make_vox(g, Tensor::zeros(5, 8), Tensor::zeros(5, 6),
                        {1, 1, 1, 1, 1});
    CHECK_THROWS_AS(fuse::form_queries(g, ps, bad, "fuse", spec),
                    ConfigError);
    auto short_rows = make_vox(g, Tensor::zeros(4, 8), Tensor::zeros(4, 8),
                               {1, 1, 1, 1});
    CHECK_THROWS_AS(fuse::form_queries(g, ps, short_rows, "fuse", spec),
                    ConfigError);
  }
}

TEST_CASE("fuse: a singleton key reduces to its value projection") {
  FusionSpec spec = tiny_spec();
  spec.views = 1;
  spec.patches_per_view = 1;
  ParamStore ps;
  Rng rng(7);
  fuse::init_fusion(ps, "fuse", spec, rng);
  Rng drng(8);
  Tensor feats = testutil::random_tensor(4, 8, drng);
  Tensor pos = testutil::random_tensor(4, 8, drng);
  Tensor patch = testutil::random_tensor(1, 8, drng);

  Graph g(false);
  auto vox = make_vox(g, feats, pos, {1, 1, 1, 0});
  FusedFeatureSet fv =
      fuse::fuse(g, ps, vox, {g.leaf(patch)}, "fuse", spec);
  const Tensor& out = g.val(fv.tokens);
  const Tensor& fp = g.val(vox.tokens);

  // Pos_I and the view embedding initialize to zero, so the lone key/value
  // row is the patch token itself; softmax over one key is exactly 1.
  Graph h(false);
  const int vproj = nn::linear(h, ps, h.leaf(patch), "fuse.attn.v");
  const Tensor& owant =
      h.val(nn::linear(h, ps, vproj, "fuse.attn.o"));
  for (int64_t r = 0; r < 3; ++r)
    for (int64_t c = 0; c < 8; ++c)
      CHECK(out.at(r, c) == owant.at(0, c) + fp.at(r, c));
  for (int64_t c = 0; c < 8; ++c) CHECK(out.at(3, c) == 0.0);
  CHECK(fv.n_valid == 3);
  CHECK(fv.valid.at(3, 0) == 0.0);
}

TEST_CASE("fuse: reordering keys with their embeddings is invariant") {
  FusionSpec spec = tiny_spec();
  ParamStore ps;
  Rng rng(11);
  fuse::init_fusion(ps, "fuse", spec, rng);
  Rng prng(12);
  randomize(ps, "fuse.pos_i0", prng);
  randomize(ps, "fuse.pos_i1", prng);
  randomize(ps, "fuse.view", prng);

  Rng drng(13);
  Tensor feats = testutil::random_tensor(4, 8, drng);
  Tensor pos = testutil::random_tensor(4, 8, drng);
  Tensor ptA = testutil::random_tensor(2, 8, drng);
  Tensor ptB = testutil::random_tensor(2, 8, drng);

  Graph g1(false);
  auto vox1 = make_vox(g1, feats, pos, {1, 1, 1, 1});
  const Tensor out1 = g1.val(
      fuse::fuse(g1, ps, vox1, {g1.leaf(ptA), g1.leaf(ptB)}, "fuse", spec)
          .tokens);

  // Swap the two views along with their positional and id embeddings.
  std::swap(ps.at("fuse.pos_i0").value, ps.at("fuse.pos_i1").value);
  Tensor& view = ps.at("fuse.view").value;
  for (int64_t c = 0; c < 8; ++c) std::swap(view.at(0, c), view.at(1, c));

  Graph g2(false);
  auto vox2 = make_vox(g2, feats, pos, {1, 1, 1, 1});
  const Tensor out2 = g2.val(
      fuse::fuse(g2, ps, vox2, {g2.leaf(ptB), g2.leaf(ptA)}, "fuse", spec)
          .tokens);
  for (size_t i = 0; i < out1.v.size(); ++i)
    CHECK(out1.v[i] == doctest::Approx(out2.v[i]).epsilon(1e-6));
}

TEST_CASE("fuse: zero value path grounds the output at the spatial tokens") {
  FusionSpec spec = tiny_spec();
  ParamStore ps;
  Rng rng(17);
  fuse::init_fusion(ps, "fuse", spec, rng);
  for (Scalar x : ps.at("fuse.attn.o.b").value.v) CHECK(x == 0.0);
  for (Scalar x : ps.at("fuse.attn.v.b").value.v) CHECK(x == 0.0);
  Rng drng(18);
  Tensor feats = testutil::random_tensor(4, 8, drng);
  Tensor pos = testutil::random_tensor(4, 8, drng);
  Tensor ptA = testutil::random_tensor(2, 8, drng);
  Tensor ptB = testutil::random_tensor(2, 8, drng);

  SUBCASE("value projection weights zeroed") {
    for (auto& x : ps.at("fuse.attn.v.w").value.v) x = 0.0;
    Graph g(false);
    auto vox = make_vox(g, feats, pos, {1, 1, 1, 0});
    FusedFeatureSet fv =
        fuse::fuse(g, ps, vox, {g.leaf(ptA), g.leaf(ptB)}, "fuse", spec);
    const Tensor& out = g.val(fv.tokens);
    const Tensor& fp = g.val(vox.tokens);
    for (size_t i = 0; i < out.v.size(); ++i) CHECK(out.v[i] == fp.v[i]);
  }

  SUBCASE("zero patches and zero positional embeddings") {
    Graph g(false);
    auto vox = make_vox(g, feats, pos, {1, 1, 1, 0});
    FusedFeatureSet fv = fuse::fuse(
        g, ps, vox, {g.leaf(Tensor::zeros(2, 8)), g.leaf(Tensor::zeros(2, 8))},
        "fuse", spec);
    const Tensor& out = g.val(fv.tokens);
    const Tensor& fp = g.val(vox.tokens);
    for (size_t i = 0; i < out.v.size(); ++i) CHECK(out.v[i] == fp.v[i]);
  }
}

TEST_CASE("fuse: query rows are local to their own spatial slot") {
  FusionSpec spec = tiny_spec();
  spec.n_queries = 5;
  ParamStore ps;
  Rng rng(23);
  fuse::init_fusion(ps, "fuse", spec, rng);
  Rng drng(24);
  Tensor feats = testutil::random_tensor(5, 8, drng);
  Tensor pos = testutil::random_tensor(5, 8, drng);
  Tensor ptA = testutil::random_tensor(2, 8, drng);
  Tensor ptB = testutil::random_tensor(2, 8, drng);

  Graph g1(false);
  auto vox1 = make_vox(g1, feats, pos, {1, 1, 1, 1, 1});
  const Tensor out1 = g1.val(
      fuse::fuse(g1, ps, vox1, {g1.leaf(ptA), g1.leaf(ptB)}, "fuse", spec)
          .tokens);

  Tensor bumped = feats;
  for (int64_t c = 0; c < 8; ++c) bumped.at(3, c) += 0.7;
  Graph g2(false);
  auto vox2 = make_vox(g2, bumped, pos, {1, 1, 1, 1, 1});
  const Tensor out2 = g2.val(
      fuse::fuse(g2, ps, vox2, {g2.leaf(ptA), g2.leaf(ptB)}, "fuse", spec)
          .tokens);

  Scalar row3 = 0;
  for (int64_t r = 0; r < 5; ++r)
    for (int64_t c = 0; c < 8; ++c) {
      if (r == 3)
        row3 = std::max(row3, std::abs(out1.at(r, c) - out2.at(r, c)));
      else
        CHECK(out1.at(r, c) == out2.at(r, c));
    }
  CHECK(row3 > 0.0);
}

TEST_CASE("fuse: view count and shape validation") {
  FusionSpec spec = tiny_spec();
  ParamStore ps;
  Rng rng(29);
  fuse::init_fusion(ps, "fuse", spec, rng);
  Graph g(false);
  auto vox = make_vox(g, Tensor::zeros(4, 8), Tensor::zeros(4, 8),
                      {1, 1, 0, 0});
  CHECK_THROWS_AS(
      fuse::fuse(g, ps, vox, {g.leaf(Tensor::zeros(2, 8))}, "fuse", spec),
      InputError);
  CHECK_THROWS_AS(
      fuse::fuse(g, ps, vox,
                 {g.leaf(Tensor::zeros(2, 8)), g.leaf(Tensor::zeros(3, 8))},
                 "fuse", spec),
      InputError);
}

TEST_CASE("fuse: gradients match finite differences") {
  FusionSpec spec = tiny_spec();
  spec.dim = 6;
  ParamStore ps;
  Rng rng(31);
  fuse::init_fusion(ps, "fuse", spec, rng);
  Rng prng(32);
  randomize(ps, "fuse.pos_i0", prng);
  randomize(ps, "fuse.pos_i1", prng);
  randomize(ps, "fuse.view", prng);
  ps.create_normal("pt0", {2, 6}, 0.4, prng);
  ps.create_normal("pt1", {2, 6}, 0.4, prng);

  Rng drng(33);
  Tensor feats = testutil::random_tensor(4, 6, drng);
  Tensor pos = testutil::random_tensor(4, 6, drng);
  Tensor wmat = testutil::random_tensor(4, 6, drng);

  auto build = [&](Graph& g, ParamStore& p) {
    auto vox = make_vox(g, feats, pos, {1, 1, 1, 0});
    FusedFeatureSet fv =
        fuse::fuse(g, p, vox, {g.param(p, "pt0"), g.param(p, "pt1")}, "fuse",
                   spec);
    return g.sum_all(g.mul(fv.tokens, g.leaf(wmat)));
  };
  CHECK(testutil::gradcheck(ps, build) <= 1e-4);
}
