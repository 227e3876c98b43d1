#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "densebody/core/errors.hpp"
#include "densebody/core/nn.hpp"
#include "densebody/head/densehead.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace densebody;
using core::Graph;
using core::ParamStore;
using core::Rng;
using core::Scalar;
using core::Tensor;
using fuse::FusedFeatureSet;
using head::ActionSequence;
using head::DenseHeadSpec;
using head::DecoderMemory;

namespace {

DenseHeadSpec tiny_spec(int horizon = 16) {
  DenseHeadSpec s;
  s.horizon = horizon;
  s.dim = 16;
  s.hidden = 24;
  s.layers = 2;
  s.heads = 2;
  return s;
}

// A fused token set plus state feature built from leaves (no encoder stack
// needed to exercise the head).
struct MemoryInputs {
  FusedFeatureSet fv;
  int fs = -1;
};

MemoryInputs make_inputs(Graph& g, int n_tokens, int n_valid, int dim,
                         Rng& rng) {
  Tensor tok = testutil::random_tensor(n_tokens, dim, rng, 0.5);
  Tensor valid = Tensor::zeros(n_tokens, 1);
  for (int i = 0; i < n_valid; ++i) valid.at(i, 0) = 1.0;
  for (int i = n_valid; i < n_tokens; ++i)
    for (int c = 0; c < dim; ++c) tok.at(i, c) = 0.0;
  MemoryInputs m;
  m.fv.tokens = g.leaf(tok);
  m.fv.valid = valid;
  m.fv.n_valid = n_valid;
  m.fs = g.leaf(testutil::random_tensor(1, dim, rng, 0.5));
  return m;
}

// One action row with given fill on linear dims and unit quaternions.
Tensor constant_sequence(int T, Scalar fill, std::array<Scalar, 4> lq = {1, 0, 0, 0},
                         std::array<Scalar, 4> rq = {1, 0, 0, 0}) {
  Tensor t = Tensor::zeros(T, morph::kActionDims);
  for (int i = 0; i < T; ++i) {
    for (int c = 0; c < morph::kActionDims; ++c) t.at(i, c) = fill;
    for (int k = 0; k < 4; ++k) {
      t.at(i, morph::kLeftQuatOffset + k) = lq[size_t(k)];
      t.at(i, morph::kRightQuatOffset + k) = rq[size_t(k)];
    }
  }
  return t;
}

// Random action sequence with proper unit w>=0 quats.
Tensor random_sequence(int T, Rng& rng, Scalar s = 0.4) {
  Tensor t = testutil::random_tensor(T, morph::kActionDims, rng, s);
  for (int i = 0; i < T; ++i) {
    for (int off : {morph::kLeftQuatOffset, morph::kRightQuatOffset}) {
      Scalar n2 = 0;
      for (int k = 0; k < 4; ++k) n2 += t.at(i, off + k) * t.at(i, off + k);
      const Scalar inv =
          (t.at(i, off) < 0 ? -1.0 : 1.0) / std::sqrt(std::max(n2, 1e-12));
      for (int k = 0; k < 4; ++k) t.at(i, off + k) *= inv;
    }
  }
  return t;
}

}  // namespace

TEST_CASE("level schedule matches brute-force enumeration") {
  for (int T : {2, 4, 8, 16, 32}) {
    int N = 0;
    while ((1 << N) < T) ++N;
    CHECK(head::num_levels(T) == N);
    std::vector<int64_t> prev;
    for (int n = 0; n <= N; ++n) {
      std::vector<int64_t> expect;
      for (int i = 0; i < T; ++i)
        if (i % (T / (1 << n)) == 0) expect.push_back(i);
      const auto got = head::level_index_set(T, n);
      CHECK(got == expect);
      CHECK(got.size() == size_t(1) << n);
      // nesting: every previous index appears again
      for (int64_t i : prev)
        CHECK(std::find(got.begin(), got.end(), i) != got.end());
      prev = got;
    }
    CHECK(head::level_index_set(T, 0) == std::vector<int64_t>{0});
    CHECK(head::level_index_set(T, N).size() == size_t(T));
  }

  CHECK(head::level_index_set(8, 0) == std::vector<int64_t>{0});
  CHECK(head::level_index_set(8, 2) == std::vector<int64_t>{0, 2, 4, 6});
  std::vector<int64_t> full(16);
  for (int i = 0; i < 16; ++i) full[size_t(i)] = i;
  CHECK(head::level_index_set(16, 4) == full);

  CHECK_THROWS_AS(head::num_levels(12), ConfigError);
  CHECK_THROWS_AS(head::num_levels(0), ConfigError);
  CHECK_THROWS_AS(head::level_index_set(12, 0), ConfigError);
  CHECK_THROWS_AS(head::level_index_set(8, -1), RangeError);
  CHECK_THROWS_AS(head::level_index_set(8, 4), RangeError);

  const std::vector<int> origin16 = {0, 4, 3, 4, 2, 4, 3, 4,
                                     1, 4, 3, 4, 2, 4, 3, 4};
  for (int i = 0; i < 16; ++i)
    CHECK(head::level_of_origin(16, i) == origin16[size_t(i)]);
  CHECK_THROWS_AS(head::level_of_origin(16, 16), RangeError);
  CHECK_THROWS_AS(head::level_of_origin(16, -1), RangeError);
}

TEST_CASE("upsample interpolates midpoints and keeps constants fixed") {
  // constant input -> constant output (exact on linear dims, unit quats kept)
  Tensor c = constant_sequence(4, 0.3);
  Tensor up = head::upsample(c, 16);
  REQUIRE(up.rows() == 8);
  REQUIRE(up.cols() == morph::kActionDims);
  for (int i = 0; i < 8; ++i)
    for (int k = 0; k < morph::kActionDims; ++k)
      CHECK(up.at(i, k) == doctest::Approx(c.at(0, k)).epsilon(1e-12));

  // midpoint on linear dims, copy on even rows
  Rng rng(7);
  Tensor a = random_sequence(2, rng);
  Tensor u = head::upsample(a, 8);
  REQUIRE(u.rows() == 4);
  for (int c2 = 0; c2 < morph::kActionDims; ++c2) {
    CHECK(u.at(0, c2) == a.at(0, c2));  // even rows copy bitwise
    CHECK(u.at(2, c2) == a.at(1, c2));
    if (!morph::is_quat_dim(c2)) {
      CHECK(u.at(1, c2) ==
            doctest::Approx(0.5 * (a.at(0, c2) + a.at(1, c2))));
      CHECK(u.at(3, c2) == doctest::Approx(a.at(1, c2)));  // copy left
    }
  }
  // interpolated quats are unit with w >= 0
  for (int i : {1, 3}) {
    for (int off : {morph::kLeftQuatOffset, morph::kRightQuatOffset}) {
      Scalar n2 = 0;
      for (int k = 0; k < 4; ++k) n2 += u.at(i, off + k) * u.at(i, off + k);
      CHECK(n2 == doctest::Approx(1.0).epsilon(1e-10));
      CHECK(u.at(i, off) >= 0.0);
    }
  }

  // single row doubles to two equal rows
  Tensor one = constant_sequence(1, -0.25);
  Tensor two = head::upsample(one, 4);
  REQUIRE(two.rows() == 2);
  for (int k = 0; k < morph::kActionDims; ++k) {
    CHECK(two.at(0, k) == one.at(0, k));
    CHECK(two.at(1, k) == doctest::Approx(one.at(0, k)).epsilon(1e-12));
  }

  // antipodal neighbors cancel: fall back to the left quaternion
  Tensor anti = constant_sequence(2, 0.1, {0, 1, 0, 0}, {1, 0, 0, 0});
  for (int k = 0; k < 4; ++k)
    anti.at(1, morph::kLeftQuatOffset + k) = (k == 1 ? -1.0 : 0.0);
  Tensor ua = head::upsample(anti, 8);
  CHECK(ua.at(1, morph::kLeftQuatOffset + 0) == 0.0);
  CHECK(ua.at(1, morph::kLeftQuatOffset + 1) == 1.0);
  CHECK(ua.at(1, morph::kLeftQuatOffset + 2) == 0.0);
  CHECK(ua.at(1, morph::kLeftQuatOffset + 3) == 0.0);

  // w < 0 midpoints are flipped into the canonical hemisphere
  Tensor neg = constant_sequence(2, 0.0, {-0.6, 0.8, 0, 0});
  Tensor un = head::upsample(neg, 8);
  CHECK(un.at(1, morph::kLeftQuatOffset + 0) == doctest::Approx(0.6));
  CHECK(un.at(1, morph::kLeftQuatOffset + 1) == doctest::Approx(-0.8));

  CHECK_THROWS_AS(head::upsample(Tensor::zeros(3, 25), 16), InputError);
  CHECK_THROWS_AS(head::upsample(Tensor::zeros(8, 25), 8), InputError);
  CHECK_THROWS_AS(head::upsample(Tensor::zeros(2, 24), 16), InputError);
  CHECK_THROWS_AS(head::upsample(Tensor::zeros(2, 25), 12), ConfigError);
}

TEST_CASE("generation runs coarse to fine with log2(T)+1 decoder calls") {
  const DenseHeadSpec spec = tiny_spec(16);
  ParamStore ps;
  Rng rng(101);
  head::init_dense_head(ps, "head", spec, rng);

  Graph g(false);
  Rng in_rng(55);
  MemoryInputs m = make_inputs(g, 6, 5, spec.dim, in_rng);
  ActionSequence seq = head::generate(g, ps, m.fv, m.fs, "head", spec);

  CHECK(seq.decoder_calls == 5);
  REQUIRE(seq.actions.rows() == 16);
  REQUIRE(seq.actions.cols() == morph::kActionDims);
  const std::vector<int> origin16 = {0, 4, 3, 4, 2, 4, 3, 4,
                                     1, 4, 3, 4, 2, 4, 3, 4};
  CHECK(seq.level_of_origin == origin16);
  for (Scalar v : seq.actions.v) CHECK(std::isfinite(v));

  // bitwise deterministic given the same params and inputs
  Graph g2(false);
  Rng in_rng2(55);
  MemoryInputs m2 = make_inputs(g2, 6, 5, spec.dim, in_rng2);
  ActionSequence seq2 = head::generate(g2, ps, m2.fv, m2.fs, "head", spec);
  for (size_t i = 0; i < seq.actions.v.size(); ++i)
    CHECK(seq.actions.v[i] == seq2.actions.v[i]);

  // shorter horizon: T=4 -> 3 calls
  DenseHeadSpec s4 = tiny_spec(4);
  ParamStore ps4;
  Rng rng4(202);
  head::init_dense_head(ps4, "head", s4, rng4);
  Graph g4(false);
  Rng in_rng4(7);
  MemoryInputs m4 = make_inputs(g4, 5, 5, s4.dim, in_rng4);
  ActionSequence sq4 = head::generate(g4, ps4, m4.fv, m4.fs, "head", s4);
  CHECK(sq4.decoder_calls == 3);
  CHECK(sq4.actions.rows() == 4);
  CHECK(sq4.level_of_origin == std::vector<int>{0, 2, 1, 2});

  // a store without the head's parameters cannot generate
  ParamStore empty;
  Graph ge(false);
  Rng in_rng5(9);
  MemoryInputs me = make_inputs(ge, 6, 5, spec.dim, in_rng5);
  CHECK_THROWS_AS(head::generate(ge, empty, me.fv, me.fs, "head", spec),
                  CheckpointError);
}

TEST_CASE("generation is invariant to fused token order") {
  const DenseHeadSpec spec = tiny_spec(8);
  ParamStore ps;
  Rng rng(303);
  head::init_dense_head(ps, "head", spec, rng);

  Rng in_rng(77);
  Tensor tok = testutil::random_tensor(5, spec.dim, in_rng, 0.5);
  Tensor fs_row = testutil::random_tensor(1, spec.dim, in_rng, 0.5);
  Tensor valid = Tensor::zeros(5, 1);
  for (int i = 0; i < 4; ++i) valid.at(i, 0) = 1.0;
  for (int c = 0; c < spec.dim; ++c) tok.at(4, c) = 0.0;

  auto run = [&](const std::vector<int>& order) {
    Graph g(false);
    Tensor pt = Tensor::zeros(5, spec.dim);
    Tensor pv = Tensor::zeros(5, 1);
    for (int i = 0; i < 5; ++i) {
      pv.at(i, 0) = valid.at(order[size_t(i)], 0);
      for (int c = 0; c < spec.dim; ++c)
        pt.at(i, c) = tok.at(order[size_t(i)], c);
    }
    FusedFeatureSet fv;
    fv.tokens = g.leaf(pt);
    fv.valid = pv;
    fv.n_valid = 4;
    return head::generate(g, ps, fv, g.leaf(fs_row), "head", spec).actions;
  };

  Tensor base = run({0, 1, 2, 3, 4});
  Tensor perm = run({3, 0, 4, 1, 2});
  for (size_t i = 0; i < base.v.size(); ++i)
    CHECK(base.v[i] == doctest::Approx(perm.v[i]).epsilon(1e-6));
}

TEST_CASE("refinement attends bidirectionally and across levels") {
  const DenseHeadSpec spec = tiny_spec(8);
  ParamStore ps;
  Rng rng(404);
  head::init_dense_head(ps, "head", spec, rng);
  Rng in_rng(21);
  Tensor tok = testutil::random_tensor(4, spec.dim, in_rng, 0.5);
  Tensor fs_row = testutil::random_tensor(1, spec.dim, in_rng, 0.5);
  Tensor valid = Tensor::zeros(4, 1);
  for (int i = 0; i < 4; ++i) valid.at(i, 0) = 1.0;

  auto refine_with = [&](const Tensor& acts, int level) {
    Graph g(false);
    FusedFeatureSet fv;
    fv.tokens = g.leaf(tok);
    fv.valid = valid;
    fv.n_valid = 4;
    DecoderMemory mem =
        head::project_memory(g, ps, fv, g.leaf(fs_row), "head", spec);
    return g.val(
        head::refine(g, ps, mem, g.leaf(acts), level, "head", spec));
  };

  // perturbing the final timestep changes the prediction at timestep 0
  Rng arng(5);
  Tensor acts = random_sequence(8, arng);
  Tensor bumped = acts;
  bumped.at(7, 0) += 0.5;
  Tensor p1 = refine_with(acts, 3);
  Tensor p2 = refine_with(bumped, 3);
  Scalar diff0 = 0;
  for (int c = 0; c < morph::kActionDims; ++c)
    diff0 = std::max(diff0, std::abs(p1.at(0, c) - p2.at(0, c)));
  CHECK(diff0 > 1e-9);

  // a different coarse initialization changes the predicted residuals
  Rng brng(6);
  Tensor a1 = random_sequence(2, brng);
  Tensor a2 = random_sequence(2, brng);
  Tensor r1 = refine_with(a1, 1);
  Tensor r2 = refine_with(a2, 1);
  Scalar dres = 0;
  for (int i = 0; i < 2; ++i)
    for (int c = 0; c < morph::kActionDims; ++c)
      dres = std::max(dres, std::abs((r1.at(i, c) - a1.at(i, c)) -
                                     (r2.at(i, c) - a2.at(i, c))));
  CHECK(dres > 1e-9);

  // level-0 runs on the start token only; level >= 1 needs actions
  {
    Graph g(false);
    FusedFeatureSet fv;
    fv.tokens = g.leaf(tok);
    fv.valid = valid;
    fv.n_valid = 4;
    DecoderMemory mem =
        head::project_memory(g, ps, fv, g.leaf(fs_row), "head", spec);
    CHECK_THROWS_AS(head::refine(g, ps, mem, -1, 1, "head", spec),
                    InputError);
    const int some = g.leaf(Tensor::zeros(1, 25));
    CHECK_THROWS_AS(head::refine(g, ps, mem, some, 0, "head", spec),
                    InputError);
    const int wrong = g.leaf(Tensor::zeros(3, 25));
    CHECK_THROWS_AS(head::refine(g, ps, mem, wrong, 2, "head", spec),
                    InputError);
  }
}

TEST_CASE("training loss is teacher-forced per level") {
  DenseHeadSpec spec = tiny_spec(8);
  ParamStore ps;
  Rng rng(505);
  head::init_dense_head(ps, "head", spec, rng);

  // zero the output projection: every residual pass returns its input
  ps.at("head.out.w").value = Tensor::zeros(spec.dim, morph::kActionDims);
  ps.at("head.out.b").value = Tensor::zeros(1, morph::kActionDims);

  const Scalar fill = 0.2;
  Tensor truth = constant_sequence(8, fill);

  Graph g(true);
  Rng in_rng(31);
  MemoryInputs m = make_inputs(g, 5, 4, spec.dim, in_rng);
  head::LossNodes ln =
      head::sequence_loss(g, ps, m.fv, m.fs, truth, "head", spec);
  REQUIRE(ln.per_level.size() == 4);

  // teacher forcing + constant truth: upsampled truth already equals the
  // target at every level >= 1, so those losses vanish exactly
  for (int n = 1; n <= 3; ++n) CHECK(g.val(ln.per_level[size_t(n)]).v[0] == 0.0);

  // the start-token level predicts zeros here, so its loss is the huber
  // value of the truth row itself
  Scalar expect0 = 0;
  for (int c = 0; c < morph::kActionDims; ++c) {
    const Scalar x = std::abs(truth.at(0, c));
    expect0 += x < spec.loss_beta ? 0.5 * x * x / spec.loss_beta
                                  : x - 0.5 * spec.loss_beta;
  }
  expect0 /= morph::kActionDims;
  CHECK(g.val(ln.per_level[0]).v[0] == doctest::Approx(expect0).epsilon(1e-12));
  CHECK(g.val(ln.total).v[0] == doctest::Approx(expect0 / 4.0).epsilon(1e-12));

  // total is the mean of the per-level nodes under any parameters
  ParamStore ps2;
  Rng rng2(606);
  head::init_dense_head(ps2, "head", spec, rng2);
  Graph g2(true);
  Rng in_rng2(32);
  MemoryInputs m2 = make_inputs(g2, 5, 4, spec.dim, in_rng2);
  Rng trng(8);
  Tensor rtruth = random_sequence(8, trng);
  head::LossNodes l2 =
      head::sequence_loss(g2, ps2, m2.fv, m2.fs, rtruth, "head", spec);
  Scalar mean = 0;
  for (int id : l2.per_level) mean += g2.val(id).v[0];
  mean /= Scalar(l2.per_level.size());
  CHECK(g2.val(l2.total).v[0] == doctest::Approx(mean).epsilon(1e-12));

  // non-finite targets abort training
  Tensor bad = rtruth;
  bad.at(3, 2) = std::numeric_limits<Scalar>::quiet_NaN();
  Graph g3(true);
  Rng in_rng3(33);
  MemoryInputs m3 = make_inputs(g3, 5, 4, spec.dim, in_rng3);
  CHECK_THROWS_AS(head::sequence_loss(g3, ps2, m3.fv, m3.fs, bad, "head", spec),
                  TrainingError);

  // wrong shape rejected
  Graph g4(true);
  Rng in_rng4(34);
  MemoryInputs m4 = make_inputs(g4, 5, 4, spec.dim, in_rng4);
  CHECK_THROWS_AS(head::sequence_loss(g4, ps2, m4.fv, m4.fs,
                                      Tensor::zeros(4, 25), "head", spec),
                  InputError);
}

TEST_CASE("antipodal target quaternions are canonicalized before the loss") {
  const DenseHeadSpec spec = tiny_spec(8);
  ParamStore ps;
  Rng rng(707);
  head::init_dense_head(ps, "head", spec, rng);

  Tensor t_pos = constant_sequence(8, 0.1, {1, 0, 0, 0}, {0.5, 0.5, 0.5, 0.5});
  Tensor t_neg = constant_sequence(8, 0.1, {-1, 0, 0, 0},
                                   {-0.5, -0.5, -0.5, -0.5});

  auto loss_of = [&](const Tensor& truth) {
    Graph g(true);
    Rng in_rng(41);
    MemoryInputs m = make_inputs(g, 5, 4, spec.dim, in_rng);
    return g.val(
        head::sequence_loss(g, ps, m.fv, m.fs, truth, "head", spec).total)
        .v[0];
  };
  CHECK(loss_of(t_pos) == loss_of(t_neg));
}

TEST_CASE("the head can overfit a small synthetic batch") {
  DenseHeadSpec spec = tiny_spec(8);
  spec.dim = 16;
  spec.hidden = 32;
  spec.layers = 1;
  ParamStore ps;
  Rng rng(808);
  head::init_dense_head(ps, "head", spec, rng);

  const int n_samples = 6;
  Rng drng(99);
  std::vector<Tensor> toks, fss, truths;
  for (int i = 0; i < n_samples; ++i) {
    toks.push_back(testutil::random_tensor(4, spec.dim, drng, 0.5));
    fss.push_back(testutil::random_tensor(1, spec.dim, drng, 0.5));
    truths.push_back(random_sequence(8, drng));
  }
  Tensor valid = Tensor::zeros(4, 1);
  for (int i = 0; i < 4; ++i) valid.at(i, 0) = 1.0;

  auto epoch_loss = [&](bool update, int64_t& step) {
    Scalar total = 0;
    for (int i = 0; i < n_samples; ++i) {
      Graph g(update);
      FusedFeatureSet fv;
      fv.tokens = g.leaf(toks[size_t(i)]);
      fv.valid = valid;
      fv.n_valid = 4;
      head::LossNodes ln = head::sequence_loss(
          g, ps, fv, g.leaf(fss[size_t(i)]), truths[size_t(i)], "head", spec);
      total += g.val(ln.total).v[0];
      if (update) {
        g.backward(ln.total);
        std::map<std::string, Tensor> grads;
        g.export_param_grads(grads);
        core::AdamConfig cfg;
        cfg.lr = 3e-3;
        core::adam_step(ps, grads, cfg, ++step, 1.0);
      }
    }
    return total / n_samples;
  };

  int64_t step = 0;
  const Scalar before = epoch_loss(false, step);
  for (int e = 0; e < 40; ++e) epoch_loss(true, step);
  const Scalar after = epoch_loss(false, step);
  CHECK(after < 0.35 * before);
  CHECK(std::isfinite(after));
}

TEST_CASE("dense head gradients match finite differences") {
  DenseHeadSpec spec;
  spec.horizon = 4;
  spec.dim = 12;
  spec.hidden = 16;
  spec.layers = 1;
  spec.heads = 2;
  spec.loss_beta = 4.0;  // keep every term in the smooth quadratic region
  ParamStore ps;
  Rng rng(909);
  head::init_dense_head(ps, "head", spec, rng);

  Rng in_rng(13);
  Tensor tok = testutil::random_tensor(3, spec.dim, in_rng, 0.5);
  Tensor fs_row = testutil::random_tensor(1, spec.dim, in_rng, 0.5);
  Tensor valid = Tensor::zeros(3, 1);
  valid.at(0, 0) = 1.0;
  valid.at(1, 0) = 1.0;
  tok.at(2, 0) = 0.0;
  Rng trng(14);
  Tensor truth = random_sequence(4, trng);

  auto build = [&](Graph& g, ParamStore& p) {
    FusedFeatureSet fv;
    fv.tokens = g.leaf(tok);
    fv.valid = valid;
    fv.n_valid = 2;
    return head::sequence_loss(g, p, fv, g.leaf(fs_row), truth, "head", spec)
        .total;
  };
  CHECK(testutil::gradcheck(ps, build) <= 1e-4);
}
