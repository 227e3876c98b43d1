#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <utility>
#include <vector>

#include "densebody/core/checkpoint.hpp"
#include "densebody/core/errors.hpp"
#include "densebody/core/nn.hpp"
#include "densebody/head/diffhead.hpp"
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
using head::DiffHeadSpec;
using head::DiffusionSchedule;

namespace {

DiffHeadSpec tiny_spec(int steps = 50) {
  DiffHeadSpec s;
  s.horizon = 4;
  s.dim = 12;
  s.hidden = 16;
  s.layers = 1;
  s.heads = 2;
  s.steps = steps;
  return s;
}

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

Tensor constant_sequence(int T, Scalar fill) {
  Tensor t = Tensor::zeros(T, morph::kActionDims);
  for (int i = 0; i < T; ++i) {
    for (int c = 0; c < morph::kActionDims; ++c) t.at(i, c) = fill;
    t.at(i, morph::kLeftQuatOffset) = 1.0;
    for (int k = 1; k < 4; ++k) t.at(i, morph::kLeftQuatOffset + k) = 0.0;
    t.at(i, morph::kRightQuatOffset) = 1.0;
    for (int k = 1; k < 4; ++k) t.at(i, morph::kRightQuatOffset + k) = 0.0;
  }
  return t;
}

}  // namespace

TEST_CASE("cosine schedule decays the signal fraction from above 0.99") {
  const DiffusionSchedule sch = head::make_schedule(50);
  REQUIRE(sch.steps() == 50);
  REQUIRE(sch.beta.size() == 50);
  REQUIRE(sch.alpha_bar.size() == 50);

  CHECK(sch.alpha_bar[0] > 0.99);
  for (int t = 0; t < 50; ++t) {
    CHECK(sch.beta[size_t(t)] > 0.0);
    CHECK(sch.beta[size_t(t)] < 1.0);
    CHECK(sch.alpha_bar[size_t(t)] > 0.0);
    if (t > 0) {
      CHECK(sch.alpha_bar[size_t(t)] < sch.alpha_bar[size_t(t) - 1]);
      CHECK(sch.beta[size_t(t)] > sch.beta[size_t(t) - 1]);
    }
  }

  // independent closed form: away from the terminal clip, the cumulative
  // fraction follows the squared-cosine profile
  const Scalar s = 0.008;
  const Scalar half_pi = std::acos(0.0);
  auto f = [&](Scalar u) {
    const Scalar c = std::cos((u + s) / (1.0 + s) * half_pi);
    return c * c;
  };
  for (int t = 0; t < 49; ++t)
    CHECK(sch.alpha_bar[size_t(t)] ==
          doctest::Approx(f(Scalar(t + 1) / 50.0) / f(0.0)).epsilon(1e-10));

  CHECK_THROWS_AS(head::make_schedule(1), ConfigError);
  CHECK_THROWS_AS(head::make_schedule(10), ConfigError);
}

TEST_CASE("forward diffusion matches its closed form") {
  const DiffusionSchedule sch = head::make_schedule(50);
  Tensor clean = constant_sequence(2, 0.5);
  const Tensor zero = Tensor::zeros(2, morph::kActionDims);

  // early step keeps the sample within 1% of clean when noise is zero
  Tensor x0 = head::diffuse(sch, clean, 0, zero);
  for (size_t i = 0; i < clean.v.size(); ++i) {
    CHECK(x0.v[i] == std::sqrt(sch.alpha_bar[0]) * clean.v[i]);
    CHECK(std::abs(x0.v[i] - clean.v[i]) <= 0.01 * std::abs(clean.v[i]) + 1e-15);
  }

  // terminal step scales clean all the way down
  Tensor xT = head::diffuse(sch, clean, 49, zero);
  for (size_t i = 0; i < clean.v.size(); ++i)
    CHECK(xT.v[i] == std::sqrt(sch.alpha_bar[49]) * clean.v[i]);
  CHECK(sch.alpha_bar[49] < 0.01);

  // generic step mixes signal and noise with the schedule's coefficients
  Rng rng(5);
  Tensor noise = testutil::random_tensor(2, morph::kActionDims, rng);
  Tensor xt = head::diffuse(sch, clean, 20, noise);
  for (size_t i = 0; i < clean.v.size(); ++i)
    CHECK(xt.v[i] == doctest::Approx(std::sqrt(sch.alpha_bar[20]) * clean.v[i] +
                                     std::sqrt(1.0 - sch.alpha_bar[20]) *
                                         noise.v[i])
                         .epsilon(1e-14));

  CHECK_THROWS_AS(head::diffuse(sch, clean, -1, zero), RangeError);
  CHECK_THROWS_AS(head::diffuse(sch, clean, 50, zero), RangeError);
  CHECK_THROWS_AS(head::diffuse(sch, clean, 3, Tensor::zeros(1, 25)),
                  InputError);
}

TEST_CASE("diffused sample statistics match the schedule") {
  const DiffusionSchedule sch = head::make_schedule(50);
  const int t = 20;
  const Scalar ab = sch.alpha_bar[size_t(t)];

  Rng rng(424242);
  const Tensor clean = constant_sequence(4, 0.8);
  const int draws = 100;
  std::vector<Scalar> samples;
  for (int d = 0; d < draws; ++d) {
    Tensor noise(4, morph::kActionDims);
    for (auto& v : noise.v) v = rng.normal();
    Tensor xt = head::diffuse(sch, clean, t, noise);
    // restrict to the linear dims that share the 0.8 fill
    for (int i = 0; i < 4; ++i)
      for (int c = 0; c < morph::kActionDims; ++c)
        if (!morph::is_quat_dim(c)) samples.push_back(xt.at(i, c));
  }
  Scalar mean = 0;
  for (Scalar v : samples) mean += v;
  mean /= Scalar(samples.size());
  Scalar var = 0;
  for (Scalar v : samples) var += (v - mean) * (v - mean);
  var /= Scalar(samples.size() - 1);

  CHECK(mean == doctest::Approx(std::sqrt(ab) * 0.8).epsilon(0.05));
  CHECK(var == doctest::Approx(1.0 - ab).epsilon(0.05));
}

TEST_CASE("denoising runs one decoder call per schedule step") {
  const DiffHeadSpec spec = tiny_spec(50);
  ParamStore ps;
  Rng rng(111);
  head::init_diff_head(ps, "diff", spec, rng);

  Graph g(false);
  Rng in_rng(3);
  MemoryInputs m = make_inputs(g, 5, 4, spec.dim, in_rng);
  ActionSequence seq = head::denoise_sample(g, ps, m.fv, m.fs, 9001, "diff",
                                            spec);
  CHECK(seq.decoder_calls == 50);
  REQUIRE(seq.actions.rows() == spec.horizon);
  REQUIRE(seq.actions.cols() == morph::kActionDims);
  for (Scalar v : seq.actions.v) CHECK(std::isfinite(v));

  // a shorter schedule means exactly that many calls
  const DiffHeadSpec s20 = tiny_spec(20);
  ParamStore ps20;
  Rng rng20(112);
  head::init_diff_head(ps20, "diff", s20, rng20);
  Graph g20(false);
  Rng in_rng20(4);
  MemoryInputs m20 = make_inputs(g20, 5, 4, s20.dim, in_rng20);
  CHECK(head::denoise_sample(g20, ps20, m20.fv, m20.fs, 7, "diff", s20)
            .decoder_calls == 20);

  // same seed reproduces the trajectory bitwise; another seed diverges
  Graph g2(false);
  Rng in_rng2(3);
  MemoryInputs m2 = make_inputs(g2, 5, 4, spec.dim, in_rng2);
  ActionSequence seq2 = head::denoise_sample(g2, ps, m2.fv, m2.fs, 9001,
                                             "diff", spec);
  for (size_t i = 0; i < seq.actions.v.size(); ++i)
    CHECK(seq.actions.v[i] == seq2.actions.v[i]);

  Graph g3(false);
  Rng in_rng3(3);
  MemoryInputs m3 = make_inputs(g3, 5, 4, spec.dim, in_rng3);
  ActionSequence seq3 = head::denoise_sample(g3, ps, m3.fv, m3.fs, 9002,
                                             "diff", spec);
  Scalar maxdiff = 0;
  for (size_t i = 0; i < seq.actions.v.size(); ++i)
    maxdiff = std::max(maxdiff,
                       std::abs(seq.actions.v[i] - seq3.actions.v[i]));
  CHECK(maxdiff > 1e-9);

  // absent parameters cannot sample
  ParamStore empty;
  Graph ge(false);
  Rng in_rng4(3);
  MemoryInputs me = make_inputs(ge, 5, 4, spec.dim, in_rng4);
  CHECK_THROWS_AS(head::denoise_sample(ge, empty, me.fv, me.fs, 1, "diff",
                                       spec),
                  CheckpointError);
}

TEST_CASE("noise-prediction loss validates targets and stays finite") {
  const DiffHeadSpec spec = tiny_spec(20);
  ParamStore ps;
  Rng rng(222);
  head::init_diff_head(ps, "diff", spec, rng);

  Rng trng(6);
  Tensor truth = testutil::random_tensor(4, morph::kActionDims, trng, 0.4);

  Graph g(true);
  Rng in_rng(8);
  MemoryInputs m = make_inputs(g, 5, 4, spec.dim, in_rng);
  Rng lrng(77);
  const int loss = head::diffusion_loss(g, ps, m.fv, m.fs, truth, lrng,
                                        "diff", spec);
  CHECK(std::isfinite(g.val(loss).v[0]));
  CHECK(g.val(loss).v[0] > 0.0);

  // antipodal quaternion targets produce the identical loss (canonicalized)
  Tensor tq = constant_sequence(4, 0.1);
  Tensor tq_neg = tq;
  for (int i = 0; i < 4; ++i) {
    tq_neg.at(i, morph::kLeftQuatOffset) = -1.0;
    tq_neg.at(i, morph::kRightQuatOffset) = -1.0;
  }
  auto loss_of = [&](const Tensor& tr) {
    Graph gl(true);
    Rng ir(8);
    MemoryInputs ml = make_inputs(gl, 5, 4, spec.dim, ir);
    Rng lr(33);
    return gl
        .val(head::diffusion_loss(gl, ps, ml.fv, ml.fs, tr, lr, "diff", spec))
        .v[0];
  };
  CHECK(loss_of(tq) == loss_of(tq_neg));

  Tensor bad = truth;
  bad.at(1, 4) = std::numeric_limits<Scalar>::infinity();
  Graph g2(true);
  Rng in_rng2(8);
  MemoryInputs m2 = make_inputs(g2, 5, 4, spec.dim, in_rng2);
  Rng lrng2(77);
  CHECK_THROWS_AS(head::diffusion_loss(g2, ps, m2.fv, m2.fs, bad, lrng2,
                                       "diff", spec),
                  TrainingError);

  Graph g3(true);
  Rng in_rng3(8);
  MemoryInputs m3 = make_inputs(g3, 5, 4, spec.dim, in_rng3);
  Rng lrng3(77);
  CHECK_THROWS_AS(head::diffusion_loss(g3, ps, m3.fv, m3.fs,
                                       Tensor::zeros(3, 25), lrng3, "diff",
                                       spec),
                  InputError);
}

TEST_CASE("training the sampler pulls samples toward a constant target") {
  DiffHeadSpec spec = tiny_spec(20);
  // dim must exceed the action width or the in/out projections cannot carry
  // the identity component of the noise map
  spec.dim = 32;
  spec.hidden = 48;
  ParamStore ps;
  Rng rng(333);
  head::init_diff_head(ps, "diff", spec, rng);

  Rng drng(14);
  const Tensor tok = testutil::random_tensor(3, spec.dim, drng, 0.5);
  const Tensor fs_row = testutil::random_tensor(1, spec.dim, drng, 0.5);
  Tensor valid = Tensor::zeros(3, 1);
  for (int i = 0; i < 3; ++i) valid.at(i, 0) = 1.0;
  const Tensor truth = constant_sequence(4, 0.4);

  auto mean_l1 = [&]() {
    Graph g(false);
    FusedFeatureSet fv;
    fv.tokens = g.leaf(tok);
    fv.valid = valid;
    fv.n_valid = 3;
    ActionSequence seq =
        head::denoise_sample(g, ps, fv, g.leaf(fs_row), 123, "diff", spec);
    Scalar l1 = 0;
    for (size_t i = 0; i < truth.v.size(); ++i)
      l1 += std::abs(seq.actions.v[i] - truth.v[i]);
    return l1 / Scalar(truth.v.size());
  };

  const Scalar l1_before = mean_l1();

  Rng lrng(55);
  int64_t step = 0;
  Scalar first_loss = -1, last_loss = -1;
  for (int it = 0; it < 2400; ++it) {
    Graph g(true);
    FusedFeatureSet fv;
    fv.tokens = g.leaf(tok);
    fv.valid = valid;
    fv.n_valid = 3;
    const int loss = head::diffusion_loss(g, ps, fv, g.leaf(fs_row), truth,
                                          lrng, "diff", spec);
    if (it == 0) first_loss = g.val(loss).v[0];
    last_loss = g.val(loss).v[0];
    g.backward(loss);
    std::map<std::string, Tensor> grads;
    g.export_param_grads(grads);
    core::AdamConfig cfg;
    cfg.lr = 3e-3;
    core::adam_step(ps, grads, cfg, ++step, 1.0);
  }
  const Scalar l1_after = mean_l1();

  CHECK(last_loss < 0.1 * first_loss);
  CHECK(l1_after < 0.5 * l1_before);
  CHECK(l1_after < 0.35);
  CHECK(std::isfinite(l1_after));
}

TEST_CASE("both heads run from one parameter store and checkpoint") {
  // shared fused features, dense and diffusion parameters side by side
  head::DenseHeadSpec dspec;
  dspec.horizon = 4;
  dspec.dim = 12;
  dspec.hidden = 16;
  dspec.layers = 1;
  dspec.heads = 2;
  DiffHeadSpec fspec = tiny_spec(20);

  ParamStore ps;
  Rng rng(444);
  head::init_dense_head(ps, "policy.dense", dspec, rng);
  head::init_diff_head(ps, "policy.diff", fspec, rng);

  Rng in_rng(9);
  const Tensor tok = testutil::random_tensor(4, 12, in_rng, 0.5);
  const Tensor fs_row = testutil::random_tensor(1, 12, in_rng, 0.5);
  Tensor valid = Tensor::zeros(4, 1);
  for (int i = 0; i < 4; ++i) valid.at(i, 0) = 1.0;

  auto run_both = [&](ParamStore& store) {
    Graph g(false);
    FusedFeatureSet fv;
    fv.tokens = g.leaf(tok);
    fv.valid = valid;
    fv.n_valid = 4;
    const int fs = g.leaf(fs_row);
    Tensor dense =
        head::generate(g, store, fv, fs, "policy.dense", dspec).actions;
    Tensor diff =
        head::denoise_sample(g, store, fv, fs, 71, "policy.diff", fspec)
            .actions;
    return std::make_pair(dense, diff);
  };

  auto [dense1, diff1] = run_both(ps);

  const std::string path = "diffhead_roundtrip.dbck";
  core::save_checkpoint(path, ps, core::Json{{"purpose", "test"}});
  ParamStore loaded;
  core::load_checkpoint(path, loaded);
  std::remove(path.c_str());

  auto [dense2, diff2] = run_both(loaded);
  for (size_t i = 0; i < dense1.v.size(); ++i)
    CHECK(dense1.v[i] == dense2.v[i]);
  for (size_t i = 0; i < diff1.v.size(); ++i)
    CHECK(diff1.v[i] == diff2.v[i]);
}

TEST_CASE("diffusion decoder gradients match finite differences") {
  const DiffHeadSpec spec = tiny_spec(20);
  ParamStore ps;
  Rng rng(555);
  head::init_diff_head(ps, "diff", spec, rng);

  Rng in_rng(16);
  const Tensor tok = testutil::random_tensor(3, spec.dim, in_rng, 0.5);
  const Tensor fs_row = testutil::random_tensor(1, spec.dim, in_rng, 0.5);
  Tensor valid = Tensor::zeros(3, 1);
  valid.at(0, 0) = 1.0;
  valid.at(1, 0) = 1.0;
  Rng trng(17);
  Tensor truth = testutil::random_tensor(4, morph::kActionDims, trng, 0.4);

  auto build = [&](Graph& g, ParamStore& p) {
    FusedFeatureSet fv;
    fv.tokens = g.leaf(tok);
    fv.valid = valid;
    fv.n_valid = 2;
    Rng lr(29);  // same step and noise draw on every evaluation
    return head::diffusion_loss(g, p, fv, g.leaf(fs_row), truth, lr, "diff",
                                spec);
  };
  CHECK(testutil::gradcheck(ps, build) <= 1e-4);
}
