#include <doctest.h>

#include <cmath>

#include "densebody/core/params.hpp"

using namespace densebody::core;

TEST_CASE("adam matches a hand-stepped oracle") {
  ParamStore ps;
  ps.create("w", Tensor::scalar(1.0));
  AdamConfig cfg;
  cfg.lr = 0.1;

  // Plain-double replica of the update rule.
  double w = 1.0, m = 0.0, v = 0.0;
  for (int64_t t = 0; t < 5; ++t) {
    const double g = 0.5 + 0.1 * double(t);
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(cfg.beta1, double(t + 1)));
    const double vhat = v / (1.0 - std::pow(cfg.beta2, double(t + 1)));
    w -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);

    std::map<std::string, Tensor> grads;
    grads["w"] = Tensor::scalar(0.5 + 0.1 * double(t));
    adam_step(ps, grads, cfg, t, 1.0);
    CHECK(ps.at("w").value.v[0] == doctest::Approx(w).epsilon(1e-14));
  }
}

TEST_CASE("adam ignores non-trainable entries and missing grads") {
  ParamStore ps;
  ps.create("frozen", Tensor::scalar(2.0), false);
  ps.create("nograd", Tensor::scalar(3.0));
  AdamConfig cfg;
  std::map<std::string, Tensor> grads;
  grads["frozen"] = Tensor::scalar(1.0);
  adam_step(ps, grads, cfg, 0, 1.0);
  CHECK(ps.at("frozen").value.v[0] == 2.0);
  CHECK(ps.at("nograd").value.v[0] == 3.0);
}

TEST_CASE("lr scale feeds straight through") {
  ParamStore a, b;
  a.create("w", Tensor::scalar(1.0));
  b.create("w", Tensor::scalar(1.0));
  AdamConfig cfg;
  cfg.lr = 0.2;
  AdamConfig half = cfg;
  half.lr = 0.1;
  std::map<std::string, Tensor> grads;
  grads["w"] = Tensor::scalar(0.7);
  adam_step(a, grads, cfg, 0, 0.5);
  adam_step(b, grads, half, 0, 1.0);
  CHECK(a.at("w").value.v[0] == doctest::Approx(b.at("w").value.v[0]).epsilon(1e-15));
}

TEST_CASE("cosine decay endpoints and midpoint") {
  CHECK(cosine_decay(0, 100) == doctest::Approx(1.0));
  CHECK(cosine_decay(50, 100) == doctest::Approx(0.5));
  CHECK(cosine_decay(100, 100) == doctest::Approx(0.0).epsilon(1e-12));
  for (int64_t t = 0; t <= 100; ++t) {
    const Scalar d = cosine_decay(t, 100);
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
}

TEST_CASE("set_trainable selects by prefix") {
  ParamStore ps;
  ps.create("enc.w", Tensor::scalar(0.0));
  ps.create("enc.b", Tensor::scalar(0.0));
  ps.create("head.w", Tensor::scalar(0.0));
  ps.set_trainable("enc.", false);
  CHECK(!ps.at("enc.w").trainable);
  CHECK(!ps.at("enc.b").trainable);
  CHECK(ps.at("head.w").trainable);
}

TEST_CASE("xavier bound respected") {
  ParamStore ps;
  Rng rng(3);
  ps.create_xavier("w", 30, 50, rng);
  const Scalar bound = std::sqrt(6.0 / 80.0);
  for (Scalar x : ps.at("w").value.v) {
    CHECK(x >= -bound);
    CHECK(x <= bound);
  }
}
