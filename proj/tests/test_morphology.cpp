#include <doctest.h>

#include <cmath>

#include "densebody/core/errors.hpp"
#include "densebody/core/rng.hpp"
#include "densebody/morph/morphology.hpp"

using namespace densebody;
using namespace densebody::morph;
using densebody::core::Rng;
using densebody::core::Scalar;

namespace {

std::vector<Scalar> rand_block(int n, Rng& rng) {
  std::vector<Scalar> v(size_t(n), 0.0);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Random blocks with valid (nonzero) quaternions.
ActionVector random_action(Rng& rng) {
  auto left = rand_block(7, rng);
  auto right = rand_block(7, rng);
  return pack_action(rand_block(3, rng), rand_block(4, rng), left, right,
                     rand_block(2, rng), rand_block(2, rng));
}

}  // namespace

TEST_CASE("layout widths sum to 25 and offsets chain") {
  int sum = 0, expect_off = 0;
  for (const auto& b : kLayout) {
    CHECK(b.offset == expect_off);
    expect_off += b.width;
    sum += b.width;
  }
  CHECK(sum == 25);
  CHECK(kActionDims == 25);
  CHECK(kStateDims == 22);
}

TEST_CASE("identity pack puts ones exactly at quaternion w positions") {
  ActionVector a = pack_action({0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 1, 0, 0, 0},
                               {0, 0, 0, 1, 0, 0, 0}, {0, 0}, {0, 0});
  REQUIRE(a.values.size() == 25);
  for (int i = 0; i < 25; ++i) {
    if (i == kLeftQuatOffset || i == kRightQuatOffset)
      CHECK(a.values[size_t(i)] == 1.0);
    else
      CHECK(a.values[size_t(i)] == 0.0);
  }
  CHECK(a.tag == FrameTag::absolute_pose);
}

TEST_CASE("pack renormalizes and canonicalizes quaternions") {
  ActionVector a = pack_action({0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 2, 0, 0, 0},
                               {0, 0, 0, -0.5, 0, 0.5, 0}, {0, 0}, {0, 0});
  CHECK(a.values[kLeftQuatOffset] == 1.0);
  // (-0.5, 0, 0.5, 0) has negative w: flipped then unit-normalized.
  CHECK(a.values[kRightQuatOffset] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(a.values[kRightQuatOffset + 2] == doctest::Approx(-std::sqrt(0.5)).epsilon(1e-12));
  for (int off : {kLeftQuatOffset, kRightQuatOffset}) {
    Scalar n2 = 0;
    for (int i = 0; i < 4; ++i) n2 += a.values[size_t(off + i)] * a.values[size_t(off + i)];
    CHECK(std::sqrt(n2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(a.values[size_t(off)] >= 0.0);
  }
}

TEST_CASE("pack errors") {
  CHECK_THROWS_AS(pack_action({0, 0}, {0, 0, 0, 0}, {0, 0, 0, 1, 0, 0, 0},
                              {0, 0, 0, 1, 0, 0, 0}, {0, 0}, {0, 0}),
                  LayoutError);
  CHECK_THROWS_AS(pack_action({0, 0, 0}, {0, 0, 0, 0}, {0, 0, 0, 0, 0, 0, 0},
                              {0, 0, 0, 1, 0, 0, 0}, {0, 0}, {0, 0}),
                  DegenerateRotationError);
}

TEST_CASE("unpack inverts pack") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    ActionVector a = random_action(rng);
    ActionBlocks b = unpack_action(a);
    ActionVector again = pack_action(b.chassis, b.torso, b.left, b.right, b.head, b.grip);
    REQUIRE(again.values.size() == a.values.size());
    for (size_t i = 0; i < a.values.size(); ++i)
      CHECK(again.values[i] == doctest::Approx(a.values[i]).epsilon(1e-12));
  }
}

TEST_CASE("unpack blocks concatenate back to the input") {
  Rng rng(22);
  ActionVector a = random_action(rng);
  ActionBlocks b = unpack_action(a);
  std::vector<Scalar> cat;
  for (const auto* blk : {&b.chassis, &b.torso, &b.left, &b.right, &b.head, &b.grip})
    cat.insert(cat.end(), blk->begin(), blk->end());
  REQUIRE(cat.size() == 25);
  for (size_t i = 0; i < 25; ++i) CHECK(cat[i] == a.values[i]);
}

TEST_CASE("unpack rejects bad input") {
  ActionVector short_a;
  short_a.values.assign(24, 0.0);
  CHECK_THROWS_AS(unpack_action(short_a), LayoutError);
  ActionVector zero;
  zero.values.assign(25, 0.0);
  CHECK_THROWS_AS(unpack_action(zero), DegenerateRotationError);
}

TEST_CASE("state drops the chassis and masks it invalid") {
  Rng rng(23);
  ActionVector a = random_action(rng);
  RobotState s = state_from_action(a);
  for (int i = 0; i < kStateDims; ++i)
    CHECK(s.values[size_t(i)] == a.values[size_t(i + 3)]);
  CHECK(s.mask[0] == 0);
  for (int b = 1; b < kNumBlocks; ++b) CHECK(s.mask[size_t(b)] == 1);
}

TEST_CASE("norm stats pin quaternion dims and floor scales") {
  Rng rng(24);
  std::vector<ActionVector> demos;
  for (int i = 0; i < 50; ++i) demos.push_back(random_action(rng));
  NormStats s = compute_norm_stats(demos);
  for (int i = 0; i < kActionDims; ++i) {
    CHECK(s.scale[size_t(i)] > 0.0);
    if (is_quat_dim(i)) {
      CHECK(s.location[size_t(i)] == 0.0);
      CHECK(s.scale[size_t(i)] == 1.0);
    }
  }
  // Constant dimension: scale floored, not zero.
  std::vector<ActionVector> flat(3, demos[0]);
  NormStats fs = compute_norm_stats(flat);
  CHECK(fs.scale[0] == 1e-6);
  CHECK_THROWS_AS(compute_norm_stats({}), StatsError);
}

TEST_CASE("normalize maps the demo range into [-1,1] and round-trips") {
  Rng rng(25);
  std::vector<ActionVector> demos;
  for (int i = 0; i < 40; ++i) demos.push_back(random_action(rng));
  NormStats s = compute_norm_stats(demos);
  for (const auto& a : demos) {
    ActionVector n = normalize(a, s);
    CHECK(n.tag == FrameTag::normalized);
    for (int i = 0; i < kActionDims; ++i) {
      if (is_quat_dim(i))
        CHECK(n.values[size_t(i)] == a.values[size_t(i)]);
      else
        CHECK(std::abs(n.values[size_t(i)]) <= 1.0 + 1e-12);
    }
    ActionVector back = denormalize(n, s);
    CHECK(back.tag == FrameTag::absolute_pose);
    for (int i = 0; i < kActionDims; ++i)
      CHECK(std::abs(back.values[size_t(i)] - a.values[size_t(i)]) < 1e-9);
  }
}

TEST_CASE("normalize centered input gives zeros off the quaternions") {
  Rng rng(26);
  ActionVector a = random_action(rng);
  NormStats s = compute_norm_stats({a});
  ActionVector n = normalize(a, s);
  for (int i = 0; i < kActionDims; ++i)
    if (!is_quat_dim(i)) CHECK(n.values[size_t(i)] == 0.0);
}

TEST_CASE("identity stats give the identity map") {
  Rng rng(27);
  ActionVector a = random_action(rng);
  NormStats s;
  s.location.fill(0.0);
  s.scale.fill(1.0);
  ActionVector n = normalize(a, s);
  for (int i = 0; i < kActionDims; ++i) CHECK(n.values[size_t(i)] == a.values[size_t(i)]);
}

TEST_CASE("stats errors") {
  Rng rng(28);
  ActionVector a = random_action(rng);
  NormStats s;
  s.location.fill(0.0);
  s.scale.fill(1.0);
  s.scale[4] = 0.0;
  CHECK_THROWS_AS(normalize(a, s), StatsError);
  s.scale[4] = 1.0;
  s.location[2] = std::numeric_limits<Scalar>::quiet_NaN();
  CHECK_THROWS_AS(normalize(a, s), StatsError);
  CHECK_THROWS_AS(denormalize(a, s), StatsError);
}

TEST_CASE("validate_action enforces unit quaternions on absolute poses") {
  Rng rng(29);
  ActionVector a = random_action(rng);
  validate_action(a);
  a.values[kLeftQuatOffset] += 0.01;
  CHECK_THROWS_AS(validate_action(a), LayoutError);
  a.tag = FrameTag::normalized;  // normalized vectors are exempt
  validate_action(a);
}
