#include "densebody/morph/morphology.hpp"

#include <cmath>
#include <limits>

#include "densebody/core/errors.hpp"

namespace densebody::morph {

namespace {
void require_width(const std::vector<Scalar>& v, int want, const char* name) {
  if (int(v.size()) != want)
    throw LayoutError(std::string(name) + ": expected width " +
                      std::to_string(want) + ", got " + std::to_string(v.size()));
}
}  // namespace

void canonicalize_quat(Scalar* q) {
  const Scalar n2 = q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3];
  if (n2 < 1e-24) throw DegenerateRotationError("zero-norm quaternion");
  Scalar inv = 1.0 / std::sqrt(n2);
  if (q[0] < 0.0) inv = -inv;  // w >= 0 kills the double cover
  for (int i = 0; i < 4; ++i) q[i] *= inv;
}

ActionVector pack_action(const std::vector<Scalar>& chassis,
                         const std::vector<Scalar>& torso,
                         const std::vector<Scalar>& left,
                         const std::vector<Scalar>& right,
                         const std::vector<Scalar>& head,
                         const std::vector<Scalar>& grip) {
  require_width(chassis, 3, "chassis_delta");
  require_width(torso, 4, "torso_pose");
  require_width(left, 7, "left_arm_pose");
  require_width(right, 7, "right_arm_pose");
  require_width(head, 2, "head_pose");
  require_width(grip, 2, "grippers");
  ActionVector a;
  a.values.reserve(kActionDims);
  for (const auto* blk : {&chassis, &torso, &left, &right, &head, &grip})
    a.values.insert(a.values.end(), blk->begin(), blk->end());
  canonicalize_quat(a.values.data() + kLeftQuatOffset);
  canonicalize_quat(a.values.data() + kRightQuatOffset);
  a.tag = FrameTag::absolute_pose;
  return a;
}

ActionBlocks unpack_action(const ActionVector& a) {
  if (int(a.values.size()) != kActionDims)
    throw LayoutError("action has " + std::to_string(a.values.size()) +
                      " dims, expected " + std::to_string(kActionDims));
  for (int off : {kLeftQuatOffset, kRightQuatOffset}) {
    const Scalar* q = a.values.data() + off;
    if (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3] < 1e-24)
      throw DegenerateRotationError("zero-norm quaternion in action");
  }
  auto slice = [&](int off, int w) {
    return std::vector<Scalar>(a.values.begin() + off, a.values.begin() + off + w);
  };
  ActionBlocks b;
  b.chassis = slice(0, 3);
  b.torso = slice(3, 4);
  b.left = slice(7, 7);
  b.right = slice(14, 7);
  b.head = slice(21, 2);
  b.grip = slice(23, 2);
  return b;
}

void validate_action(const ActionVector& a, Scalar quat_tol) {
  if (int(a.values.size()) != kActionDims)
    throw LayoutError("action has " + std::to_string(a.values.size()) +
                      " dims, expected " + std::to_string(kActionDims));
  if (a.tag != FrameTag::absolute_pose) return;
  for (int off : {kLeftQuatOffset, kRightQuatOffset}) {
    const Scalar* q = a.values.data() + off;
    const Scalar n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    if (n < 1e-12) throw DegenerateRotationError("zero-norm quaternion in action");
    if (std::abs(n - 1.0) > quat_tol)
      throw LayoutError("non-unit quaternion in absolute action (norm " +
                        std::to_string(n) + ")");
  }
}

RobotState state_from_action(const ActionVector& a) {
  validate_action(a);
  RobotState s;
  for (int i = 0; i < kStateDims; ++i) s.values[size_t(i)] = a.values[size_t(i + 3)];
  for (int b = 1; b < kNumBlocks; ++b) s.mask[size_t(b)] = 1;
  return s;
}

NormStats compute_norm_stats(const std::vector<ActionVector>& actions) {
  if (actions.empty()) throw StatsError("no actions to compute stats from");
  std::array<Scalar, kActionDims> lo{}, hi{};
  lo.fill(std::numeric_limits<Scalar>::infinity());
  hi.fill(-std::numeric_limits<Scalar>::infinity());
  for (const auto& a : actions) {
    if (int(a.values.size()) != kActionDims)
      throw LayoutError("action with wrong dimension in stats computation");
    for (int i = 0; i < kActionDims; ++i) {
      const Scalar v = a.values[size_t(i)];
      if (!std::isfinite(v)) throw StatsError("non-finite action value");
      lo[size_t(i)] = std::min(lo[size_t(i)], v);
      hi[size_t(i)] = std::max(hi[size_t(i)], v);
    }
  }
  NormStats s;
  for (int i = 0; i < kActionDims; ++i) {
    if (is_quat_dim(i)) {
      s.location[size_t(i)] = 0.0;
      s.scale[size_t(i)] = 1.0;
    } else {
      s.location[size_t(i)] = 0.5 * (hi[size_t(i)] + lo[size_t(i)]);
      s.scale[size_t(i)] = std::max(0.5 * (hi[size_t(i)] - lo[size_t(i)]), Scalar(1e-6));
    }
  }
  return s;
}

namespace {
void check_stats(const NormStats& s) {
  for (int i = 0; i < kActionDims; ++i) {
    if (!std::isfinite(s.location[size_t(i)]) || !std::isfinite(s.scale[size_t(i)]))
      throw StatsError("non-finite normalization stats");
    if (s.scale[size_t(i)] <= 0.0) throw StatsError("non-positive normalization scale");
  }
}
}  // namespace

ActionVector normalize(const ActionVector& a, const NormStats& s) {
  if (int(a.values.size()) != kActionDims)
    throw LayoutError("normalize: wrong action dimension");
  check_stats(s);
  ActionVector out = a;
  for (int i = 0; i < kActionDims; ++i)
    if (!is_quat_dim(i))
      out.values[size_t(i)] = (a.values[size_t(i)] - s.location[size_t(i)]) / s.scale[size_t(i)];
  out.tag = FrameTag::normalized;
  return out;
}

ActionVector denormalize(const ActionVector& a, const NormStats& s) {
  if (int(a.values.size()) != kActionDims)
    throw LayoutError("denormalize: wrong action dimension");
  check_stats(s);
  ActionVector out = a;
  for (int i = 0; i < kActionDims; ++i)
    if (!is_quat_dim(i))
      out.values[size_t(i)] = a.values[size_t(i)] * s.scale[size_t(i)] + s.location[size_t(i)];
  out.tag = FrameTag::absolute_pose;
  return out;
}

}  // namespace densebody::morph
