#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "densebody/core/tensor.hpp"

namespace densebody::morph {

using core::Scalar;

// Component-wise action layout shared by the simulator, datasets and the
// policy. Order and widths are fixed:
//   chassis_delta  3  (dx, dy, dyaw in the pre-step base frame)
//   torso_pose     4  (lift z, pitch, forward lean, yaw offset)
//   left_arm_pose  7  (xyz + wxyz unit quaternion, base frame)
//   right_arm_pose 7
//   head_pose      2  (pan, tilt)
//   grippers       2  (left/right opening width)
struct Block {
  const char* name;
  int offset;
  int width;
};

inline constexpr int kNumBlocks = 6;
inline constexpr std::array<Block, kNumBlocks> kLayout = {{
    {"chassis_delta", 0, 3},
    {"torso_pose", 3, 4},
    {"left_arm_pose", 7, 7},
    {"right_arm_pose", 14, 7},
    {"head_pose", 21, 2},
    {"grippers", 23, 2},
}};

inline constexpr int kActionDims = 25;
inline constexpr int kStateDims = 22;  // action minus the chassis delta
inline constexpr int kLeftQuatOffset = 10;
inline constexpr int kRightQuatOffset = 17;

inline constexpr bool is_quat_dim(int i) {
  return (i >= kLeftQuatOffset && i < kLeftQuatOffset + 4) ||
         (i >= kRightQuatOffset && i < kRightQuatOffset + 4);
}

enum class FrameTag { absolute_pose, normalized };

struct ActionVector {
  std::vector<Scalar> values;  // kActionDims scalars in layout order
  FrameTag tag = FrameTag::absolute_pose;
};

struct ActionBlocks {
  std::vector<Scalar> chassis, torso, left, right, head, grip;
};

// Robot state as seen by the policy: all blocks except the chassis delta,
// plus a per-block validity mask in full layout order (the chassis entry is
// always 0 — its pose is never an input).
struct RobotState {
  std::array<Scalar, kStateDims> values{};
  std::array<uint8_t, kNumBlocks> mask{};
};

// In-place unit normalization with w >= 0 canonicalization.
// Throws DegenerateRotationError on (near-)zero quaternions.
void canonicalize_quat(Scalar* q);

// Throws LayoutError on wrong block widths, DegenerateRotationError on zero
// quaternions. Quaternions are renormalized and sign-canonicalized.
ActionVector pack_action(const std::vector<Scalar>& chassis,
                         const std::vector<Scalar>& torso,
                         const std::vector<Scalar>& left,
                         const std::vector<Scalar>& right,
                         const std::vector<Scalar>& head,
                         const std::vector<Scalar>& grip);

ActionBlocks unpack_action(const ActionVector& a);

// Throws LayoutError / DegenerateRotationError if `a` violates the layout
// invariants (for absolute_pose, quaternions must be unit within tol).
void validate_action(const ActionVector& a, Scalar quat_tol = 1e-6);

// The state is the action's non-chassis blocks; mask marks every block valid
// except the chassis.
RobotState state_from_action(const ActionVector& a);

struct NormStats {
  std::array<Scalar, kActionDims> location{};
  std::array<Scalar, kActionDims> scale{};
};

// Per-dimension midrange/half-range over a demo set; quaternion dims are
// pinned to location 0, scale 1; half-ranges are floored to keep scales > 0.
NormStats compute_norm_stats(const std::vector<ActionVector>& actions);

// (v - location) / scale on non-quaternion dims; quaternion dims unchanged.
ActionVector normalize(const ActionVector& a, const NormStats& s);
ActionVector denormalize(const ActionVector& a, const NormStats& s);

}  // namespace densebody::morph
