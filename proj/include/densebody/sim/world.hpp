#pragma once

#include <array>
#include <string>
#include <vector>

#include "densebody/core/rng.hpp"
#include "densebody/morph/morphology.hpp"
#include "densebody/sim/render.hpp"

namespace densebody::sim {

// Task identity plus generalization knobs. Defaults are the training
// condition; the evaluation axes change exactly one knob each.
struct TaskSpec {
  std::string task = "pick_place";  // pick_place | deliver | stack | push
  Scalar tolerance = 0.05;          // success radius around the target, meters

  Scalar light = 1.0;          // ambient scale (light axis: 0.25)
  Scalar table_offset = 0.0;   // added to table height (spatial axis: +0.05)
  int object_color = -1;       // -1 sample train palette; 0..2 fixed; 3 held-out
  Scalar object_scale = 1.0;   // object size multiplier (shape axis: 0.7)
  bool scene_swap = false;     // swapped floor/background colors (scene axis)

  static TaskSpec for_task(const std::string& id);  // SpecError on unknown id
  void apply_variation(const std::string& key, const std::string& value);
};

struct Observation {
  std::array<Image, 4> images;  // head, torso, left_wrist, right_wrist
  std::vector<std::array<float, 3>> cloud;  // base frame, cropped
  morph::RobotState state;
};

struct ArmTruth {
  Vec3 pos;  // base frame
  Quat rot;
};

struct RobotTruth {
  Scalar chassis_x = 0, chassis_y = 0, chassis_yaw = 0;  // world frame
  std::array<Scalar, 4> torso{};  // lift, pitch, forward lean, yaw offset
  ArmTruth left, right;
  Scalar head_pan = 0, head_tilt = 0.55;
  std::array<Scalar, 2> grip{0.07, 0.07};  // opening widths
};

struct ObjectTruth {
  Vec3 pos;  // world frame, center
  Quat rot;
  Scalar half = 0.032;
  std::array<Scalar, 3> color{0.8, 0.2, 0.2};
  int attached_arm = -1;  // -1 free, 0 left, 1 right
};

// Rollouts that only score success/failure can skip rendering entirely;
// dynamics are unaffected (rendering consumes no randomness).
enum class ObserveMode { full, state_only };

// Per-step motion limits and the servo gain. Components move a fraction
// `alpha` of the way to their commanded pose, clamped by these rates.
struct Limits {
  Scalar alpha = 0.6;
  Scalar chassis_xy = 0.15, chassis_yaw = 0.3;
  Scalar arm_pos = 0.10, arm_rot = 0.3;
  std::array<Scalar, 4> torso{0.04, 0.1, 0.04, 0.1};
  Scalar head = 0.25, grip = 0.02;
};

class World {
 public:
  static constexpr int kDefaultHorizon = 96;
  static constexpr Scalar kGripMax = 0.08;
  static constexpr Scalar kAttachWidth = 0.04;  // attach/release crossing
  static constexpr Scalar kGraspRadius = 0.04;
  static constexpr Scalar kTableTop = 0.75;
  static constexpr Scalar kGripForward = 0.035;  // grip point ahead of the palm

  World(const TaskSpec& spec, uint64_t seed, int horizon = kDefaultHorizon);
  Observation reset(const TaskSpec& spec, uint64_t seed);

  struct StepResult {
    Observation obs;
    bool done = false;
    bool success = false;
  };
  // EpisodeError once done; LayoutError on malformed/normalized actions.
  StepResult step(const morph::ActionVector& a);

  Observation observe() const;
  void set_observe_mode(ObserveMode m) { obs_mode_ = m; }

  const TaskSpec& spec() const { return spec_; }
  const RobotTruth& robot() const { return rob_; }
  const std::vector<ObjectTruth>& objects() const { return objs_; }
  int goal_object() const { return goal_obj_; }
  int stack_base_object() const { return stack_base_; }
  // World-frame target the goal object should end up at (mat center or the
  // top of the stack base).
  Vec3 target_center() const;
  Scalar table_top() const { return table_h_; }
  int expert_arm() const { return expert_arm_; }
  int steps_taken() const { return steps_; }
  int horizon() const { return horizon_; }
  bool done() const { return done_; }
  bool success() const { return success_; }

  Pose world_from_base() const;
  Pose base_from_world() const { return world_from_base().inverse(); }
  Vec3 to_base(const Vec3& p) const { return base_from_world().apply(p); }
  Pose ee_world(int arm) const;
  Vec3 grip_point_world(int arm) const;
  Camera camera(int idx) const;  // 0 head, 1 torso, 2 left wrist, 3 right wrist

  // Full primitive list (scene + robot body) used by the renderer.
  std::vector<Primitive> assemble_prims() const;

  static const Limits& limits();
  static Vec3 crop_lo() { return {-0.4, -1.5, 0.02}; }
  static Vec3 crop_hi() { return {2.6, 1.5, 2.0}; }

 private:
  void build_scene(core::Rng& rng);
  void settle(ObjectTruth& o);
  bool predicate() const;
  morph::RobotState state() const;

  TaskSpec spec_;
  int horizon_ = kDefaultHorizon;
  RobotTruth rob_;
  std::vector<ObjectTruth> objs_;
  std::array<int, 2> attached_{-1, -1};  // object index held by each arm
  std::array<Pose, 2> attach_off_;       // object pose in the EE frame

  Scalar table_h_ = kTableTop;
  Vec3 tableA_c_, tableB_c_;
  bool has_tableB_ = false;
  Vec3 mat_c_;       // mat center, z at the mat's top surface
  bool has_mat_ = true;
  int goal_obj_ = 0;
  int stack_base_ = -1;
  int expert_arm_ = 0;
  std::array<Scalar, 3> bg_{}, floor_color_{}, table_color_{}, mat_color_{};

  int steps_ = 0;
  bool done_ = false, success_ = false;
  ObserveMode obs_mode_ = ObserveMode::full;
};

// Deterministic scripted controller: a phase machine evaluated statelessly
// from the world truth each step.
morph::ActionVector expert_action(const World& w);

}  // namespace densebody::sim
