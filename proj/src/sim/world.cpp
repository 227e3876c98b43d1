#include "densebody/sim/world.hpp"

#include <algorithm>
#include <cmath>

#include "densebody/core/errors.hpp"

namespace densebody::sim {

namespace {

constexpr std::array<std::array<Scalar, 3>, 4> kPalette = {{
    {0.85, 0.16, 0.16},  // red
    {0.22, 0.34, 0.88},  // blue
    {0.90, 0.82, 0.12},  // yellow
    {0.12, 0.78, 0.25},  // green (held out of training)
}};

constexpr std::array<Scalar, 3> kFloorTrain = {0.45, 0.42, 0.38};
constexpr std::array<Scalar, 3> kFloorSwap = {0.20, 0.45, 0.30};
constexpr std::array<Scalar, 3> kBgTrain = {0.72, 0.78, 0.90};
constexpr std::array<Scalar, 3> kBgSwap = {0.38, 0.32, 0.50};
constexpr std::array<Scalar, 3> kTableColor = {0.55, 0.42, 0.28};
constexpr std::array<Scalar, 3> kMatColor = {0.96, 0.96, 0.96};

const Vec3 kTableAHalf{0.25, 0.45, 0};  // z filled from height
const Vec3 kTableACenter{0.85, 0.0, 0};
const Vec3 kTableBCenter{2.30, 0.80, 0};
constexpr Scalar kMatHalf = 0.065;
constexpr Scalar kMatThick = 0.004;

// Camera axes in the mount frame: z_cam = forward(x), x_cam = right(-y),
// y_cam = down(-z).
const Quat kCamAxes{0.5, -0.5, 0.5, -0.5};

Scalar wrap_angle(Scalar a) {
  while (a > M_PI) a -= 2 * M_PI;
  while (a < -M_PI) a += 2 * M_PI;
  return a;
}

Scalar servo(Scalar cur, Scalar tgt, Scalar alpha, Scalar rate) {
  return cur + clamp(alpha * (tgt - cur), -rate, rate);
}

}  // namespace

const Limits& World::limits() {
  static const Limits l;
  return l;
}

TaskSpec TaskSpec::for_task(const std::string& id) {
  TaskSpec s;
  s.task = id;
  if (id == "pick_place" || id == "deliver" || id == "push") {
    s.tolerance = 0.05;
  } else if (id == "stack") {
    s.tolerance = 0.03;
  } else {
    throw SpecError("unknown task id: " + id);
  }
  return s;
}

void TaskSpec::apply_variation(const std::string& key, const std::string& value) {
  try {
    if (key == "light") {
      light = std::stod(value);
      if (light < 0 || light > 2) throw ConfigError("light out of [0,2]");
    } else if (key == "table_offset") {
      table_offset = std::stod(value);
    } else if (key == "object_color") {
      if (value == "held_out") {
        object_color = 3;
      } else {
        object_color = int(std::stol(value));
        if (object_color < -1 || object_color > 3)
          throw ConfigError("object_color out of range");
      }
    } else if (key == "object_scale") {
      object_scale = std::stod(value);
      if (object_scale <= 0.2 || object_scale > 2)
        throw ConfigError("object_scale out of (0.2,2]");
    } else if (key == "scene") {
      if (value == "swapped")
        scene_swap = true;
      else if (value == "train")
        scene_swap = false;
      else
        throw ConfigError("scene must be train|swapped");
    } else {
      throw ConfigError("unknown variation key: " + key);
    }
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad variation value for " + key + ": " + value);
  } catch (const std::out_of_range&) {
    throw ConfigError("bad variation value for " + key + ": " + value);
  }
}

World::World(const TaskSpec& spec, uint64_t seed, int horizon) : horizon_(horizon) {
  reset(spec, seed);
}

Observation World::reset(const TaskSpec& spec, uint64_t seed) {
  if (spec.task != "pick_place" && spec.task != "deliver" && spec.task != "stack" &&
      spec.task != "push")
    throw SpecError("unknown task id: " + spec.task);
  if (spec.tolerance <= 0) throw SpecError("tolerance must be positive");
  spec_ = spec;
  rob_ = RobotTruth{};
  rob_.left = {{0.42, 0.28, 0.92}, Quat::identity()};
  rob_.right = {{0.42, -0.28, 0.92}, Quat::identity()};
  objs_.clear();
  attached_ = {-1, -1};
  steps_ = 0;
  done_ = success_ = false;

  table_h_ = kTableTop + spec_.table_offset;
  tableA_c_ = {kTableACenter.x, kTableACenter.y, table_h_ / 2};
  tableB_c_ = {kTableBCenter.x, kTableBCenter.y, table_h_ / 2};
  has_tableB_ = spec_.task == "deliver";
  floor_color_ = spec_.scene_swap ? kFloorSwap : kFloorTrain;
  bg_ = spec_.scene_swap ? kBgSwap : kBgTrain;
  table_color_ = kTableColor;
  mat_color_ = kMatColor;

  core::Rng rng(seed);
  build_scene(rng);
  expert_arm_ = objs_[size_t(goal_obj_)].pos.y >= 0 ? 0 : 1;
  return observe();
}

void World::build_scene(core::Rng& rng) {
  // Draw order is fixed; determinism for a (spec, seed) pair depends on it.
  const int color_idx =
      spec_.object_color >= 0 ? spec_.object_color : int(rng.uniform_int(3));
  const Scalar half = 0.032 * spec_.object_scale;

  auto sample_on_table = [&](Scalar margin) {
    return Vec3{rng.uniform(0.72, 0.95),
                rng.uniform(-0.28 + margin, 0.28 - margin), 0};
  };

  ObjectTruth goal;
  goal.half = half;
  goal.color = kPalette[size_t(color_idx)];
  Vec3 p = sample_on_table(0.0);
  goal.pos = {p.x, p.y, table_h_ + half};
  objs_.push_back(goal);
  goal_obj_ = 0;
  stack_base_ = -1;
  has_mat_ = true;

  if (spec_.task == "pick_place") {
    Vec3 m = sample_on_table(0.0);
    for (int tries = 0; tries < 100 && (m - p).horiz_norm() < 0.18; ++tries)
      m = sample_on_table(0.0);
    mat_c_ = {m.x, m.y, table_h_ + 2 * kMatThick};
  } else if (spec_.task == "deliver") {
    mat_c_ = {rng.uniform(2.16, 2.44), rng.uniform(0.48, 1.12),
              table_h_ + 2 * kMatThick};
  } else if (spec_.task == "stack") {
    has_mat_ = false;
    ObjectTruth base;
    base.half = 0.036 * spec_.object_scale;
    base.color = kPalette[size_t((color_idx + 1) % 3)];
    Vec3 b = sample_on_table(0.0);
    for (int tries = 0; tries < 100 && (b - p).horiz_norm() < 0.16; ++tries)
      b = sample_on_table(0.0);
    base.pos = {b.x, b.y, table_h_ + base.half};
    objs_.push_back(base);
    stack_base_ = 1;
  } else {  // push
    Vec3 m = sample_on_table(0.04);
    for (int tries = 0; tries < 100; ++tries) {
      const Scalar d = (m - p).horiz_norm();
      if (d >= 0.14 && d <= 0.30) break;
      m = sample_on_table(0.04);
    }
    mat_c_ = {m.x, m.y, table_h_ + 2 * kMatThick};
  }
}

Vec3 World::target_center() const {
  if (spec_.task == "stack") {
    const ObjectTruth& b = objs_[size_t(stack_base_)];
    return {b.pos.x, b.pos.y, b.pos.z + b.half};
  }
  return mat_c_;
}

Pose World::world_from_base() const {
  return {{rob_.chassis_x, rob_.chassis_y, 0}, Quat::yaw(rob_.chassis_yaw)};
}

Pose World::ee_world(int arm) const {
  const ArmTruth& a = arm == 0 ? rob_.left : rob_.right;
  return world_from_base().compose({a.pos, a.rot});
}

Vec3 World::grip_point_world(int arm) const {
  return ee_world(arm).apply({kGripForward, 0, 0});
}

Camera World::camera(int idx) const {
  Camera cam;
  const Pose wb = world_from_base();
  if (idx == 0) {  // head: base -> torso top -> pan/tilt mount
    const Quat r_t = (Quat::yaw(rob_.torso[3]) * Quat::pitch(rob_.torso[1])).normalized();
    const Vec3 top{rob_.torso[2], 0, 1.00 + rob_.torso[0]};
    const Pose torso{top, r_t};
    const Quat r_h = (Quat::yaw(rob_.head_pan) * Quat::pitch(rob_.head_tilt)).normalized();
    const Pose head = torso.compose({{0.04, 0, 0.12}, r_h});
    // mounted clear of the 0.085-radius head shell so rays never self-hit
    cam.pose = wb.compose(head.compose({{0.105, 0, 0.015}, kCamAxes}));
  } else if (idx == 1) {  // torso camera, fixed on the chassis front
    cam.pose = wb.compose({{0.27, 0, 0.62}, (Quat::pitch(0.32) * kCamAxes).normalized()});
  } else {  // wrist cameras
    const Pose ee = ee_world(idx == 2 ? 0 : 1);
    cam.pose = ee.compose({{-0.07, 0, 0.065}, (Quat::pitch(0.85) * kCamAxes).normalized()});
  }
  return cam;
}

std::vector<Primitive> World::assemble_prims() const {
  std::vector<Primitive> prims;
  // Floor, top face exactly at z=0.
  prims.push_back({Shape::box, {{1.0, 0, -0.01}, Quat::identity()}, {4.0, 4.0, 0.01}, floor_color_});
  prims.push_back({Shape::box, {tableA_c_, Quat::identity()},
                   {kTableAHalf.x, kTableAHalf.y, table_h_ / 2}, table_color_});
  if (has_tableB_)
    prims.push_back({Shape::box, {tableB_c_, Quat::identity()},
                     {kTableAHalf.x, kTableAHalf.y, table_h_ / 2}, table_color_});
  if (has_mat_)
    prims.push_back({Shape::box, {{mat_c_.x, mat_c_.y, mat_c_.z - kMatThick}, Quat::identity()},
                     {kMatHalf, kMatHalf, kMatThick}, mat_color_});
  for (const auto& o : objs_)
    prims.push_back({Shape::box, {o.pos, o.rot}, {o.half, o.half, o.half}, o.color});

  // Robot body.
  const Pose wb = world_from_base();
  prims.push_back({Shape::box, wb.compose({{0, 0, 0.15}, Quat::identity()}),
                   {0.26, 0.21, 0.15}, {0.25, 0.25, 0.28}});
  const Scalar col_h = 0.70 + rob_.torso[0];
  const Quat r_t = (Quat::yaw(rob_.torso[3]) * Quat::pitch(rob_.torso[1])).normalized();
  prims.push_back({Shape::cylinder,
                   wb.compose({{rob_.torso[2] * 0.5, 0, 0.30 + col_h / 2}, r_t}),
                   {0.07, 0, col_h / 2}, {0.30, 0.30, 0.34}});
  const Vec3 top{rob_.torso[2], 0, 1.00 + rob_.torso[0]};
  prims.push_back({Shape::sphere, wb.compose({top + Vec3{0.04, 0, 0.12}, Quat::identity()}),
                   {0.085, 0, 0}, {0.80, 0.80, 0.82}});
  for (int arm = 0; arm < 2; ++arm) {
    const Pose ee = ee_world(arm);
    const Scalar w = rob_.grip[size_t(arm)];
    prims.push_back({Shape::box, ee.compose({{-0.01, 0, 0}, Quat::identity()}),
                     {0.016, 0.05, 0.02}, {0.55, 0.55, 0.60}});
    for (Scalar s : {Scalar(1), Scalar(-1)})
      prims.push_back({Shape::box,
                       ee.compose({{0.035, s * (w / 2 + 0.007), 0}, Quat::identity()}),
                       {0.035, 0.007, 0.018}, {0.50, 0.50, 0.55}});
  }
  return prims;
}

morph::RobotState World::state() const {
  std::array<Scalar, 4> q;
  auto put_quat = [&](const Quat& r) {
    Quat c = r.normalized();
    if (c.w < 0) c = {-c.w, -c.x, -c.y, -c.z};
    q = {c.w, c.x, c.y, c.z};
  };
  morph::RobotState s;
  int i = 0;
  for (int k = 0; k < 4; ++k) s.values[size_t(i++)] = rob_.torso[size_t(k)];
  for (const ArmTruth* a : {&rob_.left, &rob_.right}) {
    s.values[size_t(i++)] = a->pos.x;
    s.values[size_t(i++)] = a->pos.y;
    s.values[size_t(i++)] = a->pos.z;
    put_quat(a->rot);
    for (int k = 0; k < 4; ++k) s.values[size_t(i++)] = q[size_t(k)];
  }
  s.values[size_t(i++)] = rob_.head_pan;
  s.values[size_t(i++)] = rob_.head_tilt;
  s.values[size_t(i++)] = rob_.grip[0];
  s.values[size_t(i++)] = rob_.grip[1];
  for (int b = 1; b < morph::kNumBlocks; ++b) s.mask[size_t(b)] = 1;
  return s;
}

Observation World::observe() const {
  Observation obs;
  obs.state = state();
  if (obs_mode_ == ObserveMode::state_only) return obs;
  const auto prims = assemble_prims();
  const Pose bw = base_from_world();
  for (int c = 0; c < 4; ++c) {
    RenderResult r = render(prims, spec_.light, bg_, camera(c));
    obs.images[size_t(c)] = std::move(r.rgb);
    if (c == 0)
      obs.cloud = cloud_from_depth(r.depth, camera(0), bw, crop_lo(), crop_hi());
  }
  return obs;
}

void World::settle(ObjectTruth& o) {
  const Scalar bottom = o.pos.z - o.half;
  Scalar support = 0.0;  // floor
  auto consider = [&](Scalar top, Scalar dx, Scalar dy, Scalar fx, Scalar fy) {
    if (std::abs(dx) <= fx && std::abs(dy) <= fy && top <= bottom + 0.03)
      support = std::max(support, top);
  };
  consider(table_h_, o.pos.x - tableA_c_.x, o.pos.y - tableA_c_.y, kTableAHalf.x,
           kTableAHalf.y);
  if (has_tableB_)
    consider(table_h_, o.pos.x - tableB_c_.x, o.pos.y - tableB_c_.y, kTableAHalf.x,
             kTableAHalf.y);
  if (has_mat_)
    consider(mat_c_.z, o.pos.x - mat_c_.x, o.pos.y - mat_c_.y, kMatHalf, kMatHalf);
  for (const auto& other : objs_) {
    if (&other == &o || other.attached_arm >= 0) continue;
    consider(other.pos.z + other.half, o.pos.x - other.pos.x, o.pos.y - other.pos.y,
             other.half, other.half);
  }
  o.pos.z = support + o.half;
}

bool World::predicate() const {
  const ObjectTruth& g = objs_[size_t(goal_obj_)];
  if (g.attached_arm >= 0) return false;
  if (spec_.task == "stack") {
    const ObjectTruth& b = objs_[size_t(stack_base_)];
    const Scalar dz = g.pos.z - (b.pos.z + b.half + g.half);
    return (g.pos - b.pos).horiz_norm() <= spec_.tolerance && std::abs(dz) <= 0.012;
  }
  const Vec3 d = g.pos - mat_c_;
  if (d.horiz_norm() > spec_.tolerance) return false;
  // Must be resting at mat level, not dropped elsewhere or still in the air.
  return std::abs((g.pos.z - g.half) - mat_c_.z) <= 0.02;
}

World::StepResult World::step(const morph::ActionVector& a) {
  if (done_) throw EpisodeError("step after episode end");
  if (a.tag != morph::FrameTag::absolute_pose)
    throw LayoutError("step expects an absolute-pose action");
  morph::validate_action(a);
  const morph::ActionBlocks blk = morph::unpack_action(a);
  const Limits& lim = limits();

  const std::array<Vec3, 2> grip_prev = {grip_point_world(0), grip_point_world(1)};
  const std::array<Scalar, 2> width_prev = rob_.grip;

  // Chassis: the delta itself is the command; clamp, rotate into world.
  {
    Vec3 d{blk.chassis[0], blk.chassis[1], 0};
    const Scalar n = d.horiz_norm();
    if (n > lim.chassis_xy) d = d * (lim.chassis_xy / n);
    const Vec3 dw = Quat::yaw(rob_.chassis_yaw).rotate(d);
    rob_.chassis_x += dw.x;
    rob_.chassis_y += dw.y;
    rob_.chassis_yaw = wrap_angle(rob_.chassis_yaw +
                                  clamp(blk.chassis[2], -lim.chassis_yaw, lim.chassis_yaw));
  }

  // Everything else servos toward its commanded absolute pose.
  static constexpr std::array<std::array<Scalar, 2>, 4> kTorsoRange = {{
      {0.0, 0.25}, {-0.3, 0.5}, {-0.1, 0.25}, {-0.6, 0.6}}};
  for (int k = 0; k < 4; ++k) {
    const Scalar tgt = clamp(blk.torso[size_t(k)], kTorsoRange[size_t(k)][0],
                             kTorsoRange[size_t(k)][1]);
    rob_.torso[size_t(k)] = servo(rob_.torso[size_t(k)], tgt, lim.alpha, lim.torso[size_t(k)]);
  }
  for (int arm = 0; arm < 2; ++arm) {
    ArmTruth& at = arm == 0 ? rob_.left : rob_.right;
    const auto& b = arm == 0 ? blk.left : blk.right;
    const Vec3 tgt{b[0], b[1], b[2]};
    Vec3 step = (tgt - at.pos) * lim.alpha;
    const Scalar n = step.norm();
    if (n > lim.arm_pos) step = step * (lim.arm_pos / n);
    at.pos = at.pos + step;
    const Quat qt{b[3], b[4], b[5], b[6]};
    const Scalar ang = (qt * at.rot.conjugate()).angle();
    if (ang > 1e-9) {
      const Scalar applied = std::min(lim.alpha * ang, lim.arm_rot);
      at.rot = at.rot.slerp_toward(qt, applied / ang);
    }
  }
  rob_.head_pan = servo(rob_.head_pan, clamp(blk.head[0], -1.6, 1.6), lim.alpha, lim.head);
  rob_.head_tilt = servo(rob_.head_tilt, clamp(blk.head[1], -0.3, 1.2), lim.alpha, lim.head);
  for (int g = 0; g < 2; ++g)
    rob_.grip[size_t(g)] =
        servo(rob_.grip[size_t(g)], clamp(blk.grip[size_t(g)], 0.0, kGripMax), lim.alpha, lim.grip);

  const bool drag_mode = spec_.task == "push";
  for (int arm = 0; arm < 2; ++arm) {
    const bool closed_now = rob_.grip[size_t(arm)] < kAttachWidth;
    const bool closed_before = width_prev[size_t(arm)] < kAttachWidth;
    if (!drag_mode && closed_now && !closed_before && attached_[size_t(arm)] < 0) {
      // Closing crossed the threshold: attach the nearest object in reach.
      const Vec3 gp = grip_point_world(arm);
      int best = -1;
      Scalar best_d = kGraspRadius;
      for (size_t i = 0; i < objs_.size(); ++i) {
        if (objs_[i].attached_arm >= 0) continue;
        const Scalar d = (objs_[i].pos - gp).norm();
        if (d <= best_d) {
          best_d = d;
          best = int(i);
        }
      }
      if (best >= 0) {
        attached_[size_t(arm)] = best;
        objs_[size_t(best)].attached_arm = arm;
        const Pose inv = ee_world(arm).inverse();
        attach_off_[size_t(arm)] = {inv.apply(objs_[size_t(best)].pos),
                                    (inv.q * objs_[size_t(best)].rot).normalized()};
      }
    } else if (!closed_now && closed_before && attached_[size_t(arm)] >= 0) {
      ObjectTruth& o = objs_[size_t(attached_[size_t(arm)])];
      o.attached_arm = -1;
      attached_[size_t(arm)] = -1;
      settle(o);
    }
  }
  for (int arm = 0; arm < 2; ++arm) {
    if (attached_[size_t(arm)] < 0) continue;
    ObjectTruth& o = objs_[size_t(attached_[size_t(arm)])];
    const Pose p = ee_world(arm).compose(attach_off_[size_t(arm)]);
    o.pos = p.t;
    o.rot = p.q;
  }
  if (drag_mode) {
    for (int arm = 0; arm < 2; ++arm) {
      if (rob_.grip[size_t(arm)] >= kAttachWidth) continue;
      const Vec3 gp = grip_point_world(arm);
      const Vec3 delta = gp - grip_prev[size_t(arm)];
      for (auto& o : objs_) {
        if (o.attached_arm >= 0) continue;
        if ((o.pos - gp).horiz_norm() <= o.half + 0.045 &&
            std::abs(gp.z - o.pos.z) <= 0.08) {
          o.pos.x += delta.x;
          o.pos.y += delta.y;
        }
      }
    }
  }

  ++steps_;
  success_ = predicate();
  done_ = success_ || steps_ >= horizon_;
  StepResult r;
  r.obs = observe();
  r.done = done_;
  r.success = success_;
  return r;
}

}  // namespace densebody::sim
