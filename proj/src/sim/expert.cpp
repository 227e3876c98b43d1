#include <cmath>

#include "densebody/sim/world.hpp"

namespace densebody::sim {

namespace {

const std::array<Vec3, 2> kHome = {{{0.42, 0.28, 0.92}, {0.42, -0.28, 0.92}}};

// Full command set with neutral defaults; filled per phase, then packed.
struct Cmd {
  std::array<Scalar, 3> chassis{0, 0, 0};
  std::array<Scalar, 4> torso{0, 0, 0, 0};
  std::array<Vec3, 2> arm_pos = kHome;
  std::array<Quat, 2> arm_rot = {Quat::identity(), Quat::identity()};
  std::array<Scalar, 2> head{0, 0.55};
  std::array<Scalar, 2> grip{0.06, 0.06};
};

morph::ActionVector pack(const Cmd& c) {
  auto arm = [&](int i) {
    return std::vector<Scalar>{c.arm_pos[size_t(i)].x, c.arm_pos[size_t(i)].y,
                               c.arm_pos[size_t(i)].z, c.arm_rot[size_t(i)].w,
                               c.arm_rot[size_t(i)].x, c.arm_rot[size_t(i)].y,
                               c.arm_rot[size_t(i)].z};
  };
  return morph::pack_action({c.chassis[0], c.chassis[1], c.chassis[2]},
                            {c.torso[0], c.torso[1], c.torso[2], c.torso[3]},
                            arm(0), arm(1), {c.head[0], c.head[1]},
                            {c.grip[0], c.grip[1]});
}

// Aim the head camera at a base-frame point.
void track(Cmd& c, const RobotTruth& rob, const Vec3& p) {
  const Quat r_t = (Quat::yaw(rob.torso[3]) * Quat::pitch(rob.torso[1])).normalized();
  const Vec3 head_c = Vec3{rob.torso[2], 0, 1.00 + rob.torso[0]} + r_t.rotate({0.04, 0, 0.12});
  const Vec3 d = p - head_c;
  c.head = {std::atan2(d.y, d.x), std::atan2(-d.z, d.horiz_norm())};
}

// Shared grasp/transport/place machine for the lift-style tasks. `tgt` is the
// base-frame support point the object should end centered on (its z is the
// support's top surface).
void pick_and_place(Cmd& c, const World& w, int arm, const Vec3& ob, const Vec3& tgt,
                    Scalar transport_thresh, Scalar carry_z) {
  const ArmTruth& at = arm == 0 ? w.robot().left : w.robot().right;
  const Scalar width = w.robot().grip[size_t(arm)];
  const ObjectTruth& obj = w.objects()[size_t(w.goal_object())];
  const Scalar gx = ob.x - World::kGripForward;
  const bool held = obj.attached_arm == arm;
  const Scalar place_z = tgt.z + obj.half + 0.004;

  bool low_reach = false;
  if (held) {
    const Scalar horiz = std::hypot(at.pos.x - (tgt.x - World::kGripForward),
                                    at.pos.y - tgt.y);
    if (horiz > transport_thresh) {  // transport at carry height
      c.arm_pos[size_t(arm)] = {tgt.x - World::kGripForward, tgt.y, carry_z};
      c.grip[size_t(arm)] = 0.0;
    } else if (at.pos.z > place_z + 0.012) {  // lower onto the support
      c.arm_pos[size_t(arm)] = {tgt.x - World::kGripForward, tgt.y, place_z};
      c.grip[size_t(arm)] = 0.0;
      low_reach = true;
    } else {  // open to release
      c.arm_pos[size_t(arm)] = {tgt.x - World::kGripForward, tgt.y, place_z};
      c.grip[size_t(arm)] = 0.07;
      low_reach = true;
    }
  } else if (std::hypot(ob.x - tgt.x, ob.y - tgt.y) <= 0.8 * w.spec().tolerance &&
             obj.attached_arm < 0) {
    c.arm_pos[size_t(arm)] = kHome[size_t(arm)];  // done; retreat
    c.grip[size_t(arm)] = 0.06;
  } else if (width < World::kAttachWidth && obj.attached_arm < 0) {
    c.arm_pos[size_t(arm)] = at.pos;  // missed grasp: reopen in place, retry
    c.grip[size_t(arm)] = 0.07;
  } else {
    const Scalar horiz = std::hypot(at.pos.x - gx, at.pos.y - ob.y);
    if (horiz > 0.02) {  // approach above the object
      c.arm_pos[size_t(arm)] = {gx, ob.y, ob.z + 0.12};
      c.grip[size_t(arm)] = 0.07;
    } else if (std::abs(at.pos.z - ob.z) > 0.012) {  // descend to grasp height
      c.arm_pos[size_t(arm)] = {gx, ob.y, ob.z};
      c.grip[size_t(arm)] = 0.07;
      low_reach = true;
    } else {  // close
      c.arm_pos[size_t(arm)] = {gx, ob.y, ob.z};
      c.grip[size_t(arm)] = 0.0;
      low_reach = true;
    }
  }
  if (low_reach) {
    c.torso[1] = 0.08;
    c.torso[2] = 0.06;
  }
}

void push_task(Cmd& c, const World& w, int arm, const Vec3& ob, const Vec3& tgt) {
  const ArmTruth& at = arm == 0 ? w.robot().left : w.robot().right;
  const Scalar width = w.robot().grip[size_t(arm)];
  const ObjectTruth& obj = w.objects()[size_t(w.goal_object())];
  Vec3 dir{tgt.x - ob.x, tgt.y - ob.y, 0};
  dir = dir.horiz_norm() > 1e-9 ? dir * (1.0 / dir.horiz_norm()) : Vec3{1, 0, 0};
  const Scalar push_z = ob.z;
  auto ee_for_grip = [&](Scalar gx, Scalar gy, Scalar gz) {
    return Vec3{gx - World::kGripForward, gy, gz};
  };
  const Vec3 behind{ob.x - dir.x * (obj.half + 0.014), ob.y - dir.y * (obj.half + 0.014), 0};
  const Vec3 grip_now = at.pos + Vec3{World::kGripForward, 0, 0};

  if (std::hypot(ob.x - tgt.x, ob.y - tgt.y) <= 0.6 * w.spec().tolerance) {
    if (width < 0.045) {
      c.arm_pos[size_t(arm)] = at.pos;  // let go before retreating
      c.grip[size_t(arm)] = 0.06;
    } else {
      c.arm_pos[size_t(arm)] = kHome[size_t(arm)];
      c.grip[size_t(arm)] = 0.06;
    }
    return;
  }
  c.torso[1] = 0.08;
  c.torso[2] = 0.06;
  if (width > 0.045) {  // staging with the gripper open never drags
    if (std::hypot(grip_now.x - behind.x, grip_now.y - behind.y) > 0.025) {
      c.arm_pos[size_t(arm)] = ee_for_grip(behind.x, behind.y, push_z + 0.08);
      c.grip[size_t(arm)] = 0.07;
    } else if (at.pos.z > push_z + 0.012) {
      c.arm_pos[size_t(arm)] = ee_for_grip(behind.x, behind.y, push_z);
      c.grip[size_t(arm)] = 0.07;
    } else {
      c.arm_pos[size_t(arm)] = at.pos;  // hold and close to engage
      c.grip[size_t(arm)] = 0.0;
    }
  } else {
    // Engaged: the object rides the grip's motion exactly, so commanding the
    // grip by the object's own error vector steers the object straight at the
    // target whatever the contact offset is. The step cap keeps the dragged
    // pair inside the drag radius.
    Vec3 need{tgt.x - ob.x, tgt.y - ob.y, 0};
    const Scalar a = World::limits().alpha;
    const Scalar dn = need.horiz_norm();
    if (a * dn > 0.025) need = need * (0.025 / (a * dn));
    c.arm_pos[size_t(arm)] = {at.pos.x + need.x, at.pos.y + need.y, push_z};
    c.grip[size_t(arm)] = 0.0;
  }
}

}  // namespace

morph::ActionVector expert_action(const World& w) {
  const int arm = w.expert_arm();
  const ObjectTruth& obj = w.objects()[size_t(w.goal_object())];
  const Vec3 ob = w.to_base(obj.pos);
  const Vec3 tgt = w.to_base(w.target_center());
  const bool held = obj.attached_arm == arm;

  Cmd c;
  track(c, w.robot(), held ? tgt : ob);

  const std::string& task = w.spec().task;
  if (task == "pick_place") {
    pick_and_place(c, w, arm, ob, tgt, 0.02, w.table_top() + 0.20);
  } else if (task == "stack") {
    pick_and_place(c, w, arm, ob, tgt, 0.012, w.table_top() + 0.18);
  } else if (task == "push") {
    push_task(c, w, arm, ob, tgt);
  } else {  // deliver: pick at station A, drive to station B, place
    const Vec3 station = held ? Vec3{1.45, 0.8, 0} : Vec3{0, 0, 0};
    const Scalar dist = std::hypot(w.robot().chassis_x - station.x,
                                   w.robot().chassis_y - station.y);
    if (dist > 0.06) {
      const Vec3 d_world{station.x - w.robot().chassis_x,
                         station.y - w.robot().chassis_y, 0};
      Vec3 d = Quat::yaw(-w.robot().chassis_yaw).rotate(d_world);
      const Scalar n = d.horiz_norm();
      if (n > 0.14) d = d * (0.14 / n);
      c.chassis = {d.x, d.y, clamp(-w.robot().chassis_yaw, -0.28, 0.28)};
      if (held) {
        const Scalar side = arm == 0 ? 1.0 : -1.0;
        c.arm_pos[size_t(arm)] = {0.45, side * 0.18, w.table_top() + 0.20};
        c.grip[size_t(arm)] = 0.0;
        c.torso[0] = 0.06;
      }
    } else {
      pick_and_place(c, w, arm, ob, tgt, 0.02, w.table_top() + 0.20);
      if (held) c.torso[0] = 0.06;
    }
  }
  return pack(c);
}

}  // namespace densebody::sim
