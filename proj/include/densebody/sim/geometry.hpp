#pragma once

#include <cmath>

#include "densebody/core/tensor.hpp"

namespace densebody::sim {

using core::Scalar;

struct Vec3 {
  Scalar x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(Scalar s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Scalar dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  Scalar norm2() const { return dot(*this); }
  Scalar norm() const { return std::sqrt(norm2()); }
  Scalar horiz_norm() const { return std::sqrt(x * x + y * y); }
  Vec3 normalized() const {
    const Scalar n = norm();
    return n > 0 ? Vec3{x / n, y / n, z / n} : Vec3{};
  }
};

// Unit quaternion, wxyz.
struct Quat {
  Scalar w = 1, x = 0, y = 0, z = 0;

  static Quat identity() { return {}; }
  static Quat from_axis_angle(const Vec3& axis, Scalar angle) {
    const Scalar n = axis.norm();
    if (n == 0 || angle == 0) return {};
    const Scalar h = 0.5 * angle, s = std::sin(h) / n;
    return {std::cos(h), axis.x * s, axis.y * s, axis.z * s};
  }
  static Quat yaw(Scalar a) { return from_axis_angle({0, 0, 1}, a); }
  static Quat pitch(Scalar a) { return from_axis_angle({0, 1, 0}, a); }

  Quat operator*(const Quat& o) const {
    return {w * o.w - x * o.x - y * o.y - z * o.z,
            w * o.x + x * o.w + y * o.z - z * o.y,
            w * o.y - x * o.z + y * o.w + z * o.x,
            w * o.z + x * o.y - y * o.x + z * o.w};
  }
  Quat conjugate() const { return {w, -x, -y, -z}; }
  Scalar norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quat normalized() const {
    const Scalar n = norm();
    return {w / n, x / n, y / n, z / n};
  }

  Vec3 rotate(const Vec3& v) const {
    // v' = v + 2 u x (u x v + w v), u = (x,y,z)
    const Vec3 u{x, y, z};
    const Vec3 t = u.cross(Vec3{v.x, v.y, v.z}) * 2.0;
    return v + t * w + u.cross(t);
  }

  // Angle of the rotation this quaternion represents, in [0, pi].
  Scalar angle() const {
    const Scalar c = std::min(Scalar(1), std::abs(w) / norm());
    return 2.0 * std::acos(c);
  }

  // Rotate a fraction f of the way toward `target` (shortest arc).
  Quat slerp_toward(const Quat& target, Scalar f) const {
    Quat rel = target * conjugate();
    if (rel.w < 0) rel = {-rel.w, -rel.x, -rel.y, -rel.z};
    const Scalar ang = rel.angle();
    if (ang < 1e-12 || f >= 1.0) return f >= 1.0 ? target : *this;
    const Vec3 axis = Vec3{rel.x, rel.y, rel.z}.normalized();
    return (from_axis_angle(axis, ang * f) * *this).normalized();
  }
};

// Rigid transform: p -> q.rotate(p) + t.
struct Pose {
  Vec3 t;
  Quat q;

  Vec3 apply(const Vec3& p) const { return q.rotate(p) + t; }
  Vec3 apply_dir(const Vec3& d) const { return q.rotate(d); }
  Pose compose(const Pose& inner) const { return {apply(inner.t), (q * inner.q).normalized()}; }
  Pose inverse() const {
    const Quat qi = q.conjugate();
    return {qi.rotate(-t), qi};
  }
};

inline Scalar clamp(Scalar v, Scalar lo, Scalar hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace densebody::sim
