#include "densebody/sim/render.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace densebody::sim {

namespace {

Hit hit_sphere(const Vec3& o, const Vec3& d, Scalar r, Scalar tmin) {
  // |o + t d|^2 = r^2
  const Scalar a = d.norm2();
  const Scalar b = 2.0 * o.dot(d);
  const Scalar c = o.norm2() - r * r;
  const Scalar disc = b * b - 4 * a * c;
  Hit h;
  if (disc < 0) return h;
  const Scalar sq = std::sqrt(disc);
  Scalar t = (-b - sq) / (2 * a);
  if (t <= tmin) t = (-b + sq) / (2 * a);
  if (t <= tmin) return h;
  h.t = t;
  h.normal = (o + d * t).normalized();
  h.ok = true;
  return h;
}

Hit hit_box(const Vec3& o, const Vec3& d, const Vec3& half, Scalar tmin) {
  // Slab test in the box's local frame.
  Scalar t0 = tmin, t1 = std::numeric_limits<Scalar>::infinity();
  int axis0 = -1;
  Scalar sign0 = 0;
  const Scalar ov[3] = {o.x, o.y, o.z};
  const Scalar dv[3] = {d.x, d.y, d.z};
  const Scalar hv[3] = {half.x, half.y, half.z};
  for (int i = 0; i < 3; ++i) {
    if (std::abs(dv[i]) < 1e-15) {
      if (std::abs(ov[i]) > hv[i]) return {};
      continue;
    }
    Scalar ta = (-hv[i] - ov[i]) / dv[i];
    Scalar tb = (hv[i] - ov[i]) / dv[i];
    Scalar sgn = -1;
    if (ta > tb) {
      std::swap(ta, tb);
      sgn = 1;
    }
    if (ta > t0) {
      t0 = ta;
      axis0 = i;
      sign0 = sgn;
    }
    t1 = std::min(t1, tb);
    if (t0 > t1) return {};
  }
  Hit h;
  if (axis0 < 0) return h;  // origin inside the box: treat as miss
  h.t = t0;
  h.normal = Vec3{axis0 == 0 ? sign0 : 0, axis0 == 1 ? sign0 : 0, axis0 == 2 ? sign0 : 0};
  h.ok = true;
  return h;
}

Hit hit_cylinder(const Vec3& o, const Vec3& d, Scalar r, Scalar hh, Scalar tmin) {
  Hit best;
  Scalar best_t = std::numeric_limits<Scalar>::infinity();
  // Side: (ox + t dx)^2 + (oy + t dy)^2 = r^2, |z| <= hh
  const Scalar a = d.x * d.x + d.y * d.y;
  if (a > 1e-15) {
    const Scalar b = 2 * (o.x * d.x + o.y * d.y);
    const Scalar c = o.x * o.x + o.y * o.y - r * r;
    const Scalar disc = b * b - 4 * a * c;
    if (disc >= 0) {
      const Scalar sq = std::sqrt(disc);
      for (Scalar t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
        if (t <= tmin || t >= best_t) continue;
        const Scalar z = o.z + t * d.z;
        if (std::abs(z) <= hh) {
          best_t = t;
          best.t = t;
          best.normal = Vec3{o.x + t * d.x, o.y + t * d.y, 0}.normalized();
          best.ok = true;
        }
      }
    }
  }
  // Caps at z = +-hh
  if (std::abs(d.z) > 1e-15) {
    for (Scalar s : {Scalar(1), Scalar(-1)}) {
      const Scalar t = (s * hh - o.z) / d.z;
      if (t <= tmin || t >= best_t) continue;
      const Scalar px = o.x + t * d.x, py = o.y + t * d.y;
      if (px * px + py * py <= r * r) {
        best_t = t;
        best.t = t;
        best.normal = Vec3{0, 0, s};
        best.ok = true;
      }
    }
  }
  return best;
}

}  // namespace

Hit intersect(const Primitive& prim, const Vec3& o, const Vec3& d, Scalar tmin) {
  // Work in the primitive's local frame; t is preserved by rigid transforms.
  const Pose inv = prim.pose.inverse();
  const Vec3 ol = inv.apply(o);
  const Vec3 dl = inv.apply_dir(d);
  Hit h;
  switch (prim.shape) {
    case Shape::sphere: h = hit_sphere(ol, dl, prim.half.x, tmin); break;
    case Shape::box: h = hit_box(ol, dl, prim.half, tmin); break;
    case Shape::cylinder: h = hit_cylinder(ol, dl, prim.half.x, prim.half.z, tmin); break;
  }
  if (h.ok) h.normal = prim.pose.apply_dir(h.normal);
  return h;
}

RenderResult render(const std::vector<Primitive>& prims, Scalar ambient,
                    const std::array<Scalar, 3>& background, const Camera& cam) {
  RenderResult out;
  out.rgb.h = cam.height;
  out.rgb.w = cam.width;
  out.rgb.rgb.assign(size_t(cam.height) * size_t(cam.width) * 3, 0);
  out.depth.assign(size_t(cam.height) * size_t(cam.width), 0.0f);

  // Fixed overhead light; shading floor keeps unlit faces visible.
  const Vec3 light = Vec3{0.35, 0.2, 0.92}.normalized();
  const Vec3 origin = cam.pose.t;

  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      // Unnormalized direction with unit camera-z, so hit t equals z-depth.
      const Vec3 d_cam{(Scalar(u) + 0.5 - cam.cx) / cam.fx,
                       (Scalar(v) + 0.5 - cam.cy) / cam.fy, 1.0};
      const Vec3 d = cam.pose.apply_dir(d_cam);
      Scalar best_t = std::numeric_limits<Scalar>::infinity();
      int best_i = -1;
      Vec3 best_n;
      for (size_t i = 0; i < prims.size(); ++i) {
        const Hit h = intersect(prims[i], origin, d);
        if (h.ok && h.t < best_t) {
          best_t = h.t;
          best_i = int(i);
          best_n = h.normal;
        }
      }
      std::array<Scalar, 3> col = background;
      if (best_i >= 0) {
        const Scalar lambert = std::max(Scalar(0), best_n.dot(light));
        const Scalar shade = 0.35 + 0.65 * lambert;
        for (int c = 0; c < 3; ++c) col[size_t(c)] = prims[size_t(best_i)].color[size_t(c)] * shade;
        out.depth[size_t(v) * size_t(cam.width) + size_t(u)] = float(best_t);
      }
      const size_t px = (size_t(v) * size_t(cam.width) + size_t(u)) * 3;
      for (int c = 0; c < 3; ++c) {
        const Scalar lit = clamp(col[size_t(c)] * ambient, 0.0, 1.0);
        out.rgb.rgb[px + size_t(c)] = uint8_t(std::lround(lit * 255.0));
      }
    }
  }
  return out;
}

std::vector<std::array<float, 3>> cloud_from_depth(
    const std::vector<float>& depth, const Camera& cam, const Pose& base_from_world,
    const Vec3& crop_lo, const Vec3& crop_hi) {
  std::vector<std::array<float, 3>> pts;
  pts.reserve(depth.size() / 2);
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const Scalar z = depth[size_t(v) * size_t(cam.width) + size_t(u)];
      if (z <= 0.0) continue;
      const Vec3 p_cam{(Scalar(u) + 0.5 - cam.cx) / cam.fx * z,
                       (Scalar(v) + 0.5 - cam.cy) / cam.fy * z, z};
      const Vec3 p = base_from_world.apply(cam.pose.apply(p_cam));
      if (p.x < crop_lo.x || p.x > crop_hi.x || p.y < crop_lo.y || p.y > crop_hi.y ||
          p.z < crop_lo.z || p.z > crop_hi.z)
        continue;
      pts.push_back({float(p.x), float(p.y), float(p.z)});
    }
  }
  return pts;
}

}  // namespace densebody::sim
