#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "densebody/sim/geometry.hpp"

namespace densebody::sim {

enum class Shape { box, sphere, cylinder };

struct Primitive {
  Shape shape = Shape::box;
  Pose pose;                      // world frame
  Vec3 half{0.1, 0.1, 0.1};      // box: half extents; sphere: x=radius; cylinder: x=radius, z=half height
  std::array<Scalar, 3> color{0.5, 0.5, 0.5};
};

struct Camera {
  Scalar fx = 70, fy = 70, cx = 32, cy = 32;
  int width = 64, height = 64;
  Pose pose;  // camera-to-world; camera looks along +z, x right, y down
};

struct Image {
  int h = 0, w = 0;
  std::vector<uint8_t> rgb;  // h*w*3, row-major
};

struct RenderResult {
  Image rgb;
  std::vector<float> depth;  // z-depth per pixel, 0 where no hit
};

// Nearest ray-primitive hit for ray o + t*d (d need not be unit). Returns
// t > tmin and the outward surface normal, or t = 0 on miss.
struct Hit {
  Scalar t = 0;
  Vec3 normal;
  bool ok = false;
};
Hit intersect(const Primitive& prim, const Vec3& o, const Vec3& d, Scalar tmin = 1e-6);

// Ray-cast render with Lambert-like shading; every output intensity (objects
// and background alike) scales linearly with `ambient` until saturation.
RenderResult render(const std::vector<Primitive>& prims, Scalar ambient,
                    const std::array<Scalar, 3>& background, const Camera& cam);

// Back-projects a depth map to base-frame points and crops them to the
// workspace box. Zero-depth pixels are dropped.
std::vector<std::array<float, 3>> cloud_from_depth(
    const std::vector<float>& depth, const Camera& cam, const Pose& base_from_world,
    const Vec3& crop_lo, const Vec3& crop_hi);

}  // namespace densebody::sim
