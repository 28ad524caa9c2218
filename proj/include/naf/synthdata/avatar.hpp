#pragma once

// Capsule avatars with hard per-bone skinning and an analytic ray tracer that
// serves as the ground-truth renderer.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "naf/geometry/camera.hpp"
#include "naf/geometry/skeleton.hpp"
#include "naf/io/image.hpp"

namespace naf {

// One capsule per bone, around the rest segment joint -> joint + tail.
// The avatar faces +z in its rest pose.
struct SyntheticAvatar {
  std::string name;
  Skeleton skeleton;
  std::vector<double> radius;
  std::vector<Vec3> front_color, back_color;

  std::size_t bones() const { return skeleton.size(); }

  void validate() const {
    skeleton.validate();
    const std::size_t k = bones();
    if (radius.size() != k || front_color.size() != k || back_color.size() != k)
      throw std::invalid_argument("avatar: per-bone arrays do not match the skeleton");
    for (double r : radius)
      if (!(r > 0)) throw std::invalid_argument("avatar: capsule radius must be positive");
  }
};

namespace detail {

inline Vec3 palette(std::size_t i) {
  static const std::array<Vec3, 10> colors{{{0.85, 0.35, 0.25},
                                            {0.95, 0.80, 0.55},
                                            {0.30, 0.55, 0.85},
                                            {0.35, 0.75, 0.40},
                                            {0.80, 0.55, 0.80},
                                            {0.90, 0.70, 0.25},
                                            {0.25, 0.70, 0.75},
                                            {0.70, 0.30, 0.50},
                                            {0.55, 0.45, 0.30},
                                            {0.45, 0.40, 0.80}}};
  return colors[i % colors.size()];
}

inline void add_bone(SyntheticAvatar& a, const std::string& name, int parent, const Vec3& offset, const Vec3& tail,
                     double radius) {
  a.skeleton.names.push_back(name);
  a.skeleton.parents.push_back(parent);
  a.skeleton.offsets.push_back(offset);
  a.skeleton.tails.push_back(tail);
  a.radius.push_back(radius);
  const Vec3 c = palette(a.radius.size() - 1);
  a.front_color.push_back(c);
  a.back_color.push_back((Vec3::Ones() - c) * 0.7 + Vec3::Constant(0.15));
}

}  // namespace detail

// Presets with 4, 6, 8 or 10 bones, about 1.7 units tall.
//   4: torso, head, both arms
//   6: + both legs
//   8: arms split into upper and lower
//  10: legs split into thigh and shin
inline SyntheticAvatar make_avatar(int bones) {
  if (bones != 4 && bones != 6 && bones != 8 && bones != 10)
    throw std::invalid_argument("avatar presets exist for 4, 6, 8 and 10 bones, not " + std::to_string(bones));
  SyntheticAvatar a;
  a.name = "capsule" + std::to_string(bones);
  using detail::add_bone;
  const bool split_arms = bones >= 8, split_legs = bones >= 10;
  add_bone(a, "torso", -1, {0, 0.9, 0}, {0, 0.45, 0}, 0.15);
  add_bone(a, "head", 0, {0, 0.47, 0}, {0, 0.2, 0}, 0.1);
  const double upper = split_arms ? 0.28 : 0.5;
  add_bone(a, "left_arm", 0, {0.2, 0.36, 0}, {upper, 0, 0}, 0.055);
  add_bone(a, "right_arm", 0, {-0.2, 0.36, 0}, {-upper, 0, 0}, 0.055);
  if (bones >= 6) {
    const double thigh = split_legs ? 0.42 : 0.8;
    add_bone(a, "left_leg", 0, {0.09, -0.02, 0}, {0, -thigh, 0}, 0.075);
    add_bone(a, "right_leg", 0, {-0.09, -0.02, 0}, {0, -thigh, 0}, 0.075);
  }
  if (split_arms) {
    add_bone(a, "left_forearm", 2, {0.28, 0, 0}, {0.24, 0, 0}, 0.045);
    add_bone(a, "right_forearm", 3, {-0.28, 0, 0}, {-0.24, 0, 0}, 0.045);
  }
  if (split_legs) {
    add_bone(a, "left_shin", 4, {0, -0.42, 0}, {0, -0.4, 0}, 0.06);
    add_bone(a, "right_shin", 5, {0, -0.42, 0}, {0, -0.4, 0}, 0.06);
  }
  a.validate();
  return a;
}

// Nearest positive ray parameter where the ray enters the capsule around
// segment a-b, or infinity when it misses.
inline double ray_capsule(const Vec3& ro, const Vec3& rd, const Vec3& a, const Vec3& b, double r) {
  double best = std::numeric_limits<double>::infinity();
  const Vec3 ba = b - a, oa = ro - a;
  const double baba = ba.dot(ba), bard = ba.dot(rd), baoa = ba.dot(oa);
  const double qa = baba - bard * bard;
  if (baba > 0 && qa > 1e-12) {
    const double qb = baba * rd.dot(oa) - baoa * bard;
    const double qc = baba * oa.dot(oa) - baoa * baoa - r * r * baba;
    const double h = qb * qb - qa * qc;
    if (h >= 0) {
      const double t = (-qb - std::sqrt(h)) / qa;
      const double y = baoa + t * bard;
      if (t > 0 && y > 0 && y < baba) best = t;
    }
  }
  for (const Vec3& c : {a, b}) {
    const Vec3 oc = ro - c;
    const double hb = rd.dot(oc), hc = oc.dot(oc) - r * r, h = hb * hb - hc;
    if (h < 0) continue;
    const double t = -hb - std::sqrt(h);
    if (t > 0) best = std::min(best, t);
  }
  return best;
}

// Albedo of bone k at a rest-pose surface point. Front (+z) and back halves
// use different colours and patterns.
inline Vec3 avatar_texture(const SyntheticAvatar& av, std::size_t k, const Vec3& p_rest) {
  const Vec3 a = av.skeleton.rest_joints()[k];
  const Vec3 axis = av.skeleton.tails[k];
  const double len = axis.norm();
  const Vec3 dir = len > 0 ? Vec3(axis / len) : Vec3::UnitY();
  const double s = std::clamp((p_rest - a).dot(dir), 0.0, len);
  Vec3 n = p_rest - (a + s * dir);
  n = n.norm() > 0 ? Vec3(n.normalized()) : Vec3::UnitZ();
  const double f = std::clamp((n.z() + 0.25) / 0.5, 0.0, 1.0);
  const double front_mix = f * f * (3 - 2 * f);
  const double stripe = 0.82 + 0.18 * std::sin(2 * std::numbers::pi * 3 * s);
  const double band = 0.82 + 0.18 * std::cos(2 * std::numbers::pi * 2 * s + 2 * std::atan2(n.y(), n.x()));
  return front_mix * stripe * av.front_color[k] + (1 - front_mix) * band * av.back_color[k];
}

struct AvatarHit {
  double t = std::numeric_limits<double>::infinity();
  int bone = -1;
  Vec3 rest_point = Vec3::Zero();
};

// Traces a world-space ray against the posed capsules.
inline AvatarHit trace_avatar(const SyntheticAvatar& av, const std::vector<RigidTransform>& to_rest, const Vec3& ro,
                              const Vec3& rd) {
  AvatarHit hit;
  const auto joints = av.skeleton.rest_joints();
  for (std::size_t k = 0; k < av.bones(); ++k) {
    const Vec3 o = to_rest[k].apply(ro), d = to_rest[k].R * rd;
    const double t = ray_capsule(o, d, joints[k], joints[k] + av.skeleton.tails[k], av.radius[k]);
    if (t < hit.t) {
      hit.t = t;
      hit.bone = static_cast<int>(k);
      hit.rest_point = o + t * d;
    }
  }
  return hit;
}

struct GroundTruthView {
  Image image;  // RGB over the background colour
  Image mask;   // 1 channel, 0 or 1
};

// Colour is averaged over supersample^2 sub-pixel rays; the mask uses the
// pixel-centre ray.
inline GroundTruthView render_ground_truth(const SyntheticAvatar& av, const Pose& pose, const Camera& cam,
                                           int supersample = 2, const Vec3& background = Vec3::Ones()) {
  cam.validate();
  const auto to_rest = bone_transforms(av.skeleton, pose);
  GroundTruthView out{Image(cam.width, cam.height, 3, 0.f), Image(cam.width, cam.height, 1, 0.f)};
  const int ss = std::max(1, supersample);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      const Ray centre = cam.pixel_ray(x, y);
      out.mask.at(x, y) = trace_avatar(av, to_rest, centre.origin, centre.direction).bone >= 0 ? 1.f : 0.f;
      Vec3 acc = Vec3::Zero();
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const Ray r = cam.pixel_ray(x - 0.5 + (sx + 0.5) / ss, y - 0.5 + (sy + 0.5) / ss);
          const auto hit = trace_avatar(av, to_rest, r.origin, r.direction);
          acc += hit.bone >= 0 ? avatar_texture(av, hit.bone, hit.rest_point) : background;
        }
      acc /= ss * ss;
      for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = static_cast<float>(acc[c]);
    }
  return out;
}

// Surface sample of the avatar: a rest-pose point and the bone that owns it.
struct SurfacePoint {
  std::size_t bone;
  Vec3 rest;
};

// Points on every capsule's cylindrical wall and end caps.
inline std::vector<SurfacePoint> avatar_surface(const SyntheticAvatar& av, int rings = 12, int around = 16) {
  std::vector<SurfacePoint> out;
  const auto joints = av.skeleton.rest_joints();
  for (std::size_t k = 0; k < av.bones(); ++k) {
    const Vec3 a = joints[k], axis = av.skeleton.tails[k];
    const Vec3 dir = axis.normalized();
    const Vec3 u = (std::abs(dir.z()) < 0.9 ? dir.cross(Vec3::UnitZ()) : dir.cross(Vec3::UnitX())).normalized();
    const Vec3 v = dir.cross(u);
    const double r = av.radius[k];
    for (int i = 0; i <= rings; ++i)
      for (int j = 0; j < around; ++j) {
        const double phi = 2 * std::numbers::pi * j / around;
        out.push_back({k, a + axis * (static_cast<double>(i) / rings) + r * (std::cos(phi) * u + std::sin(phi) * v)});
      }
    for (int cap = 0; cap < 2; ++cap) {
      const Vec3 c = cap ? Vec3(a + axis) : a;
      const Vec3 outward = cap ? dir : Vec3(-dir);
      for (int i = 1; i <= 3; ++i)
        for (int j = 0; j < around; ++j) {
          const double el = std::numbers::pi / 2 * i / 4, phi = 2 * std::numbers::pi * j / around;
          out.push_back({k, c + r * (std::cos(el) * (std::cos(phi) * u + std::sin(phi) * v) + std::sin(el) * outward)});
        }
      out.push_back({k, c + r * outward});
    }
  }
  return out;
}

// Rest-pose surface points carried to the posed body by their own bone.
inline std::vector<Vec3> posed_surface(const SyntheticAvatar& av, const Pose& pose,
                                       const std::vector<SurfacePoint>& surface) {
  const auto maps = posed_bone_maps(av.skeleton, pose);
  std::vector<Vec3> out;
  out.reserve(surface.size());
  for (const auto& s : surface) out.push_back(maps[s.bone].apply(s.rest));
  return out;
}

}  // namespace naf
