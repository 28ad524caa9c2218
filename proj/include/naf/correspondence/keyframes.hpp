#pragma once

// Keyframe pair selection. Training frames are split by whether the pelvis
// faces the camera; among the k cross-set pairs with the most similar body
// pose, the pair whose union of visible surface is largest wins.

#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "naf/synthdata/dataset.hpp"

namespace naf {

struct SurfaceSample {
  std::size_t bone;
  Vec3 rest, normal;  // rest pose
};

// Capsule surface around every bone. Radii default to `proxy_radius` when
// the dataset carries none.
inline std::vector<SurfaceSample> coverage_surface(const Skeleton& skel, const std::vector<double>& radius,
                                                   double proxy_radius = 0.08) {
  SyntheticAvatar av;
  av.skeleton = skel;
  av.radius = radius.size() == skel.size() ? radius : std::vector<double>(skel.size(), proxy_radius);
  const auto joints = skel.rest_joints();
  std::vector<SurfaceSample> out;
  for (const auto& s : avatar_surface(av, 10, 16)) {
    const Vec3 a = joints[s.bone], b = a + skel.tails[s.bone];
    const Vec3 ab = b - a;
    const double t = std::clamp((s.rest - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    out.push_back({s.bone, s.rest, (s.rest - (a + t * ab)).normalized()});
  }
  return out;
}

// Indices of samples visible in a frame: inside the mask and facing the camera.
inline std::vector<std::uint8_t> covered_samples(const std::vector<SurfaceSample>& surface, const Skeleton& skel,
                                                 const Frame& frame) {
  const auto maps = posed_bone_maps(skel, frame.pose);
  const Vec3 eye = frame.camera.center();
  std::vector<std::uint8_t> out(surface.size(), 0);
  for (std::size_t i = 0; i < surface.size(); ++i) {
    const auto& m = maps[surface[i].bone];
    const Vec3 x = m.apply(surface[i].rest), n = m.R * surface[i].normal;
    if (n.dot(eye - x) <= 0) continue;
    if (!(frame.camera.to_camera(x).z() > kMinCameraDepth)) continue;
    const auto uv = project_point(frame.camera, x);
    const long u = std::lround(uv.x()), v = std::lround(uv.y());
    if (u < 0 || v < 0 || u >= frame.camera.width || v >= frame.camera.height) continue;
    if (!frame.mask.empty() && frame.mask.at(static_cast<int>(u), static_cast<int>(v)) < 0.5f) continue;
    out[i] = 1;
  }
  return out;
}

inline std::size_t union_count(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] || b[i];
  return n;
}

// Mean geodesic angle between corresponding non-root joint rotations.
inline double pose_distance(const Pose& a, const Pose& b) {
  const std::size_t n = a.rotations.size();
  const std::size_t first = n > 1 ? 1 : 0;
  double s = 0;
  for (std::size_t j = first; j < n; ++j)
    s += rotation_angle_between(axis_angle_to_rotation(a.rotations[j]), axis_angle_to_rotation(b.rotations[j]));
  return s / static_cast<double>(n - first);
}

// Pelvis forward axis (+z at rest) expressed in camera coordinates, dotted
// with the camera's viewing direction (+z). Negative means facing the camera.
inline double facing_dot(const Frame& f) {
  const Vec3 fwd = axis_angle_to_rotation(f.pose.rotations[0]) * Vec3::UnitZ();
  return (f.camera.R * fwd).z();
}

struct KeyframeCandidate {
  std::size_t i, j;
  double pose_distance;
  std::size_t coverage;
};

struct KeyframeSelection {
  std::size_t i = 0, j = 0;
  double pose_distance = 0;
  std::size_t coverage = 0;
  std::vector<std::size_t> front, back;
  bool fallback = false;
  std::vector<KeyframeCandidate> candidates;

  nlohmann::json to_json() const {
    nlohmann::json c = nlohmann::json::array();
    for (const auto& k : candidates)
      c.push_back({{"pair", {k.i, k.j}}, {"pose_distance", k.pose_distance}, {"coverage", k.coverage}});
    return {{"frames", {i, j}}, {"pose_distance", pose_distance}, {"coverage", coverage}, {"front", front},
            {"back", back},     {"fallback", fallback},           {"candidates", c}};
  }

  static KeyframeSelection from_json(const nlohmann::json& j) {
    KeyframeSelection s;
    s.i = j.at("frames").at(0).get<std::size_t>();
    s.j = j.at("frames").at(1).get<std::size_t>();
    s.pose_distance = j.value("pose_distance", 0.0);
    s.coverage = j.value("coverage", std::size_t{0});
    s.front = j.value("front", std::vector<std::size_t>{});
    s.back = j.value("back", std::vector<std::size_t>{});
    s.fallback = j.value("fallback", false);
    for (const auto& c : j.value("candidates", nlohmann::json::array()))
      s.candidates.push_back({c.at("pair").at(0).get<std::size_t>(), c.at("pair").at(1).get<std::size_t>(),
                              c.at("pose_distance").get<double>(), c.at("coverage").get<std::size_t>()});
    if (s.i == s.j) throw std::invalid_argument("keyframe pair must name two different frames");
    return s;
  }
};

struct KeyframeOptions {
  std::size_t closest_pairs = 5;
  double proxy_radius = 0.08;
};

// `pool` lists the frames allowed to become keyframes (the training split).
inline KeyframeSelection select_keyframes(const Dataset& ds, const std::vector<std::size_t>& pool,
                                          const KeyframeOptions& opt = {}) {
  if (pool.size() < 2) throw std::invalid_argument("keyframe selection needs at least 2 frames");
  KeyframeSelection sel;
  for (std::size_t f : pool) (facing_dot(ds.frames.at(f)) < 0 ? sel.front : sel.back).push_back(f);
  const auto surface = coverage_surface(ds.skeleton, ds.capsule_radius, opt.proxy_radius);
  auto coverage = [&](std::size_t f) { return covered_samples(surface, ds.skeleton, ds.frames[f]); };

  if (sel.front.empty() || sel.back.empty()) {
    std::cerr << "warning: all keyframe candidates face the same way; using the two most opposed frames\n";
    sel.fallback = true;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < pool.size(); ++a)
      for (std::size_t b = a + 1; b < pool.size(); ++b) {
        const Vec3 fa = axis_angle_to_rotation(ds.frames[pool[a]].pose.rotations[0]) * Vec3::UnitZ();
        const Vec3 fb = axis_angle_to_rotation(ds.frames[pool[b]].pose.rotations[0]) * Vec3::UnitZ();
        const double d = fa.dot(fb);
        if (d < best) {
          best = d;
          sel.i = std::min(pool[a], pool[b]);
          sel.j = std::max(pool[a], pool[b]);
        }
      }
    sel.pose_distance = pose_distance(ds.frames[sel.i].pose, ds.frames[sel.j].pose);
    sel.coverage = union_count(coverage(sel.i), coverage(sel.j));
    return sel;
  }

  std::vector<KeyframeCandidate> pairs;
  for (std::size_t a : sel.front)
    for (std::size_t b : sel.back)
      pairs.push_back({std::min(a, b), std::max(a, b), pose_distance(ds.frames[a].pose, ds.frames[b].pose), 0});
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& x, const auto& y) {
    return std::tie(x.pose_distance, x.i, x.j) < std::tie(y.pose_distance, y.i, y.j);
  });
  pairs.resize(std::min(pairs.size(), opt.closest_pairs));
  bool have = false;
  for (auto& p : pairs) {
    p.coverage = union_count(coverage(p.i), coverage(p.j));
    const bool better = !have || p.coverage > sel.coverage ||
                        (p.coverage == sel.coverage && std::tie(p.i, p.j) < std::tie(sel.i, sel.j));
    if (better) {
      have = true;
      sel.i = p.i;
      sel.j = p.j;
      sel.pose_distance = p.pose_distance;
      sel.coverage = p.coverage;
    }
  }
  sel.candidates = pairs;
  return sel;
}

struct Keyframe {
  std::size_t index = 0;
  Image image, mask;
  Camera camera;
  Pose pose;
};

// The selected pair with its images. Immutable once built.
struct KeyframeBank {
  KeyframeSelection selection;
  std::array<Keyframe, 2> frames;

  static KeyframeBank from_dataset(const Dataset& ds, const KeyframeSelection& sel) {
    KeyframeBank bank{sel, {}};
    const std::size_t idx[2] = {sel.i, sel.j};
    for (int k = 0; k < 2; ++k) {
      const auto& f = ds.frames.at(idx[k]);
      if (f.image.empty()) throw std::invalid_argument("keyframe " + std::to_string(idx[k]) + " has no image loaded");
      bank.frames[k] = {idx[k], f.image, f.mask, f.camera, f.pose};
    }
    return bank;
  }
};

}  // namespace naf
