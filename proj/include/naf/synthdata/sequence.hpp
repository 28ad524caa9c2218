#pragma once

// Procedural motion and camera paths for capsule avatars.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "naf/numcore/rng.hpp"
#include "naf/synthdata/avatar.hpp"

namespace naf {

struct MotionSpec {
  // "swing": limbs swing while the body makes one full turn, so every side
  // of it is seen.
  // "turnaround": the body turns half a revolution at constant speed.
  std::string kind = "swing";
  double amplitude = 1.0;  // scales every joint swing
  double cycles = 1.5;     // limb swing periods over the sequence
};

struct CameraSpec {
  int width = 128, height = 128;
  double focal = 150;
  double distance = 3.2, height_m = 0.9;
  double azimuth_deg = 0;        // 0 = on +z, facing the rest-pose avatar
  double orbit_deg = 0;          // azimuth change over the sequence
  std::vector<double> eval_azimuth_deg{90, 180, 270};  // held-out views, relative to the frame camera
};

// Camera on a horizontal circle around the y axis, aimed at the avatar's centre height.
inline Camera orbit_camera(const CameraSpec& spec, double azimuth_deg) {
  const double a = azimuth_deg * std::numbers::pi / 180;
  const Vec3 eye(spec.distance * std::sin(a), spec.height_m, spec.distance * std::cos(a));
  return Camera::look_at(eye, {0, spec.height_m, 0}, {0, 1, 0}, spec.focal, spec.width, spec.height);
}

// First frame of an n-frame turnaround whose pelvis faces away from an
// azimuth-0 camera. Earlier frames face it.
inline int turnaround_flip_frame(int n_frames) { return (n_frames + 1) / 2; }

inline double root_yaw(const MotionSpec& m, int t, int n) {
  if (m.kind == "turnaround") return std::numbers::pi * (t + 0.25) / n;
  if (m.kind == "swing") return 2 * std::numbers::pi * t / n;
  throw std::invalid_argument("unknown motion kind '" + m.kind + "' (expected swing or turnaround)");
}

// Joint swings chosen from each bone's rest direction: sideways bones
// (arms) raise and lower, downward bones (legs) swing forward and back,
// upward bones (head) nod and turn. Bones whose parent is not the root bend
// one way only, like elbows and knees.
inline std::vector<Pose> generate_motion(const Skeleton& skel, int n_frames, const MotionSpec& m, std::uint64_t seed) {
  if (n_frames < 2) throw std::invalid_argument("a sequence needs at least 2 frames");
  Rng rng(seed);
  const std::size_t k = skel.size();
  struct Swing {
    Vec3 axis;
    double amp, phase, freq;
    bool one_sided;
  };
  std::vector<Swing> sw(k);
  for (std::size_t j = 1; j < k; ++j) {
    const Vec3 d = skel.tails[j].normalized();
    Swing s;
    if (std::abs(d.x()) > 0.7) {
      s.axis = {0, 0.35, d.x() > 0 ? 1.0 : -1.0};
      s.amp = 0.55;
    } else if (d.y() < -0.7) {
      s.axis = {1, 0, 0};
      s.amp = 0.45;
    } else {
      s.axis = {0.4, 1, 0};
      s.amp = 0.3;
    }
    s.axis.normalize();
    s.one_sided = skel.parents[j] != 0;
    if (s.one_sided) {
      s.amp *= 1.2;
      // Elbows fold forward-up, knees fold backward.
      s.axis = d.y() < -0.7 ? Vec3(-1, 0, 0) : Vec3(0, d.x() > 0 ? -1.0 : 1.0, 0);
    }
    s.phase = rng.uniform(0, 2 * std::numbers::pi);
    s.freq = m.cycles * rng.uniform(0.8, 1.2);
    sw[j] = s;
  }
  const double bob_phase = rng.uniform(0, 2 * std::numbers::pi);
  std::vector<Pose> poses;
  for (int t = 0; t < n_frames; ++t) {
    Pose p = Pose::rest(k);
    p.rotations[0] = {0, root_yaw(m, t, n_frames), 0};
    p.root_translation = {0, 0.02 * std::sin(4 * std::numbers::pi * t / n_frames + bob_phase), 0};
    for (std::size_t j = 1; j < k; ++j) {
      const double c = std::sin(2 * std::numbers::pi * sw[j].freq * t / n_frames + sw[j].phase);
      const double angle = m.amplitude * sw[j].amp * (sw[j].one_sided ? 0.5 * (1 + c) : c);
      p.rotations[j] = angle * sw[j].axis;
    }
    poses.push_back(p);
  }
  return poses;
}

}  // namespace naf
