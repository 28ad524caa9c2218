#pragma once

#include <array>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "naf/geometry/rotation.hpp"

namespace naf {

class SkeletonError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Kinematic tree in rest (canonical) pose. Joints are topologically sorted:
// parents[i] < i, and joint 0 is the root (pelvis) with parent -1.
struct Skeleton {
  std::vector<int> parents;
  std::vector<Vec3> offsets;  // rest position relative to parent; absolute for the root
  std::vector<Vec3> tails;    // bone end point relative to its joint, rest frame
  std::vector<std::string> names;

  std::size_t size() const { return parents.size(); }

  void validate() const {
    if (parents.empty()) throw SkeletonError("skeleton has no joints");
    if (offsets.size() != parents.size() || tails.size() != parents.size())
      throw SkeletonError("skeleton arrays have inconsistent lengths");
    if (parents[0] != -1) throw SkeletonError("joint 0 must be the root (parent -1)");
    for (std::size_t i = 1; i < parents.size(); ++i)
      if (parents[i] < 0 || parents[i] >= static_cast<int>(i))
        throw SkeletonError("joint " + std::to_string(i) + " has parent " + std::to_string(parents[i]) +
                            "; parents must precede children");
  }

  std::vector<Vec3> rest_joints() const {
    std::vector<Vec3> j(size());
    for (std::size_t i = 0; i < size(); ++i) j[i] = parents[i] < 0 ? offsets[i] : Vec3(j[parents[i]] + offsets[i]);
    return j;
  }

  // 24-joint SMPL topology with approximate rest offsets in metres.
  static Skeleton smpl_topology() {
    Skeleton s;
    s.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
    s.offsets = {{0, 0.93, 0},       {0.06, -0.09, 0},   {-0.06, -0.09, 0}, {0, 0.11, -0.02},
                 {0.04, -0.38, 0},   {-0.04, -0.38, 0},  {0, 0.14, 0.01},   {-0.01, -0.40, -0.04},
                 {0.01, -0.40, -0.04}, {0, 0.06, 0.02},  {0.04, -0.06, 0.12}, {-0.04, -0.06, 0.12},
                 {0, 0.21, -0.03},   {0.08, 0.12, -0.02}, {-0.08, 0.12, -0.02}, {0, 0.09, 0.05},
                 {0.09, 0.03, 0},    {-0.09, 0.03, 0},   {0.26, 0, -0.02},  {-0.26, 0, -0.02},
                 {0.25, 0.01, 0},    {-0.25, 0.01, 0},   {0.08, -0.01, 0},  {-0.08, -0.01, 0}};
    s.tails.assign(24, Vec3::Zero());
    for (std::size_t i = 1; i < 24; ++i) s.tails[s.parents[i]] = s.offsets[i];
    s.tails[15] = {0, 0.15, 0};
    s.tails[22] = {0.08, 0, 0};
    s.tails[23] = {-0.08, 0, 0};
    s.tails[10] = {0, 0, 0.08};
    s.tails[11] = {0, 0, 0.08};
    s.names = {"pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2", "left_ankle",
               "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar", "right_collar", "head",
               "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
               "left_hand", "right_hand"};
    return s;
  }
};

// Per-joint axis-angle rotations (local, relative to the parent frame) plus a
// root translation applied on top of the rest root position.
struct Pose {
  std::vector<Vec3> rotations;
  Vec3 root_translation = Vec3::Zero();

  static Pose rest(std::size_t joints) { return {std::vector<Vec3>(joints, Vec3::Zero()), Vec3::Zero()}; }
};

inline void check_pose(const Skeleton& skel, const Pose& pose) {
  if (pose.rotations.size() != skel.size())
    throw SkeletonError("pose has " + std::to_string(pose.rotations.size()) + " joints, skeleton has " +
                        std::to_string(skel.size()));
  for (const auto& w : pose.rotations)
    if (!w.allFinite()) throw SkeletonError("pose contains non-finite rotation");
  if (!pose.root_translation.allFinite()) throw SkeletonError("pose contains non-finite root translation");
}

// World transforms of each joint frame under the pose (forward kinematics).
inline std::vector<RigidTransform> joint_world_transforms(const Skeleton& skel, const Pose& pose) {
  check_pose(skel, pose);
  std::vector<RigidTransform> g(skel.size());
  for (std::size_t i = 0; i < skel.size(); ++i) {
    RigidTransform local{axis_angle_to_rotation(pose.rotations[i]), skel.offsets[i]};
    if (skel.parents[i] < 0) {
      local.t += pose.root_translation;
      g[i] = local;
    } else {
      g[i] = g[skel.parents[i]] * local;
    }
  }
  return g;
}

// Rest -> posed map of every bone: x_posed = M_i(x_rest).
inline std::vector<RigidTransform> posed_bone_maps(const Skeleton& skel, const Pose& pose) {
  auto g = joint_world_transforms(skel, pose);
  const auto rest = skel.rest_joints();
  std::vector<RigidTransform> m(skel.size());
  for (std::size_t i = 0; i < skel.size(); ++i) m[i] = g[i] * RigidTransform{Mat3::Identity(), -rest[i]};
  return m;
}

// Observation -> canonical map of every bone: the inverse of posed_bone_maps.
inline std::vector<RigidTransform> bone_transforms(const Skeleton& skel, const Pose& pose) {
  auto m = posed_bone_maps(skel, pose);
  for (auto& t : m) t = t.inverse();
  return m;
}

inline std::vector<Vec3> posed_joints(const Skeleton& skel, const Pose& pose) {
  auto g = joint_world_transforms(skel, pose);
  std::vector<Vec3> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i].t;
  return out;
}

// Non-root joint rotations concatenated: the pose-conditioning vector.
inline std::vector<double> pose_vector(const Pose& pose) {
  std::vector<double> v;
  for (std::size_t i = 1; i < pose.rotations.size(); ++i)
    for (int k = 0; k < 3; ++k) v.push_back(pose.rotations[i][k]);
  return v;
}

struct Aabb {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  bool contains(const Vec3& p) const { return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all(); }
  Vec3 extent() const { return hi - lo; }
  // Grows every side by pad_fraction of the largest extent.
  Aabb padded(double pad_fraction) const {
    const double pad = pad_fraction * extent().maxCoeff();
    return {(lo.array() - pad).matrix(), (hi.array() + pad).matrix()};
  }
  std::array<Vec3, 8> corners() const {
    std::array<Vec3, 8> c;
    for (int i = 0; i < 8; ++i) c[i] = {(i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z()};
    return c;
  }
};

// Box around posed joints and bone tails, padded by pad_fraction of its
// largest extent.
inline Aabb posed_bounds(const Skeleton& skel, const Pose& pose, double pad_fraction = 0.1) {
  auto g = joint_world_transforms(skel, pose);
  Aabb box;
  for (std::size_t i = 0; i < g.size(); ++i) {
    box.extend(g[i].t);
    box.extend(g[i].apply(skel.tails[i]));
  }
  return box.padded(pad_fraction);
}

inline Aabb rest_bounds(const Skeleton& skel, double pad_fraction = 0.1) {
  return posed_bounds(skel, Pose::rest(skel.size()), pad_fraction);
}

}  // namespace naf
