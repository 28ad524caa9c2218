#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace naf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Rodrigues' formula. For |w| below 1e-4 the sin/cos ratios use their Taylor
// series, which are accurate to double precision there.
inline Mat3 axis_angle_to_rotation(const Vec3& w) {
  const double t2 = w.squaredNorm();
  double a, b;  // sin(t)/t, (1 - cos(t))/t^2
  if (t2 < 1e-8) {
    a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    const double t = std::sqrt(t2);
    a = std::sin(t) / t;
    b = (1.0 - std::cos(t)) / t2;
  }
  Mat3 k;
  k << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return Mat3::Identity() + a * k + b * k * k;
}

// Inverse of axis_angle_to_rotation with angle in [0, pi].
inline Vec3 rotation_to_axis_angle(const Mat3& r) {
  Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

// Geodesic angle between two rotations, in [0, pi].
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return R * x + t; }
  RigidTransform inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
  RigidTransform operator*(const RigidTransform& o) const { return {R * o.R, R * o.t + t}; }
};

}  // namespace naf
