#pragma once

#include <stdexcept>
#include <string>

#include "naf/geometry/rotation.hpp"

namespace naf {

class BehindCameraError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class CameraError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

// Pinhole camera. Extrinsics map world to camera coordinates (x right,
// y down, z forward). Pixel centres sit at integer coordinates with the
// origin at the top-left pixel.
struct Camera {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  int width = 1, height = 1;

  void validate() const {
    if (!(fx > 0 && fy > 0)) throw CameraError("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw CameraError("camera size must be positive");
    if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
      throw CameraError("principal point outside the image");
  }

  Mat3 intrinsics() const {
    Mat3 k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  Vec3 center() const { return -(R.transpose() * t); }
  Vec3 to_camera(const Vec3& x) const { return R * x + t; }

  Ray pixel_ray(double u, double v) const {
    const Vec3 d_cam((u - cx) / fx, (v - cy) / fy, 1.0);
    return {center(), (R.transpose() * d_cam).normalized()};
  }

  // Camera at eye looking at target; up is the world up direction.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double focal, int width, int height) {
    const Vec3 z = (target - eye).normalized();
    const Vec3 x = z.cross(up).normalized();  // image right
    const Vec3 y = z.cross(x);                // image down
    Camera c;
    c.R.row(0) = x.transpose();
    c.R.row(1) = y.transpose();
    c.R.row(2) = z.transpose();
    c.t = -(c.R * eye);
    c.fx = c.fy = focal;
    c.cx = (width - 1) / 2.0;
    c.cy = (height - 1) / 2.0;
    c.width = width;
    c.height = height;
    return c;
  }
};

inline constexpr double kMinCameraDepth = 1e-6;

// Perspective projection K * (R x + t) followed by the homogeneous divide.
inline Eigen::Vector2d project_point(const Camera& cam, const Vec3& x) {
  const Vec3 xc = cam.to_camera(x);
  if (!(xc.z() > kMinCameraDepth))
    throw BehindCameraError("point is behind the camera (depth " + std::to_string(xc.z()) + ")");
  return {cam.fx * xc.x() / xc.z() + cam.cx, cam.fy * xc.y() / xc.z() + cam.cy};
}

}  // namespace naf
