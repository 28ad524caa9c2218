#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "naf/geometry/camera.hpp"
#include "naf/geometry/encoding.hpp"
#include "naf/geometry/skeleton.hpp"
#include "naf/numcore/grad_check.hpp"

using namespace naf;

namespace {

Vec3 random_vec(Rng& rng, double s = 1.0) { return {rng.uniform(-s, s), rng.uniform(-s, s), rng.uniform(-s, s)}; }

// Unit quaternion -> rotation matrix, written out explicitly.
Mat3 quaternion_oracle(const Vec3& w) {
  const double theta = w.norm();
  const Vec3 axis = theta > 0 ? Vec3(w / theta) : Vec3(1, 0, 0);
  const double qw = std::cos(theta / 2), s = std::sin(theta / 2);
  const double qx = axis.x() * s, qy = axis.y() * s, qz = axis.z() * s;
  Mat3 r;
  r << 1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw),
      2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw),
      2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy);
  return r;
}

Skeleton chain3() {
  Skeleton s;
  s.parents = {-1, 0, 1};
  s.offsets = {{0, 1, 0}, {0, 0.5, 0}, {0.3, 0.2, 0}};
  s.tails = {{0, 0.5, 0}, {0.3, 0.2, 0}, {0.2, 0, 0}};
  s.names = {"a", "b", "c"};
  return s;
}

// Homogeneous 4x4 forward kinematics, independent of joint_world_transforms.
Eigen::Matrix4d fk_matrix(const Skeleton& s, const Pose& p, std::size_t j) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.block<3, 3>(0, 0) = quaternion_oracle(p.rotations[j]);
  m.block<3, 1>(0, 3) = s.offsets[j] + (s.parents[j] < 0 ? p.root_translation : Vec3::Zero());
  if (s.parents[j] < 0) return m;
  return fk_matrix(s, p, s.parents[j]) * m;
}

}  // namespace

TEST(Rotation, ZeroIsIdentity) { EXPECT_TRUE(axis_angle_to_rotation(Vec3::Zero()).isIdentity(0)); }

TEST(Rotation, QuarterTurnAboutZ) {
  Vec3 y = axis_angle_to_rotation({0, 0, std::numbers::pi / 2}) * Vec3(1, 0, 0);
  EXPECT_NEAR((y - Vec3(0, 1, 0)).norm(), 0, 1e-12);
}

TEST(Rotation, MatchesQuaternionOracleAndIsOrthonormal) {
  Rng rng(4);
  for (int i = 0; i < 2000; ++i) {
    Vec3 w = random_vec(rng, i % 10 == 0 ? 1e-5 : 3.0);
    Mat3 r = axis_angle_to_rotation(w);
    EXPECT_LT((r - quaternion_oracle(w)).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-5);
  }
}

TEST(Rotation, AxisAngleRoundTrip) {
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    Vec3 w = random_vec(rng, 1.5);
    EXPECT_LT((rotation_to_axis_angle(axis_angle_to_rotation(w)) - w).norm(), 1e-9);
  }
}

TEST(Skeleton, ValidateRejectsBadTopology) {
  Skeleton s = chain3();
  s.validate();
  s.parents[1] = 2;
  EXPECT_THROW(s.validate(), SkeletonError);
  s.parents = {0, 0, 1};
  EXPECT_THROW(s.validate(), SkeletonError);
  Skeleton::smpl_topology().validate();
  EXPECT_EQ(Skeleton::smpl_topology().size(), 24u);
}

TEST(BoneTransforms, RestPoseIsIdentity) {
  auto s = chain3();
  for (const auto& t : bone_transforms(s, Pose::rest(3))) {
    EXPECT_TRUE(t.R.isIdentity(1e-12));
    EXPECT_LT(t.t.norm(), 1e-12);
  }
}

TEST(BoneTransforms, SingleBoneTranslationInverse) {
  Skeleton s;
  s.parents = {-1};
  s.offsets = {{0.2, 0.9, 0}};
  s.tails = {{0, 0.5, 0}};
  Pose p = Pose::rest(1);
  p.root_translation = {1, 0, 0};
  auto t = bone_transforms(s, p);
  EXPECT_TRUE(t[0].R.isIdentity(1e-12));
  EXPECT_LT((t[0].t - Vec3(-1, 0, 0)).norm(), 1e-12);
}

TEST(BoneTransforms, ComposeWithForwardKinematicsOracleIsIdentity) {
  auto s = chain3();
  const auto rest = s.rest_joints();
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    Pose p{{random_vec(rng, 2), random_vec(rng, 2), random_vec(rng, 2)}, random_vec(rng, 1)};
    auto back = bone_transforms(s, p);
    for (std::size_t j = 0; j < 3; ++j) {
      Eigen::Matrix4d fk = fk_matrix(s, p, j);
      for (int k = 0; k < 5; ++k) {
        Vec3 x = random_vec(rng, 2);
        Eigen::Vector4d xh;
        xh << x - rest[j], 1;
        Vec3 posed = (fk * xh).head<3>();
        EXPECT_LT((back[j].apply(posed) - x).norm(), 1e-5);
      }
      EXPECT_LT((back[j].R.transpose() * back[j].R - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-5);
      EXPECT_NEAR(back[j].R.determinant(), 1.0, 1e-5);
    }
  }
}

TEST(BoneTransforms, WrongJointCountIsError) {
  EXPECT_THROW(bone_transforms(chain3(), Pose::rest(2)), SkeletonError);
}

TEST(Pose, VectorExcludesRoot) {
  Pose p{{{9, 9, 9}, {1, 2, 3}, {4, 5, 6}}, Vec3::Zero()};
  EXPECT_EQ(pose_vector(p), (std::vector<double>{1, 2, 3, 4, 5, 6}));
}

TEST(PosedBounds, ContainsJointsAndTails) {
  auto s = chain3();
  Rng rng(3);
  Pose p{{random_vec(rng), random_vec(rng), random_vec(rng)}, random_vec(rng)};
  auto box = posed_bounds(s, p, 0.1);
  for (auto& j : posed_joints(s, p)) EXPECT_TRUE(box.contains(j));
}

TEST(Projection, IdentityCamera) {
  Camera c;
  c.width = c.height = 4;
  auto px = project_point(c, {0.5, -0.5, 1});
  EXPECT_DOUBLE_EQ(px.x(), 0.5);
  EXPECT_DOUBLE_EQ(px.y(), -0.5);
}

TEST(Projection, OpticalAxisHitsPrincipalPoint) {
  Camera c;
  c.fx = 120;
  c.fy = 110;
  c.cx = 63.5;
  c.cy = 40;
  c.width = c.height = 128;
  for (double z : {0.01, 1.0, 37.0}) {
    auto px = project_point(c, {0, 0, z});
    EXPECT_DOUBLE_EQ(px.x(), 63.5);
    EXPECT_DOUBLE_EQ(px.y(), 40);
  }
}

TEST(Projection, BehindCameraIsError) {
  Camera c;
  EXPECT_THROW(project_point(c, {0, 0, -1}), BehindCameraError);
  EXPECT_THROW(project_point(c, {0, 0, 0}), BehindCameraError);
}

TEST(Projection, MatchesMatrixChainOracleAndIsScaleInvariant) {
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    Camera c = Camera::look_at(random_vec(rng, 3) + Vec3(0, 0, 5), random_vec(rng, 0.5), {0, 1, 0},
                               rng.uniform(50, 300), 128, 96);
    c.cx = rng.uniform(0, 127);
    c.cy = rng.uniform(0, 95);
    c.validate();
    Vec3 x = random_vec(rng, 1.0);
    Eigen::Matrix<double, 3, 4> e;
    e << c.R, c.t;
    Eigen::Vector4d xh;
    xh << x, 1;
    Vec3 h = c.intrinsics() * e * xh;
    Eigen::Vector2d expect = h.head<2>() / h.z();
    auto got = project_point(c, x);
    EXPECT_LT((got - expect).norm(), 1e-4);

    // Scaling the camera-space point along its ray leaves the pixel fixed.
    Vec3 xc = c.to_camera(x);
    const double lambda = rng.uniform(0.2, 5);
    Vec3 scaled = c.R.transpose() * (lambda * xc - c.t);
    EXPECT_LT((project_point(c, scaled) - got).norm(), 1e-6);

    // Pixel rays pass back through the point.
    Ray r = c.pixel_ray(got.x(), got.y());
    Vec3 to_x = x - r.origin;
    EXPECT_LT((to_x - to_x.dot(r.direction) * r.direction).norm(), 1e-6);
  }
}

TEST(Camera, ValidateInvariants) {
  Camera c = Camera::look_at({0, 0, 3}, {0, 0, 0}, {0, 1, 0}, 100, 64, 64);
  c.validate();
  c.fx = -1;
  EXPECT_THROW(c.validate(), CameraError);
  c.fx = 100;
  c.cx = 64;
  EXPECT_THROW(c.validate(), CameraError);
}

TEST(Encoding, OriginAndCounting) {
  for (int L : {1, 4, 10}) {
    auto e = positional_encoding(Vec3::Zero(), L);
    ASSERT_EQ(e.size(), static_cast<std::size_t>(6 * L));
    for (std::size_t i = 0; i < e.size(); ++i) EXPECT_EQ(e[i], i % 2 == 0 ? 0.0 : 1.0);
  }
}

TEST(Encoding, HalfUnitFirstCoordinate) {
  auto e = positional_encoding({0.5, 0, 0}, 1);
  EXPECT_NEAR(e[0], 1.0, 1e-12);
  EXPECT_NEAR(e[1], 0.0, 1e-12);
}

TEST(Encoding, BatchedMatchesScalarStaysInRangeAndDifferentiates) {
  Rng rng(6);
  std::vector<double> pts(3 * 7);
  for (auto& v : pts) v = rng.uniform(-1.5, 1.5);
  auto x = Tensor<double>::from({7, 3}, pts, true);
  auto enc = encode_positions(x, 4);
  for (std::size_t i = 0; i < 7; ++i) {
    auto ref = positional_encoding({pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]}, 4);
    for (std::size_t k = 0; k < ref.size(); ++k) {
      EXPECT_NEAR(enc.at(i, k), ref[k], 1e-12);
      EXPECT_LE(std::abs(enc.at(i, k)), 1.0);
    }
  }
  Tensor<double> proj = Tensor<double>::full({7, 24}, 0.3);
  auto res = grad_check<double>([&] { return sum(mul(encode_positions(x, 4), proj)); }, {x}, 1e-5);
  EXPECT_LT(res.max_relative_error, 1e-3);
}
