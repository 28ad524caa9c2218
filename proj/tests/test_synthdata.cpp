#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "naf/synthdata/dataset.hpp"

using namespace naf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::path(::testing::TempDir()) / name;
  fs::remove_all(p);
  return p;
}

double mask_count(const Image& m) {
  double s = 0;
  for (float v : m.data) s += v;
  return s;
}

SyntheticAvatar upright_capsule() {
  SyntheticAvatar a;
  a.name = "single";
  a.skeleton.parents = {-1};
  a.skeleton.offsets = {{0, -0.5, 0}};
  a.skeleton.tails = {{0, 1, 0}};
  a.skeleton.names = {"body"};
  a.radius = {0.3};
  a.front_color = {{0.8, 0.2, 0.2}};
  a.back_color = {{0.2, 0.2, 0.8}};
  return a;
}

}  // namespace

TEST(Avatar, PresetsHaveRequestedBoneCountAndHeight) {
  for (int k : {4, 6, 8, 10}) {
    const auto av = make_avatar(k);
    EXPECT_EQ(av.bones(), static_cast<std::size_t>(k));
    const auto box = rest_bounds(av.skeleton, 0.0);
    EXPECT_NEAR(box.hi.y() + av.radius[1], k >= 6 ? 1.67 : 1.67, 0.05);
  }
  EXPECT_THROW(make_avatar(5), std::invalid_argument);
}

TEST(Avatar, RayCapsuleAnalyticHits) {
  const Vec3 a(0, -1, 0), b(0, 1, 0);
  EXPECT_NEAR(ray_capsule({0, 0, -5}, {0, 0, 1}, a, b, 0.5), 4.5, 1e-12);
  // Along the axis: enters through the lower cap.
  EXPECT_NEAR(ray_capsule({0, -5, 0}, {0, 1, 0}, a, b, 0.5), 3.5, 1e-12);
  // Grazing the cap sphere off-axis.
  const double t = ray_capsule({0.3, -5, 0}, {0, 1, 0}, a, b, 0.5);
  EXPECT_NEAR(t, 5 - 1 - std::sqrt(0.25 - 0.09), 1e-12);
  EXPECT_TRUE(std::isinf(ray_capsule({0, 0, -5}, {1, 0, 0}, a, b, 0.5)));
}

TEST(Avatar, SurfacePointsInvertExactlyThroughTheirBone) {
  const auto av = make_avatar(10);
  Pose pose = Pose::rest(av.bones());
  Rng rng(1);
  for (auto& w : pose.rotations) w = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
  const auto surface = avatar_surface(av);
  const auto posed = posed_surface(av, pose, surface);
  const auto back = bone_transforms(av.skeleton, pose);
  for (std::size_t i = 0; i < surface.size(); ++i)
    ASSERT_LT((back[surface[i].bone].apply(posed[i]) - surface[i].rest).norm(), 1e-12);
}

TEST(GroundTruth, CameraLookingAwayGivesEmptyMask) {
  const auto av = make_avatar(4);
  const auto cam = Camera::look_at({0, 0.9, 3}, {0, 0.9, 6}, {0, 1, 0}, 100, 64, 64);
  const auto gt = render_ground_truth(av, Pose::rest(4), cam);
  EXPECT_EQ(mask_count(gt.mask), 0.0);
  for (float v : gt.image.data) ASSERT_EQ(v, 1.f);
}

TEST(GroundTruth, UprightCapsuleGivesCentredStadium) {
  const auto av = upright_capsule();
  const auto cam = Camera::look_at({0, 0, 4}, {0, 0, 0}, {0, 1, 0}, 40, 65, 65);
  const auto gt = render_ground_truth(av, Pose::rest(1), cam);
  EXPECT_EQ(gt.mask.at(32, 32), 1.f);
  int top = 65, bottom = -1;
  for (int y = 0; y < 65; ++y)
    for (int x = 0; x < 65; ++x) {
      ASSERT_EQ(gt.mask.at(x, y), gt.mask.at(64 - x, y)) << x << "," << y;
      ASSERT_EQ(gt.mask.at(x, y), gt.mask.at(x, 64 - y)) << x << "," << y;
      if (gt.mask.at(x, y) > 0) {
        top = std::min(top, y);
        bottom = std::max(bottom, y);
      }
    }
  // Taller than wide: half-height ~ 40*(0.5+0.3)/~3.7, half-width ~ 40*0.3/~3.7.
  int width = 0;
  for (int x = 0; x < 65; ++x) width += gt.mask.at(x, 32) > 0;
  EXPECT_GT(bottom - top + 1, width + 8);
}

TEST(GroundTruth, MaskChangesContinuouslyUnderSmallRotation) {
  const auto av = make_avatar(6);
  const CameraSpec spec;
  for (double az : {0.0, 40.0, 135.0}) {
    const auto a = render_ground_truth(av, Pose::rest(6), orbit_camera(spec, az), 1);
    const auto b = render_ground_truth(av, Pose::rest(6), orbit_camera(spec, az + 1.0), 1);
    const double ca = mask_count(a.mask), cb = mask_count(b.mask);
    ASSERT_GT(ca, 100);
    EXPECT_LT(std::abs(ca - cb) / ca, 0.05) << "azimuth " << az;
  }
}

TEST(GroundTruth, FrontAndBackTexturesDiffer) {
  const auto av = make_avatar(4);
  const auto joints = av.skeleton.rest_joints();
  const Vec3 mid = joints[0] + 0.5 * av.skeleton.tails[0];
  const Vec3 front = avatar_texture(av, 0, mid + Vec3(0, 0, av.radius[0]));
  const Vec3 back = avatar_texture(av, 0, mid - Vec3(0, 0, av.radius[0]));
  EXPECT_GT((front - back).norm(), 0.3);
}

TEST(Motion, TwoFramesAreDistinct) {
  const auto av = make_avatar(4);
  const auto poses = generate_motion(av.skeleton, 2, MotionSpec{}, 3);
  ASSERT_EQ(poses.size(), 2u);
  double diff = 0;
  for (std::size_t j = 0; j < 4; ++j) diff += (poses[0].rotations[j] - poses[1].rotations[j]).norm();
  EXPECT_GT(diff, 1e-3);
  EXPECT_THROW(generate_motion(av.skeleton, 1, MotionSpec{}, 3), std::invalid_argument);
}

TEST(Motion, SameSeedSameSequence) {
  const auto av = make_avatar(8);
  const CameraSpec cams;
  const auto a = generate_dataset(av, 6, MotionSpec{}, cams, 9, false);
  const auto b = generate_dataset(av, 6, MotionSpec{}, cams, 9, false);
  const auto c = generate_dataset(av, 6, MotionSpec{}, cams, 10, false);
  EXPECT_EQ(dataset_meta(a).dump(), dataset_meta(b).dump());
  EXPECT_NE(dataset_meta(a).dump(), dataset_meta(c).dump());
}

TEST(Motion, TurnaroundFlipsAtMidpoint) {
  const auto av = make_avatar(6);
  for (int n : {20, 21, 40}) {
    MotionSpec m;
    m.kind = "turnaround";
    const auto poses = generate_motion(av.skeleton, n, m, 5);
    const int flip = turnaround_flip_frame(n);
    for (int t = 0; t < n; ++t) {
      const Vec3 fwd = axis_angle_to_rotation(poses[t].rotations[0]) * Vec3::UnitZ();
      // Camera on +z: facing when the forward axis points at it.
      EXPECT_EQ(fwd.z() > 0, t < flip) << "n=" << n << " t=" << t;
    }
  }
  EXPECT_EQ(turnaround_flip_frame(20), 10);
}

TEST(Motion, UnknownKindIsRejected) {
  MotionSpec m;
  m.kind = "moonwalk";
  EXPECT_THROW(generate_motion(make_avatar(4).skeleton, 4, m, 1), std::invalid_argument);
}

TEST(DatasetIo, RoundTripIsLossless) {
  const auto av = make_avatar(4);
  CameraSpec cams;
  cams.width = cams.height = 32;
  cams.focal = 38;
  const auto ds = generate_dataset(av, 3, MotionSpec{}, cams, 2);
  const auto dir = scratch("naf_ds_roundtrip");
  write_dataset(ds, dir);
  const auto back = read_dataset(dir);
  ASSERT_EQ(back.size(), ds.size());
  ASSERT_EQ(back.eval_views.size(), ds.eval_views.size());
  EXPECT_EQ(dataset_meta(back).dump(), dataset_meta(ds).dump());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.frames[i].image.data, ds.frames[i].image.data);
    EXPECT_EQ(back.frames[i].mask.data, ds.frames[i].mask.data);
    EXPECT_LT((back.frames[i].camera.R - ds.frames[i].camera.R).norm(), 1e-6);
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_LT((back.frames[i].pose.rotations[j] - ds.frames[i].pose.rotations[j]).norm(), 1e-6);
  }
  EXPECT_EQ(back.eval_views[1].image.data, ds.eval_views[1].image.data);
}

namespace {

fs::path small_dataset(const std::string& name) {
  CameraSpec cams;
  cams.width = cams.height = 16;
  cams.focal = 20;
  cams.eval_azimuth_deg.clear();
  const auto dir = scratch(name);
  write_dataset(generate_dataset(make_avatar(4), 2, MotionSpec{}, cams, 1), dir);
  return dir;
}

}  // namespace

TEST(DatasetIo, MissingMaskNamesTheFrame) {
  const auto dir = small_dataset("naf_ds_missing");
  fs::remove(dir / "masks" / frame_name(1));
  try {
    read_dataset(dir);
    FAIL() << "expected an error";
  } catch (const DatasetMissingFileError& e) {
    EXPECT_NE(std::string(e.what()).find("frame 1"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, MalformedJsonIsAFormatError) {
  const auto dir = small_dataset("naf_ds_malformed");
  std::ofstream(dir / "meta.json") << "{\"frames\": [";
  EXPECT_THROW(read_dataset(dir), DatasetFormatError);
}

TEST(DatasetIo, MaskSizeMismatchIsDetected) {
  const auto dir = small_dataset("naf_ds_size");
  write_png(dir / "masks" / frame_name(0), Image(8, 8, 1, 1.f));
  EXPECT_THROW(read_dataset(dir), DatasetSizeMismatchError);
}

TEST(DatasetIo, ErrorsAreDistinctTypes) {
  // Each failure mode is its own type, all sharing DatasetError.
  EXPECT_FALSE((std::is_base_of_v<DatasetMissingFileError, DatasetFormatError>));
  EXPECT_FALSE((std::is_base_of_v<DatasetFormatError, DatasetSizeMismatchError>));
  EXPECT_TRUE((std::is_base_of_v<DatasetError, DatasetSizeMismatchError>));
}

TEST(DatasetIo, UnknownKeysAreIgnored) {
  const auto dir = small_dataset("naf_ds_extra");
  nlohmann::json meta;
  {
    std::ifstream in(dir / "meta.json");
    meta = nlohmann::json::parse(in);
  }
  meta["future_field"] = {{"anything", 1}};
  meta["frames"][0]["extra"] = "ignored";
  std::ofstream(dir / "meta.json") << meta.dump();
  const auto ds = read_dataset(dir);
  EXPECT_EQ(ds.size(), 2u);
}

TEST(DatasetIo, TooFewFramesRejected) {
  Dataset ds;
  ds.skeleton = make_avatar(4).skeleton;
  EXPECT_THROW(write_dataset(ds, scratch("naf_ds_empty")), DatasetError);
}
