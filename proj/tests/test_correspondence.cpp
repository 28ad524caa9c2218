#include <cmath>

#include <gtest/gtest.h>

#include "naf/correspondence/features.hpp"
#include "naf/correspondence/keyframes.hpp"
#include "naf/deformation/diagnostic.hpp"
#include "naf/numcore/grad_check.hpp"

using namespace naf;

namespace {

Dataset turnaround(int n, int bones = 6, int size = 64) {
  MotionSpec m;
  m.kind = "turnaround";
  CameraSpec cams;
  cams.width = cams.height = size;
  cams.focal = 150.0 * size / 128;
  cams.eval_azimuth_deg.clear();
  return generate_dataset(make_avatar(bones), n, m, cams, 3);
}

std::vector<std::size_t> all_frames(const Dataset& ds) {
  std::vector<std::size_t> v(ds.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

Image random_image(Rng& rng, int w, int h, int c) {
  Image img(w, h, c);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

template <typename Real>
Tensor<Real> random_tensor(Rng& rng, Shape shape, double s = 1.0, bool grad = false) {
  std::vector<Real> v(numel(shape));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(-s, s));
  return Tensor<Real>::from(std::move(shape), std::move(v), grad);
}

}  // namespace

// ---------------------------------------------------------------------------
// Keyframe selection

TEST(Keyframes, FrontAndBackSetsFollowThePelvis) {
  const auto ds = turnaround(20);
  const auto sel = select_keyframes(ds, all_frames(ds));
  std::vector<std::size_t> front, back;
  for (std::size_t i = 0; i < 10; ++i) front.push_back(i);
  for (std::size_t i = 10; i < 20; ++i) back.push_back(i);
  EXPECT_EQ(sel.front, front);
  EXPECT_EQ(sel.back, back);
  EXPECT_FALSE(sel.fallback);
}

TEST(Keyframes, CrossFacingPairBeatsEverySameSetPair) {
  const auto ds = turnaround(20);
  const auto sel = select_keyframes(ds, all_frames(ds));
  const bool i_front = std::find(sel.front.begin(), sel.front.end(), sel.i) != sel.front.end();
  const bool j_front = std::find(sel.front.begin(), sel.front.end(), sel.j) != sel.front.end();
  EXPECT_NE(i_front, j_front);
  // Brute-force coverage over every pair.
  const auto surface = coverage_surface(ds.skeleton, ds.capsule_radius);
  std::vector<std::vector<std::uint8_t>> cov;
  for (const auto& f : ds.frames) cov.push_back(covered_samples(surface, ds.skeleton, f));
  std::size_t best_same = 0;
  for (std::size_t a = 0; a < ds.size(); ++a)
    for (std::size_t b = a + 1; b < ds.size(); ++b)
      if ((a < 10) == (b < 10)) best_same = std::max(best_same, union_count(cov[a], cov[b]));
  EXPECT_EQ(sel.coverage, union_count(cov[sel.i], cov[sel.j]));
  EXPECT_GT(sel.coverage, best_same);
}

TEST(Keyframes, SelectionIsDeterministic) {
  const auto a = select_keyframes(turnaround(20), all_frames(turnaround(20)));
  const auto b = select_keyframes(turnaround(20), all_frames(turnaround(20)));
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  const auto back = KeyframeSelection::from_json(a.to_json());
  EXPECT_EQ(back.to_json().dump(), a.to_json().dump());
}

TEST(Keyframes, RepeatedFrameFallsBackToFirstPair) {
  auto ds = turnaround(2);
  ds.frames[1] = ds.frames[0];
  ds.frames.push_back(ds.frames[0]);
  const auto sel = select_keyframes(ds, all_frames(ds));
  EXPECT_TRUE(sel.fallback);
  EXPECT_EQ(sel.i, 0u);
  EXPECT_EQ(sel.j, 1u);
}

TEST(Keyframes, PoolRestrictsCandidates) {
  const auto ds = turnaround(20);
  const std::vector<std::size_t> pool{2, 3, 15, 16};
  const auto sel = select_keyframes(ds, pool);
  EXPECT_NE(std::find(pool.begin(), pool.end(), sel.i), pool.end());
  EXPECT_NE(std::find(pool.begin(), pool.end(), sel.j), pool.end());
  EXPECT_THROW(select_keyframes(ds, {4}), std::invalid_argument);
}

TEST(Keyframes, PoseDistanceIsMeanJointAngle) {
  Pose a = Pose::rest(3), b = Pose::rest(3);
  b.rotations[0] = {0, 2, 0};  // root ignored
  b.rotations[1] = {0.3, 0, 0};
  b.rotations[2] = {0, 0, -0.5};
  EXPECT_NEAR(pose_distance(a, b), 0.4, 1e-12);
}

// ---------------------------------------------------------------------------
// Feature extractor

TEST(FeatureExtractor, ZeroFinalLayerGivesZeroFeatures) {
  Rng rng(1);
  FeatureExtractor<float> fx(FeatureConfig{}, rng);
  const auto f = fx.extract(Image(16, 12, 3, 0.f), Image(16, 12, 1, 0.f));
  EXPECT_EQ(f.shape(), (Shape{12, 16, 16}));
  for (float v : f.values()) ASSERT_EQ(v, 0.f);
}

TEST(FeatureExtractor, BackgroundIsZeroed) {
  Rng rng(2);
  FeatureExtractor<float> fx(FeatureConfig{}, rng);
  for (auto& v : fx.layers().back().weight.mutable_data()) v = static_cast<float>(rng.uniform(-1, 1));
  auto img = random_image(rng, 16, 16, 3);
  Image mask(16, 16, 1, 0.f);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) mask.at(x, y) = 1.f;
  const auto f = fx.extract(img, mask);
  double inside = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 16; ++c) {
        const float v = f.values()[(y * 16 + x) * 16 + c];
        if (mask.at(x, y) == 0.f) ASSERT_EQ(v, 0.f);
        inside += std::abs(v);
      }
  EXPECT_GT(inside, 0);
}

TEST(FeatureExtractor, RejectsSizesNotDivisibleByFour) {
  Rng rng(3);
  FeatureExtractor<float> fx(FeatureConfig{}, rng);
  EXPECT_THROW(fx.extract(Image(10, 8, 3), Image(10, 8, 1)), ShapeError);
}

TEST(FeatureExtractor, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  FeatureExtractor<double> fx(FeatureConfig{16, 4}, rng);
  for (auto& v : fx.layers().back().weight.mutable_data()) v = rng.uniform(-0.5, 0.5);
  const auto img = random_image(rng, 8, 8, 3);
  Image mask(8, 8, 1, 1.f);
  mask.at(0, 0) = 0.f;
  auto proj = random_tensor<double>(rng, {8, 8, 16});
  auto fn = [&] { return sum(mul(fx.extract(img, mask), proj)); };
  EXPECT_LT(grad_check<double>(fn, fx.parameters(), 1e-6).max_relative_error, 1e-3);
}

// ---------------------------------------------------------------------------
// Keyframe sampling

namespace {

// Camera at the origin looking down +z with unit focal length.
Camera unit_camera(int w, int h, double cx, double cy) {
  Camera c;
  c.fx = c.fy = 1;
  c.cx = cx;
  c.cy = cy;
  c.width = w;
  c.height = h;
  return c;
}

}  // namespace

TEST(SampleKeyframe, PixelCentreReturnsThatPixel) {
  Rng rng(5);
  const auto img = random_image(rng, 6, 7, 3);
  auto feat = random_tensor<double>(rng, {7, 6, 2});
  const auto cam = unit_camera(6, 7, 2, 2);
  auto s = sample_keyframe(Tensor<double>::from({1, 3}, {1, 2, 1}), cam, feat, img);  // -> pixel (3, 4)
  EXPECT_EQ(s.occluded[0], 0);
  for (int c = 0; c < 2; ++c) EXPECT_EQ(s.values.at(0, c), feat.values()[(4 * 6 + 3) * 2 + c]);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(s.values.at(0, 2 + c), static_cast<double>(img.at(3, 4, c)));
}

TEST(SampleKeyframe, OutsideOrBehindIsFlaggedZero) {
  Rng rng(6);
  const auto img = random_image(rng, 6, 7, 3);
  auto feat = random_tensor<double>(rng, {7, 6, 2});
  const auto cam = unit_camera(6, 7, 2, 2);
  auto s = sample_keyframe(Tensor<double>::from({2, 3}, {10, 0, 1, 0, 0, -1}), cam, feat, img);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(s.occluded[i], 1);
    for (int c = 0; c < 5; ++c) EXPECT_EQ(s.values.at(i, c), 0.0);
  }
}

TEST(SampleKeyframe, QuarterPixelMatchesCornerOracle) {
  Rng rng(7);
  const auto img = random_image(rng, 9, 8, 3);
  auto feat = random_tensor<double>(rng, {8, 9, 4});
  const auto cam = unit_camera(9, 8, 0, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int x0 = static_cast<int>(rng.below(8)), y0 = static_cast<int>(rng.below(7));
    const double fx = 0.25 * static_cast<double>(rng.below(4)), fy = 0.25 * static_cast<double>(rng.below(4));
    const double z = rng.uniform(0.5, 3);
    auto s = sample_keyframe(Tensor<double>::from({1, 3}, {(x0 + fx) * z, (y0 + fy) * z, z}), cam, feat, img);
    for (int c = 0; c < 4; ++c) {
      auto f = [&](int x, int y) { return feat.values()[(y * 9 + x) * 4 + c]; };
      const double oracle = (1 - fx) * (1 - fy) * f(x0, y0) + fx * (1 - fy) * f(x0 + 1, y0) +
                            (1 - fx) * fy * f(x0, y0 + 1) + fx * fy * f(x0 + 1, y0 + 1);
      ASSERT_NEAR(s.values.at(0, c), oracle, 1e-6);
    }
  }
}

TEST(SampleKeyframe, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  const auto img = random_image(rng, 10, 10, 3);
  auto feat = random_tensor<double>(rng, {10, 10, 3}, 1.0, true);
  const auto cam = Camera::look_at({0.1, 0.2, -3}, {0, 0, 0}, {0, 1, 0}, 8, 10, 10);
  std::vector<double> p;
  for (int i = 0; i < 15; ++i)
    for (int d = 0; d < 3; ++d) p.push_back(rng.uniform(-0.5, 0.5));
  auto pts = Tensor<double>::from({15, 3}, p, true);
  auto proj = random_tensor<double>(rng, {15, 6});
  auto fn = [&] { return sum(mul(sample_keyframe(pts, cam, feat, img).values, proj)); };
  EXPECT_LT(grad_check<double>(fn, {pts, feat}, 1e-7).max_relative_error, 1e-3);
}

TEST(SampleKeyframe, IdentityDeformationReproducesGroundTruthColours) {
  const auto av = make_avatar(4);
  CameraSpec cams;
  const auto cam = orbit_camera(cams, 0);
  const auto pose = Pose::rest(4);
  const auto gt = render_ground_truth(av, pose, cam, 1);
  Rng rng(9);
  DeformationField<float> field(av.skeleton, DeformationConfig{}, rng);
  const auto ctx = make_pose_context(av.skeleton, pose);
  // Front-facing torso surface points, away from the arms.
  std::vector<Vec3> pts;
  const auto j = av.skeleton.rest_joints();
  for (int i = 0; i < 20; ++i) {
    const double s = rng.uniform(0.05, 0.3), a = rng.uniform(-0.6, 0.6);
    pts.push_back(j[0] + Vec3(0, s, 0) + av.radius[0] * Vec3(std::sin(a), 0, std::cos(a)));
  }
  const auto x = points_tensor<float>(pts);
  auto obs = field.deform_forward(field.volume(), ctx, x, false);
  auto feat = Tensor<float>::zeros({128, 128, 1});
  auto s = sample_keyframe(obs.points, cam, feat, gt.image);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ASSERT_EQ(s.occluded[i], 0);
    const Vec3 want = avatar_texture(av, 0, pts[i]);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(s.values.at(i, 1 + c), want[c], 0.05) << i;
  }
}

// ---------------------------------------------------------------------------
// Blending

TEST(Blend, ZeroLogitsGiveEqualWeights) {
  Rng rng(10);
  BlendMlp<double> b(5, 8, rng);
  auto& last = b.mlp().layers().back();
  for (auto& v : last.weight.mutable_data()) v = 0;
  auto a = random_tensor<double>(rng, {4, 5}), c = random_tensor<double>(rng, {4, 5});
  auto w = b.weights(a, c);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(w[i], 0.5, 1e-15);
  auto f = b.blend(a, c);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f[i], 0.5 * (a[i] + c[i]), 1e-15);
}

TEST(Blend, OneHotWeightSelectsFirst) {
  Rng rng(11);
  auto a = random_tensor<double>(rng, {3, 5}), c = random_tensor<double>(rng, {3, 5});
  auto w = Tensor<double>::from({3, 2}, {1, 0, 1, 0, 1, 0});
  auto f = BlendMlp<double>::blend_with(a, c, w);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(f[i], a[i]);
}

TEST(Blend, WeightsStayOnSimplexAndOutputIsConvex) {
  Rng rng(12);
  BlendMlp<float> b(19, 32, rng);
  for (int t = 0; t < 20; ++t) {
    auto a = random_tensor<float>(rng, {16, 19}, 3), c = random_tensor<float>(rng, {16, 19}, 3);
    auto w = b.weights(a, c);
    auto f = b.blend_with(a, c, w);
    for (std::size_t i = 0; i < 16; ++i) {
      ASSERT_GE(w.at(i, 0), 0.f);
      ASSERT_GE(w.at(i, 1), 0.f);
      ASSERT_NEAR(w.at(i, 0) + w.at(i, 1), 1.f, 1e-6f);
      for (std::size_t k = 0; k < 19; ++k) {
        ASSERT_GE(f.at(i, k), std::min(a.at(i, k), c.at(i, k)) - 1e-5f);
        ASSERT_LE(f.at(i, k), std::max(a.at(i, k), c.at(i, k)) + 1e-5f);
      }
    }
  }
}

TEST(Blend, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  BlendMlp<double> b(7, 16, rng);
  auto a = random_tensor<double>(rng, {6, 7}), c = random_tensor<double>(rng, {6, 7});
  auto proj = random_tensor<double>(rng, {6, 7});
  auto fn = [&] { return sum(mul(b.blend(a, c), proj)); };
  EXPECT_LT(grad_check<double>(fn, b.mlp().parameters(), 1e-6).max_relative_error, 1e-3);
}
