#pragma once

// Full render path: observation samples -> canonical points -> keyframe
// correspondences -> radiance -> compositing over a background colour.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "naf/correspondence/features.hpp"
#include "naf/correspondence/keyframes.hpp"
#include "naf/deformation/deformation_field.hpp"
#include "naf/radiance/network.hpp"
#include "naf/radiance/volume.hpp"

namespace naf {

struct ModelConfig {
  DeformationConfig deformation;
  FeatureConfig features;
  RadianceConfig radiance;
  std::size_t blend_hidden = 32;
  bool blend_softmax = true;
  bool no_feat = false;        // replace the blended feature with zeros
  std::size_t samples = 128;   // per ray
  double box_padding = 0.12;   // posed-skeleton box, fraction of its largest extent
  Vec3 background = Vec3::Ones();
};

template <typename Real = float>
class Model {
 public:
  Model() = default;
  Model(const Skeleton& skel, const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    auto rd = rng.fork(11), rf = rng.fork(12), rb = rng.fork(13), rr = rng.fork(14);
    cfg_.radiance.feature_dim = cfg.features.channels + 3;
    deformation = DeformationField<Real>(skel, cfg.deformation, rd);
    extractor = FeatureExtractor<Real>(cfg.features, rf);
    blend = BlendMlp<Real>(cfg.features.channels + 3, cfg.blend_hidden, rb, cfg.blend_softmax);
    radiance = RenderingNetwork<Real>(cfg_.radiance, rr);
  }

  DeformationField<Real> deformation;
  FeatureExtractor<Real> extractor;
  BlendMlp<Real> blend;
  RenderingNetwork<Real> radiance;

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  std::size_t feature_width() const { return cfg_.features.channels + 3; }

  // Names are "<module>.<...>"; modules: deformation, features, blend, radiance.
  std::vector<std::pair<std::string, Tensor<Real>>> named_parameters() const {
    auto out = deformation.named_parameters("deformation");
    for (auto& p : extractor.named_parameters("features")) out.push_back(p);
    for (auto& p : blend.mlp().named_parameters("blend")) out.push_back(p);
    for (auto& p : radiance.named_parameters("radiance")) out.push_back(p);
    return out;
  }

 private:
  ModelConfig cfg_;
};

// Per-step quantities shared by every ray: the decoded weight volume and the
// keyframe feature maps.
template <typename Real>
struct SceneState {
  MotionWeightVolume<Real> volume;
  const KeyframeBank* bank = nullptr;
  std::array<Tensor<Real>, 2> features;
  std::array<PoseContext, 2> keyframe_ctx;
  bool nonrigid = false;
};

template <typename Real>
SceneState<Real> prepare_scene(const Model<Real>& model, const KeyframeBank* bank, bool nonrigid) {
  SceneState<Real> s;
  s.volume = model.deformation.volume();
  s.nonrigid = nonrigid;
  s.bank = bank;
  if (!model.config().no_feat) {
    if (!bank) throw std::invalid_argument("rendering with keyframe features needs a keyframe bank");
    for (int k = 0; k < 2; ++k) {
      s.features[k] = model.extractor.extract(bank->frames[k].image, bank->frames[k].mask);
      s.keyframe_ctx[k] = make_pose_context(model.deformation.skeleton(), bank->frames[k].pose);
    }
  }
  return s;
}

template <typename Real>
struct RenderOutput {
  Tensor<Real> rgb;    // [R, 3], over the background
  Tensor<Real> alpha;  // [R, 1]
  CycleResult<Real> consistency;  // filled when requested
  std::size_t samples = 0, valid_samples = 0;
};

struct RenderOptions {
  bool stratified = false;
  Rng* rng = nullptr;
  bool consistency = false;
  bool stop_consistency_backward = false;
};

// Blended keyframe feature for canonical points [N, 3] -> [N, C + 3].
template <typename Real>
Tensor<Real> keyframe_feature(const Model<Real>& model, const SceneState<Real>& scene, const Tensor<Real>& x_can) {
  if (model.config().no_feat) return Tensor<Real>::zeros({x_can.rows(), model.feature_width()});
  std::array<Tensor<Real>, 2> s;
  for (int k = 0; k < 2; ++k) {
    auto obs = model.deformation.deform_forward(scene.volume, scene.keyframe_ctx[k], x_can, scene.nonrigid);
    s[k] = sample_keyframe(obs.points, scene.bank->frames[k].camera, scene.features[k], scene.bank->frames[k].image)
               .values;
  }
  return model.blend.blend(s[0], s[1]);
}

template <typename Real>
RenderOutput<Real> render_rays(const Model<Real>& model, const SceneState<Real>& scene, const PoseContext& ctx,
                               const Aabb& box, const std::vector<Ray>& rays, const RenderOptions& opt = {}) {
  const std::size_t r = rays.size(), d = model.config().samples;
  const Vec3& bg = model.config().background;
  RenderOutput<Real> out;
  std::vector<std::uint32_t> hit;
  Buffer<Real> pts, delta;
  for (std::size_t i = 0; i < r; ++i) {
    const auto s = sample_ray(rays[i], box, d, opt.stratified, opt.rng);
    if (s.empty) continue;
    hit.push_back(static_cast<std::uint32_t>(i));
    for (std::size_t k = 0; k < d; ++k) {
      const Vec3 x = rays[i].origin + s.t[k] * rays[i].direction;
      for (int c = 0; c < 3; ++c) pts.push_back(static_cast<Real>(x[c]));
      delta.push_back(static_cast<Real>(s.delta[k]));
    }
  }
  Buffer<Real> bg_rgb(r * 3);
  for (std::size_t i = 0; i < r; ++i)
    for (int c = 0; c < 3; ++c) bg_rgb[i * 3 + c] = static_cast<Real>(bg[c]);
  if (hit.empty()) {
    out.rgb = Tensor<Real>::from({r, 3}, std::move(bg_rgb));
    out.alpha = Tensor<Real>::zeros({r, 1});
    out.consistency.loss = Tensor<Real>::scalar(0);
    return out;
  }
  const std::size_t m = hit.size() * d;
  out.samples = m;
  auto x_obs = Tensor<Real>::from({m, 3}, std::move(pts));
  auto canon = model.deformation.deform_backward(scene.volume, ctx, x_obs, scene.nonrigid);
  std::vector<std::uint32_t> valid;
  for (std::size_t i = 0; i < m; ++i)
    if (!canon.empty[i]) valid.push_back(static_cast<std::uint32_t>(i));
  out.valid_samples = valid.size();

  Tensor<Real> ray_rgba;
  if (valid.empty()) {
    ray_rgba = Tensor<Real>::zeros({hit.size(), 4});
  } else {
    auto xc = gather_rows(canon.points, valid);
    auto q = model.radiance.query(xc, keyframe_feature(model, scene, xc));
    ray_rgba = composite(scatter_rows(q.rgb, valid, m), scatter_rows(q.sigma, valid, m), delta, d);
  }
  if (opt.consistency)
    out.consistency = model.deformation.consistency_from(scene.volume, ctx, x_obs, canon.points, canon.empty,
                                                         scene.nonrigid, opt.stop_consistency_backward);
  else
    out.consistency.loss = Tensor<Real>::scalar(0);

  // Rays that miss the box keep the exact background.
  auto full = scatter_rows(ray_rgba, hit, r);
  auto alpha = slice_cols(full, 3, 4);
  auto transparency = add_scalar(scale(alpha, Real(-1)), Real(1));
  out.rgb = add(slice_cols(full, 0, 3), mul_colvec(Tensor<Real>::from({r, 3}, std::move(bg_rgb)), transparency));
  out.alpha = alpha;
  return out;
}

// Inference render of a whole image, in chunks of rays, without recording gradients.
template <typename Real>
Image render_image(const Model<Real>& model, const SceneState<Real>& scene, const Pose& pose, const Camera& cam,
                   std::size_t chunk = 2048, Image* alpha_out = nullptr) {
  NoGradGuard no_grad;
  const auto ctx = make_pose_context(model.deformation.skeleton(), pose);
  const auto box = posed_bounds(model.deformation.skeleton(), pose, model.config().box_padding);
  Image img(cam.width, cam.height, 3);
  if (alpha_out) *alpha_out = Image(cam.width, cam.height, 1);
  const std::size_t n = img.pixels();
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    std::vector<Ray> rays;
    for (std::size_t p = start; p < end; ++p)
      rays.push_back(cam.pixel_ray(static_cast<double>(p % cam.width), static_cast<double>(p / cam.width)));
    const auto res = render_rays(model, scene, ctx, box, rays);
    for (std::size_t p = start; p < end; ++p) {
      for (int c = 0; c < 3; ++c) img.data[p * 3 + c] = static_cast<float>(res.rgb.at(p - start, c));
      if (alpha_out) alpha_out->data[p] = static_cast<float>(res.alpha[p - start]);
    }
  }
  return img;
}

// Single pixel convenience wrapper.
template <typename Real>
Vec3 render_pixel(const Model<Real>& model, const SceneState<Real>& scene, const Pose& pose, const Camera& cam,
                  double u, double v) {
  NoGradGuard no_grad;
  const auto ctx = make_pose_context(model.deformation.skeleton(), pose);
  const auto box = posed_bounds(model.deformation.skeleton(), pose, model.config().box_padding);
  const auto res = render_rays(model, scene, ctx, box, {cam.pixel_ray(u, v)});
  return {res.rgb.at(0, 0), res.rgb.at(0, 1), res.rgb.at(0, 2)};
}

}  // namespace naf
