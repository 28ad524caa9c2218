#pragma once

// Loss assembly, grouped Adam and the training loop.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "naf/metrics/protocol.hpp"
#include "naf/numcore/adam.hpp"
#include "naf/numcore/checkpoint.hpp"
#include "naf/trainer/config.hpp"

namespace naf {

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Perceptual loss over (pred, gt) colour batches [R, 3]; returns a scalar.
template <typename Real>
using LpipsHook = std::function<Tensor<Real>(const Tensor<Real>&, const Tensor<Real>&)>;

template <typename Real>
struct LossTerms {
  Tensor<Real> total;
  double mse = 0, lpips = 0, consis = 0, total_value = 0;
};

// L = L_MSE + lambda * L_LPIPS + L_CONSIS, with L_MSE = mean over rays of |C - C_gt|^2.
template <typename Real>
LossTerms<Real> compute_loss(const Tensor<Real>& pred, const Tensor<Real>& gt, const Tensor<Real>& consistency,
                             const TrainConfig& cfg, const LpipsHook<Real>& lpips = {}) {
  if (pred.shape() != gt.shape() || pred.ndim() != 2 || pred.dim(1) != 3)
    throw ShapeError("compute_loss: prediction " + shape_str(pred.shape()) + " vs target " + shape_str(gt.shape()));
  LossTerms<Real> t;
  auto d = sub(pred, gt);
  auto l_mse = scale(sum(mul(d, d)), Real(1) / static_cast<Real>(pred.rows()));
  t.total = l_mse;
  t.mse = l_mse.item();
  if (lpips && cfg.lambda_lpips > 0) {
    auto l = lpips(pred, gt);
    t.lpips = l.item();
    t.total = add(t.total, scale(l, static_cast<Real>(cfg.lambda_lpips)));
  }
  if (!cfg.no_consis && consistency.defined()) {
    t.consis = consistency.item();
    t.total = add(t.total, consistency);
  }
  t.total_value = t.total.item();
  return t;
}

// "deformation" holds every deformation.* tensor; "rest" holds the others.
template <typename Real>
std::vector<ParamGroup<Real>> param_groups(const Model<Real>& model, const TrainConfig& cfg) {
  ParamGroup<Real> def{"deformation", {}, cfg.lr_deformation}, rest{"rest", {}, cfg.lr_rest};
  for (auto& [name, t] : model.named_parameters())
    (name.starts_with("deformation.") ? def : rest).params.push_back(t);
  return {def, rest};
}

struct StepRecord {
  long iter = 0;
  std::size_t frame = 0;
  double mse = 0, consis = 0, lpips = 0, total = 0;
  double violation_fraction = -1;  // < 0 when consistency was not evaluated
  double lr_deformation = 0, lr_rest = 0;
  double seconds = 0;

  nlohmann::json to_json() const {
    nlohmann::json j{{"iter", iter},   {"frame", frame},
                     {"mse", mse},     {"consis", consis},
                     {"lpips", lpips}, {"total", total},
                     {"lr", {{"deformation", lr_deformation}, {"rest", lr_rest}}},
                     {"seconds", seconds}};
    j["violation_fraction"] = violation_fraction < 0 ? nlohmann::json() : nlohmann::json(violation_fraction);
    return j;
  }
};

// Square dilation of a binary mask.
inline std::vector<std::uint8_t> dilate_mask(const Image& mask, int radius) {
  const int w = mask.width, h = mask.height;
  std::vector<std::uint8_t> rows(static_cast<std::size_t>(w) * h, 0), out(rows.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask.at(x, y) > 0.5f)
        for (int dx = std::max(0, x - radius); dx <= std::min(w - 1, x + radius); ++dx) rows[y * w + dx] = 1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (rows[y * w + x])
        for (int dy = std::max(0, y - radius); dy <= std::min(h - 1, y + radius); ++dy) out[dy * w + x] = 1;
  return out;
}

inline std::vector<std::size_t> training_frames(std::size_t n_frames, std::size_t sample_rate) {
  return subsample(split_frames(n_frames).train, sample_rate);
}

inline bool nonrigid_enabled(const TrainConfig& cfg, long iteration) {
  return cfg.nonrigid && iteration >= cfg.nonrigid_warmup;
}

class Trainer {
 public:
  using Real = float;

  Trainer(const Dataset& ds, const TrainConfig& cfg, std::optional<KeyframeSelection> selection = std::nullopt)
      : ds_(&ds), cfg_(cfg) {
    cfg_.validate();
    if (ds.size() < 2) throw DatasetError("training needs at least 2 frames");
    frames_ = training_frames(ds.size(), cfg_.sample_rate);
    if (frames_.size() < 2) throw ConfigError("sample_rate leaves fewer than 2 training frames");
    bank_ = KeyframeBank::from_dataset(ds, selection ? *selection : select_keyframes(ds, frames_));
    model_ = Model<Real>(ds.skeleton, cfg_.model_config(), cfg_.seed);
    opt_ = Adam<Real>(param_groups(model_, cfg_));
    rng_ = Rng(cfg_.seed).fork(31);
    for (std::size_t f : frames_) {
      const auto& fr = ds.frames[f];
      if (fr.image.empty() || fr.mask.empty()) throw DatasetError("frame " + std::to_string(f) + " has no image loaded");
      const auto dil = dilate_mask(fr.mask, cfg_.mask_dilation);
      auto& [fg, bg] = pixels_.emplace_back();
      for (std::size_t p = 0; p < dil.size(); ++p) (dil[p] ? fg : bg).push_back(static_cast<std::uint32_t>(p));
    }
    if (!cfg_.out.empty()) {
      std::filesystem::create_directories(cfg_.out);
      std::ofstream(std::filesystem::path(cfg_.out) / "config.txt") << config_text(cfg_);
      std::ofstream(std::filesystem::path(cfg_.out) / "keyframes.json") << bank_.selection.to_json().dump(2) << "\n";
      metrics_.open(std::filesystem::path(cfg_.out) / "metrics.jsonl", std::ios::trunc);
    }
  }

  StepRecord step() {
    const auto t0 = std::chrono::steady_clock::now();
    ++iter_;
    const std::size_t slot = rng_.below(frames_.size());
    const std::size_t f = frames_[slot];
    const Frame& fr = ds_->frames[f];

    // 80/20 mask/background split; fall back to whichever pool exists.
    const auto& [fg, bg] = pixels_[slot];
    std::size_t n_fg = static_cast<std::size_t>(std::llround(cfg_.fg_fraction * static_cast<double>(cfg_.batch_rays)));
    if (bg.empty()) n_fg = cfg_.batch_rays;
    if (fg.empty()) n_fg = 0;
    std::vector<Ray> rays;
    Buffer<Real> gt;
    rays.reserve(cfg_.batch_rays);
    gt.reserve(cfg_.batch_rays * 3);
    for (std::size_t i = 0; i < cfg_.batch_rays; ++i) {
      const auto& pool = i < n_fg ? fg : bg;
      const std::uint32_t p = pool[rng_.below(pool.size())];
      const int x = static_cast<int>(p % fr.image.width), y = static_cast<int>(p / fr.image.width);
      rays.push_back(fr.camera.pixel_ray(x, y));
      for (int c = 0; c < 3; ++c) gt.push_back(fr.image.at(x, y, c));
    }

    const bool nonrigid = nonrigid_enabled(cfg_, iter_);
    auto scene = prepare_scene(model_, cfg_.no_feat ? nullptr : &bank_, nonrigid);
    const auto ctx = make_pose_context(ds_->skeleton, fr.pose);
    const auto box = posed_bounds(ds_->skeleton, fr.pose, cfg_.box_padding);
    RenderOptions ro{true, &rng_, !cfg_.no_consis, cfg_.stop_consistency_backward};
    auto out = render_rays(model_, scene, ctx, box, rays, ro);
    auto target = Tensor<Real>::from({rays.size(), 3}, std::move(gt));
    auto loss = compute_loss(out.rgb, target, out.consistency.loss, cfg_, lpips_);

    StepRecord rec;
    rec.iter = iter_;
    rec.frame = f;
    rec.mse = loss.mse;
    rec.consis = loss.consis;
    rec.lpips = loss.lpips;
    rec.total = loss.total_value;
    rec.lr_deformation = opt_.groups()[0].lr;
    rec.lr_rest = opt_.groups()[1].lr;
    if (ro.consistency && out.consistency.valid) {
      std::size_t v = 0;
      for (auto b : out.consistency.violating) v += b;
      rec.violation_fraction = static_cast<double>(v) / static_cast<double>(out.consistency.valid);
    }
    if (!std::isfinite(rec.total)) abort_with_dump(rec);

    opt_.zero_grad();
    backward(loss.total);
    opt_.step();
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (metrics_.is_open() && (iter_ % std::max(1L, cfg_.log_every) == 0 || iter_ == 1))
      metrics_ << rec.to_json().dump() << "\n" << std::flush;
    return rec;
  }

  // Runs the configured number of iterations; `on_step` sees every record.
  std::vector<StepRecord> train(const std::function<void(const StepRecord&)>& on_step = {}) {
    std::vector<StepRecord> log;
    while (iter_ < cfg_.iterations) {
      log.push_back(step());
      if (on_step) on_step(log.back());
      if (!cfg_.out.empty() && cfg_.checkpoint_every > 0 && iter_ % cfg_.checkpoint_every == 0)
        save(std::filesystem::path(cfg_.out) / "checkpoint.naf");
    }
    if (!cfg_.out.empty()) save(std::filesystem::path(cfg_.out) / "checkpoint.naf");
    return log;
  }

  void save(const std::filesystem::path& path) const {
    std::vector<CheckpointEntry> entries;
    for (auto& [name, t] : model_.named_parameters()) {
      const auto dot = name.find('.');
      entries.push_back({name.substr(0, dot), name.substr(dot + 1), t});
    }
    nlohmann::json cfgj = config_values(cfg_);
    save_checkpoint(path, entries,
                    {{"config", cfgj}, {"iteration", iter_}, {"keyframes", bank_.selection.to_json()}});
  }

  void set_lpips_hook(LpipsHook<Real> hook) { lpips_ = std::move(hook); }

  Model<Real>& model() { return model_; }
  const Model<Real>& model() const { return model_; }
  Adam<Real>& optimizer() { return opt_; }
  const TrainConfig& config() const { return cfg_; }
  const KeyframeBank& bank() const { return bank_; }
  const std::vector<std::size_t>& frames() const { return frames_; }
  long iteration() const { return iter_; }

 private:
  [[noreturn]] void abort_with_dump(const StepRecord& rec) const {
    nlohmann::json dump{{"step", rec.to_json()}, {"config", config_values(cfg_)}};
    nlohmann::json params = nlohmann::json::array();
    for (auto& [name, t] : model_.named_parameters()) {
      bool finite = true;
      for (Real v : t.data()) finite = finite && std::isfinite(v);
      if (!finite) params.push_back(name);
    }
    dump["non_finite_parameters"] = params;
    std::string where;
    if (!cfg_.out.empty()) {
      const auto p = std::filesystem::path(cfg_.out) / "nan_dump.json";
      std::ofstream(p) << dump.dump(2) << "\n";
      where = "; diagnostics written to " + p.string();
    }
    throw NonFiniteLossError("non-finite loss at iteration " + std::to_string(rec.iter) + " (mse " +
                             std::to_string(rec.mse) + ", consis " + std::to_string(rec.consis) + ")" + where);
  }

  const Dataset* ds_;
  TrainConfig cfg_;
  std::vector<std::size_t> frames_;
  KeyframeBank bank_;
  Model<Real> model_;
  Adam<Real> opt_;
  Rng rng_;
  long iter_ = 0;
  std::vector<std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>>> pixels_;
  std::ofstream metrics_;
  LpipsHook<Real> lpips_;
};

struct TrainedModel {
  TrainConfig config;
  Model<float> model;
  KeyframeSelection selection;
  long iteration = 0;
};

// Rebuilds the model recorded in a checkpoint. `adjust` may change flags
// (ablation switches, sampling) before the architecture is instantiated;
// architecture changes surface as shape mismatches.
inline TrainedModel load_trained(const std::filesystem::path& path, const Skeleton& skel,
                                 const std::function<void(TrainConfig&)>& adjust = {}) {
  const auto ck = load_checkpoint(path);
  TrainedModel tm;
  const auto& extra = ck.extra();
  if (!extra.contains("config")) throw CheckpointError("checkpoint has no training config: " + path.string());
  for (const auto& [k, v] : extra.at("config").items()) set_config_value(tm.config, k, v.get<std::string>());
  if (adjust) adjust(tm.config);
  tm.iteration = extra.value("iteration", 0L);
  if (extra.contains("keyframes")) tm.selection = KeyframeSelection::from_json(extra.at("keyframes"));
  tm.model = Model<float>(skel, tm.config.model_config(), tm.config.seed);
  std::vector<CheckpointEntry> targets;
  for (auto& [name, t] : tm.model.named_parameters()) {
    const auto dot = name.find('.');
    targets.push_back({name.substr(0, dot), name.substr(dot + 1), t});
  }
  restore_checkpoint(ck, targets);
  if (ck.tensors.size() != targets.size())
    throw CheckpointError("checkpoint holds " + std::to_string(ck.tensors.size()) + " tensors, model expects " +
                          std::to_string(targets.size()));
  return tm;
}

// Share of in-box samples whose cycle error reaches theta, over the pixels
// of `cam` on a regular stride.
template <typename Real>
double violation_fraction(const Model<Real>& model, const SceneState<Real>& scene, const Pose& pose,
                          const Camera& cam, int stride = 4) {
  NoGradGuard no_grad;
  const auto ctx = make_pose_context(model.deformation.skeleton(), pose);
  const auto box = posed_bounds(model.deformation.skeleton(), pose, model.config().box_padding);
  std::vector<Ray> rays;
  for (int y = 0; y < cam.height; y += stride)
    for (int x = 0; x < cam.width; x += stride) rays.push_back(cam.pixel_ray(x, y));
  std::size_t violating = 0, valid = 0;
  for (std::size_t start = 0; start < rays.size(); start += 512) {
    std::vector<Ray> chunk(rays.begin() + start, rays.begin() + std::min(rays.size(), start + 512));
    RenderOptions ro;
    ro.consistency = true;
    const auto out = render_rays(model, scene, ctx, box, chunk, ro);
    valid += out.consistency.valid;
    for (auto b : out.consistency.violating) violating += b;
  }
  return valid ? static_cast<double>(violating) / static_cast<double>(valid) : 0.0;
}

}  // namespace naf
