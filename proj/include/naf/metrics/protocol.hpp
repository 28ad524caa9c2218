#pragma once

// Evaluation protocol: 4:1 frame split, rate subsampling and per-setting
// PSNR/SSIM reports.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "naf/metrics/image_metrics.hpp"
#include "naf/synthdata/dataset.hpp"

namespace naf {

struct FrameSplit {
  std::vector<std::size_t> train;     // Set A
  std::vector<std::size_t> held_out;  // Set B, unseen poses
};

// First 4/5 of the frames (rounded down) train, the rest are held out. No shuffling.
inline FrameSplit split_frames(std::size_t n, std::size_t ratio = 4) {
  if (ratio == 0) throw std::invalid_argument("split ratio must be positive");
  FrameSplit s;
  const std::size_t n_train = n * ratio / (ratio + 1);
  for (std::size_t i = 0; i < n; ++i) (i < n_train ? s.train : s.held_out).push_back(i);
  return s;
}

// Every rate-th entry starting from the first, so ceil(n / rate) survive.
inline std::vector<std::size_t> subsample(const std::vector<std::size_t>& frames, std::size_t rate) {
  if (rate == 0) throw std::invalid_argument("sample rate must be positive");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < frames.size(); i += rate) out.push_back(frames[i]);
  return out;
}

inline std::vector<std::size_t> iota_frames(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

struct ProtocolConfig {
  std::size_t split_ratio = 4;
  std::size_t rate = 1;       // evaluation frame subsampling
  bool bbox = true;           // restrict metrics to the projected skeleton box
  double bbox_padding = 0.1;
  std::size_t max_frames = 0; // per setting, 0 = all
};

struct SettingScore {
  double psnr = 0, ssim = 0, mse = 0;
  std::size_t n_frames = 0;
};

struct EvalReport {
  std::map<std::string, SettingScore> settings;

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, s] : settings)
      j[name] = {{"psnr", s.psnr}, {"ssim", s.ssim}, {"mse", s.mse}, {"n_frames", s.n_frames}, {"lpips", "unavailable"}};
    return j;
  }

  std::string to_csv() const {
    std::string out = "setting,psnr,ssim,mse,n_frames,lpips\n";
    for (const auto& [name, s] : settings) {
      char line[256];
      std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.8f,%zu,unavailable\n", name.c_str(), s.psnr, s.ssim, s.mse,
                    s.n_frames);
      out += line;
    }
    return out;
  }

  void write(const std::filesystem::path& dir, const std::string& stem = "eval") const {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / (stem + ".json")) << to_json().dump(2) << "\n";
    std::ofstream(dir / (stem + ".csv")) << to_csv();
  }
};

// Renders `pose` from `cam`; `frame` is the dataset index being evaluated.
using ViewRenderer = std::function<Image(const Pose& pose, const Camera& cam, std::size_t frame)>;

struct EvalItem {
  std::size_t frame;
  const Camera* cam;
  const Image* gt;
};

inline SettingScore score_items(const Dataset& ds, const std::vector<EvalItem>& items, const ProtocolConfig& cfg,
                                const ViewRenderer& render) {
  SettingScore s;
  for (const auto& it : items) {
    const Pose& pose = ds.frames[it.frame].pose;
    const Image pred = render(pose, *it.cam, it.frame);
    std::optional<PixelBox> crop;
    if (cfg.bbox) crop = skeleton_crop(ds.skeleton, pose, *it.cam, cfg.bbox_padding);
    const double m = mse(pred, *it.gt, crop);
    s.mse += m;
    s.psnr += psnr_from_mse(m);
    // SSIM needs at least one full window inside the crop.
    std::optional<PixelBox> wcrop;
    if (crop) wcrop = grow_box(*crop, kSsimWindow, kSsimWindow, it.gt->width, it.gt->height);
    s.ssim += ssim(pred, *it.gt, wcrop);
    ++s.n_frames;
  }
  if (s.n_frames) {
    s.mse /= s.n_frames;
    s.psnr /= s.n_frames;
    s.ssim /= s.n_frames;
  }
  return s;
}

// novel_view: Set-A poses from the held-out cameras.
// novel_pose: Set-B poses from the training camera.
inline EvalReport evaluate(const Dataset& ds, const ProtocolConfig& cfg, const ViewRenderer& render) {
  const auto split = split_frames(ds.size(), cfg.split_ratio);
  auto cap = [&](std::vector<EvalItem> v) {
    if (cfg.max_frames && v.size() > cfg.max_frames) v.resize(cfg.max_frames);
    return v;
  };
  std::vector<EvalItem> view_items, pose_items;
  const auto train = subsample(split.train, cfg.rate);
  for (std::size_t f : train)
    for (const auto& v : ds.eval_views)
      if (v.frame == f) {
        if (v.image.empty()) throw DatasetError("eval view for frame " + std::to_string(f) + " has no image loaded");
        view_items.push_back({f, &v.cam, &v.image});
      }
  for (std::size_t f : subsample(split.held_out, cfg.rate)) {
    if (ds.frames[f].image.empty()) throw DatasetError("frame " + std::to_string(f) + " has no image loaded");
    pose_items.push_back({f, &ds.frames[f].camera, &ds.frames[f].image});
  }
  EvalReport r;
  r.settings["novel_view"] = score_items(ds, cap(view_items), cfg, render);
  r.settings["novel_pose"] = score_items(ds, cap(pose_items), cfg, render);
  return r;
}

}  // namespace naf
