#pragma once

// Train-then-evaluate runs and the three-way ablation.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "naf/trainer/trainer.hpp"

namespace naf {

struct ExperimentResult {
  std::string name;
  TrainConfig config;
  EvalReport report;
  double violation_fraction = 0;  // held-out poses, in-box samples
  double train_seconds = 0;
  std::vector<StepRecord> log;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Median training MSE over records [begin, end).
inline double window_median_mse(const std::vector<StepRecord>& log, std::size_t begin, std::size_t end) {
  std::vector<double> v;
  for (std::size_t i = begin; i < std::min(end, log.size()); ++i) v.push_back(log[i].mse);
  return median(v);
}

inline EvalReport evaluate_model(const Model<float>& model, const SceneState<float>& scene, const Dataset& ds,
                                 const ProtocolConfig& proto) {
  return evaluate(ds, proto, [&](const Pose& pose, const Camera& cam, std::size_t) {
    return render_image(model, scene, pose, cam);
  });
}

inline double heldout_violation(const Model<float>& model, const SceneState<float>& scene, const Dataset& ds,
                                const ProtocolConfig& proto, int stride = 4) {
  const auto frames = subsample(split_frames(ds.size(), proto.split_ratio).held_out, proto.rate);
  std::vector<double> v;
  for (std::size_t i = 0; i < frames.size() && (!proto.max_frames || i < proto.max_frames); ++i) {
    const auto& f = ds.frames[frames[i]];
    v.push_back(violation_fraction(model, scene, f.pose, f.camera, stride));
  }
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0 : s / static_cast<double>(v.size());
}

inline ExperimentResult run_experiment(const Dataset& ds, const TrainConfig& cfg, const ProtocolConfig& proto,
                                       const std::string& name,
                                       const std::function<void(const StepRecord&)>& on_step = {}) {
  ExperimentResult r;
  r.name = name;
  r.config = cfg;
  const auto t0 = std::chrono::steady_clock::now();
  Trainer tr(ds, cfg);
  r.log = tr.train(on_step);
  r.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  auto scene = prepare_scene(tr.model(), cfg.no_feat ? nullptr : &tr.bank(), nonrigid_enabled(cfg, tr.iteration()));
  r.report = evaluate_model(tr.model(), scene, ds, proto);
  r.violation_fraction = heldout_violation(tr.model(), scene, ds, proto);
  return r;
}

inline std::vector<std::pair<std::string, TrainConfig>> ablation_variants(const TrainConfig& base) {
  auto full = base, no_consis = base, no_feat = base;
  full.no_consis = full.no_feat = false;
  no_consis.no_consis = true;
  no_consis.no_feat = false;
  no_feat.no_feat = true;
  no_feat.no_consis = false;
  return {{"full", full}, {"no_consis", no_consis}, {"no_feat", no_feat}};
}

// Markdown table, one row per variant, novel-pose MSE/PSNR/SSIM first.
inline std::string ablation_table(const std::vector<ExperimentResult>& rows) {
  std::string s =
      "| variant | novel-pose MSE | novel-pose PSNR | novel-pose SSIM | novel-view PSNR | violation |\n"
      "|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    const auto& p = r.report.settings.at("novel_pose");
    const auto& v = r.report.settings.at("novel_view");
    char line[256];
    std::snprintf(line, sizeof line, "| %s | %.6f | %.3f | %.4f | %.3f | %.4f |\n", r.name.c_str(), p.mse, p.psnr,
                  p.ssim, v.psnr, r.violation_fraction);
    s += line;
  }
  return s;
}

}  // namespace naf
