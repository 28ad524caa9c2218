// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   acceptance [--only 1,5,9] [--full] [--seeds 3] [--out DIR]
//
// Criteria 6 and 7 train real models. By default they use the desk budget
// below; --full switches to the library defaults at 20k iterations.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "naf/correspondence/keyframes.hpp"
#include "naf/deformation/diagnostic.hpp"
#include "naf/numcore/grad_check.hpp"
#include "naf/trainer/experiment.hpp"

using namespace naf;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Vec3 random_point(Rng& rng, const Vec3& lo, const Vec3& hi) {
  return {rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()), rng.uniform(lo.z(), hi.z())};
}

template <typename Real>
Tensor<Real> random_tensor(Rng& rng, Shape shape, double s = 1.0) {
  Buffer<Real> v(numel(shape));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(-s, s));
  return Tensor<Real>::from(std::move(shape), std::move(v));
}

Pose random_pose(Rng& rng, std::size_t joints, double amp) {
  Pose p = Pose::rest(joints);
  for (auto& w : p.rotations) w = {rng.uniform(-amp, amp), rng.uniform(-amp, amp), rng.uniform(-amp, amp)};
  p.root_translation = {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
  return p;
}

Skeleton single_bone() {
  Skeleton s;
  s.parents = {-1};
  s.offsets = {{0, 0, 0}};
  s.tails = {{0, 1, 0}};
  s.names = {"bone"};
  return s;
}

template <typename Real>
void randomize(Tensor<Real> t, Rng& rng, double s) {
  for (auto& v : t.mutable_data()) v = static_cast<Real>(rng.uniform(-s, s));
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
  const auto t0 = clk::now();
  Rng rng(101);
  std::map<std::string, double> err;
  const auto av = make_avatar(4);

  WeightVolumeDecoder<double> dec({8, 2, 2, 4}, 4, GridSpec{}, rng);
  auto vproj = random_tensor<double>(rng, {dec.spec().voxels(), 4});
  err["decoder"] = grad_check<double>([&] { return sum(mul(dec.generate().weights, vproj)); }, dec.parameters(), 1e-5)
                       .max_relative_error;

  DeformationConfig dc;
  dc.decoder = {8, 2, 2, 4};
  dc.nonrigid_width = 16;
  dc.nonrigid_frequencies = 2;
  DeformationField<double> field(av.skeleton, dc, rng);
  for (auto* nr : {&field.nonrigid_backward(), &field.nonrigid_forward()}) {
    randomize(nr->mlp().layers().back().weight, rng, 0.05);
    randomize(nr->mlp().layers().back().bias, rng, 0.05);
  }
  const auto ctx = make_pose_context(av.skeleton, random_pose(rng, av.bones(), 0.4));
  const auto box = posed_bounds(av.skeleton, Pose::rest(av.bones()), 0.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 12; ++i) pts.push_back(random_point(rng, box.lo, box.hi));
  const auto x = points_tensor<double>(pts);
  auto pproj = random_tensor<double>(rng, {pts.size(), 3});
  err["non-rigid backward"] =
      grad_check<double>([&] { return sum(mul(field.deform_backward(field.volume(), ctx, x, true).points, pproj)); },
                         field.nonrigid_backward().mlp().parameters(), 1e-6)
          .max_relative_error;
  err["non-rigid forward"] =
      grad_check<double>([&] { return sum(mul(field.deform_forward(field.volume(), ctx, x, true).points, pproj)); },
                         field.nonrigid_forward().mlp().parameters(), 1e-6)
          .max_relative_error;

  BlendMlp<double> blend(7, 16, rng);
  auto a = random_tensor<double>(rng, {6, 7}), b = random_tensor<double>(rng, {6, 7});
  auto bproj = random_tensor<double>(rng, {6, 7});
  err["blend"] = grad_check<double>([&] { return sum(mul(blend.blend(a, b), bproj)); }, blend.mlp().parameters(), 1e-6)
                     .max_relative_error;

  FeatureExtractor<double> fx(FeatureConfig{16, 4}, rng);
  randomize(fx.layers().back().weight, rng, 0.5);
  Image img(8, 8, 3), mask(8, 8, 1, 1.f);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  mask.at(0, 0) = 0.f;
  auto fproj = random_tensor<double>(rng, {8, 8, 16});
  err["feature extractor"] =
      grad_check<double>([&] { return sum(mul(fx.extract(img, mask), fproj)); }, fx.parameters(), 1e-6)
          .max_relative_error;

  RenderingNetwork<double> net(RadianceConfig{16, 3, 4, 5}, rng);
  randomize(net.stage2().layers().back().weight, rng, 0.5);
  auto q_x = random_tensor<double>(rng, {6, 3}), q_f = random_tensor<double>(rng, {6, 5});
  auto pr = random_tensor<double>(rng, {6, 3}), ps = random_tensor<double>(rng, {6, 1});
  err["rendering network"] = grad_check<double>(
                                 [&] {
                                   auto q = net.query(q_x, q_f);
                                   return add(sum(mul(q.rgb, pr)), sum(mul(q.sigma, ps)));
                                 },
                                 net.parameters(), 1e-6)
                                 .max_relative_error;

  double worst = 0;
  std::string detail;
  for (auto& [name, e] : err) {
    worst = std::max(worst, e);
    detail += fmt("%s%s %.1e", detail.empty() ? "" : ", ", name.c_str(), e);
  }
  const double secs = std::chrono::duration<double>(clk::now() - t0).count();
  return {worst < 1e-3 && secs < 60, fmt("max rel err %.2e in %.1fs (", worst, secs) + detail + ")"};
}

Outcome deformation_cycle() {
  Rng rng(102);
  DeformationConfig cfg;
  cfg.use_prior = false;
  DeformationField<float> field(single_bone(), cfg, rng);
  const auto vol = field.volume();
  double worst = 0;
  std::size_t n = 0;
  for (int trial = 0; trial < 5; ++trial) {
    Pose pose = Pose::rest(1);
    pose.rotations[0] = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    pose.root_translation = {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
    const auto ctx = make_pose_context(single_bone(), pose);
    const auto to_obs = posed_bone_maps(single_bone(), pose)[0];
    std::vector<Vec3> pts;
    for (int i = 0; i < 10000; ++i)
      pts.push_back(to_obs.apply(random_point(rng, vol.spec.lo * 0.9, vol.spec.hi * 0.9)));
    auto cyc = field.consistency_loss(vol, ctx, points_tensor<float>(pts), true);
    if (cyc.valid != pts.size()) return {false, fmt("only %zu of %zu points were deformable", cyc.valid, pts.size())};
    for (float d : cyc.distances) worst = std::max(worst, static_cast<double>(d));
    n += pts.size();
  }
  return {worst < 1e-5, fmt("max cycle error %.2e over %zu points in 5 poses", worst, n)};
}

Outcome consistency_branches() {
  const double theta = 0.05, eps = 1e-4;
  bool ok = true;
  std::string detail;
  for (double d : {theta - eps, theta, theta + eps}) {
    auto r = thresholded_cycle_loss(Tensor<double>::from({1, 3}, {d, 0, 0}), Tensor<double>::zeros({1, 3}), theta);
    const double want = d >= theta ? d : 0.0;
    ok = ok && r.loss.item() == want && r.violating[0] == (d >= theta);
    detail += fmt("%sd=%.4f -> %.4f", detail.empty() ? "" : ", ", d, r.loss.item());
  }
  return {ok, detail};
}

Outcome simplex_invariant() {
  Rng rng(104);
  const auto av = make_avatar(10);
  DeformationConfig cfg;
  cfg.use_prior = false;
  DeformationField<float> field(av.skeleton, cfg, rng);
  const auto vol = field.volume();
  const std::size_t k = av.bones();
  std::size_t checked = 0;
  double worst_sum = 0, min_w = 1;
  while (checked < 100000) {
    const auto pose = random_pose(rng, k, 0.6);
    const auto ctx = make_pose_context(av.skeleton, pose);
    const auto box = posed_bounds(av.skeleton, pose);
    std::vector<Vec3> pts;
    for (int i = 0; i < 20000; ++i) pts.push_back(random_point(rng, box.lo, box.hi));
    auto r = backward_skeletal(vol, ctx.to_canonical, points_tensor<float>(pts));
    for (std::size_t i = 0; i < pts.size() && checked < 100000; ++i) {
      if (r.empty[i]) continue;
      double s = 0;
      for (std::size_t j = 0; j < k; ++j) {
        min_w = std::min(min_w, static_cast<double>(r.weights[i * k + j]));
        s += r.weights[i * k + j];
      }
      worst_sum = std::max(worst_sum, std::abs(s - 1));
      ++checked;
    }
  }
  return {worst_sum < 1e-5 && min_w >= 0,
          fmt("%zu non-empty points, max |sum-1| %.2e, min weight %.2e", checked, worst_sum, min_w)};
}

Outcome beer_lambert() {
  const std::size_t d = 256;
  const auto s = sample_depths(0.0, 1.0, d, false, nullptr);
  const Buffer<double> dt(s.delta.begin(), s.delta.end());
  auto out = composite(Tensor<double>::full({d, 3}, 1.0), Tensor<double>::full({d, 1}, 2.0), dt, d);
  const double want = 1 - std::exp(-2.0);
  const double e = std::max(std::abs(out[0] - want), std::abs(out[3] - want));
  return {e < 1e-3, fmt("composited %.6f, alpha %.6f, 1-e^-2 = %.6f", out[0], out[3], want)};
}

// ---------------------------------------------------------------------------
// Training criteria

struct Budget {
  TrainConfig cfg;
  ProtocolConfig proto;
  std::string label;
};

// Desk budget: about 2.5 hours of one core for all nine runs. The smaller
// network and shorter schedule need a larger step on the non-deformation
// parameters to get past the grey, view-averaged colour solution.
Budget desk_budget() {
  Budget b;
  auto& c = b.cfg;
  c.iterations = 4000;
  c.batch_rays = 256;
  c.samples = 64;
  c.width = 32;
  c.layers = 4;
  c.feature_base = 8;
  c.feature_channels = 8;
  c.nonrigid_width = 32;
  c.nonrigid_warmup = 1000;
  c.lr_rest = 2e-3;
  c.log_every = 100;
  b.label = "desk budget";
  return b;
}

Budget full_budget() {
  Budget b;
  b.cfg.iterations = 20000;
  b.cfg.log_every = 100;
  b.label = "full budget";
  return b;
}

const Dataset& scene_dataset() {
  static const Dataset ds = generate_dataset(make_avatar(4), 40, MotionSpec{}, CameraSpec{}, 1, true, 4);
  return ds;
}

struct TrainingRuns {
  Budget budget;
  int seeds = 3;
  fs::path out;
  std::map<std::string, std::vector<ExperimentResult>> results;

  const std::vector<ExperimentResult>& get(const std::string& variant) {
    auto& v = results[variant];
    if (!v.empty()) return v;
    const auto variants = ablation_variants(budget.cfg);
    TrainConfig cfg;
    for (auto& [name, c] : variants)
      if (name == variant) cfg = c;
    for (int s = 0; s < seeds; ++s) {
      cfg.seed = static_cast<std::uint64_t>(s + 1);
      const auto dir = out / (variant + "_seed" + std::to_string(s + 1));
      fs::create_directories(dir);
      cfg.out = dir.string();
      const auto t0 = clk::now();
      std::fprintf(stderr, "  training %s seed %d (%s, %ld iterations)\n", variant.c_str(), s + 1,
                   budget.label.c_str(), cfg.iterations);
      v.push_back(run_experiment(scene_dataset(), cfg, budget.proto, variant));
      v.back().report.write(dir);
      std::fprintf(stderr, "  done in %.0f s: novel-view PSNR %.2f, novel-pose MSE %.5f, violation %.4f\n",
                   std::chrono::duration<double>(clk::now() - t0).count(), v.back().report.settings.at("novel_view").psnr,
                   v.back().report.settings.at("novel_pose").mse, v.back().violation_fraction);
    }
    return v;
  }

  double median_of(const std::string& variant, const std::function<double(const ExperimentResult&)>& f) {
    std::vector<double> xs;
    for (const auto& r : get(variant)) xs.push_back(f(r));
    return median(xs);
  }
};

double novel_view_psnr(const ExperimentResult& r) { return r.report.settings.at("novel_view").psnr; }
double novel_pose_mse(const ExperimentResult& r) { return r.report.settings.at("novel_pose").mse; }
double violation(const ExperimentResult& r) { return r.violation_fraction; }

Outcome end_to_end(TrainingRuns& runs) {
  const double psnr = runs.median_of("full", novel_view_psnr);
  const double viol = runs.median_of("full", violation);
  std::string per_seed;
  for (const auto& r : runs.get("full"))
    per_seed += fmt("%s%.2f/%.4f", per_seed.empty() ? "" : " ", novel_view_psnr(r), violation(r));
  return {psnr > 25 && viol < 0.05,
          fmt("%s, %ld it: median novel-view PSNR %.2f dB (>25), violation %.4f (<0.05); per seed %s",
              runs.budget.label.c_str(), runs.budget.cfg.iterations, psnr, viol, per_seed.c_str())};
}

Outcome ablation_direction(TrainingRuns& runs) {
  const double full = runs.median_of("full", novel_pose_mse);
  const double nc = runs.median_of("no_consis", novel_pose_mse);
  const double nf = runs.median_of("no_feat", novel_pose_mse);
  const double v_full = runs.median_of("full", violation);
  const double v_nc = runs.median_of("no_consis", violation);
  std::vector<ExperimentResult> rows;
  for (const auto* name : {"full", "no_consis", "no_feat"})
    for (const auto& r : runs.get(name)) {
      rows.push_back(r);
      rows.back().name = fmt("%s (seed %llu)", name, static_cast<unsigned long long>(r.config.seed));
    }
  std::ofstream(runs.out / "ablation.md") << ablation_table(rows);
  return {full <= nc && full <= nf && v_nc > v_full,
          fmt("median novel-pose MSE full %.5f, no_consis %.5f, no_feat %.5f; violation full %.4f, no_consis %.4f",
              full, nc, nf, v_full, v_nc)};
}

// ---------------------------------------------------------------------------

Outcome standalone_consistency(const fs::path& out) {
  Rng rng(108);
  const auto av = make_avatar(4);
  DeformationField<float> field(av.skeleton, DeformationConfig{}, rng);
  Pose pose = Pose::rest(av.bones());
  pose.rotations[1] = {0.3, 0.2, 0};
  pose.rotations[2] = {0, 0, -0.9};
  pose.rotations[3] = {0.5, 0, 0.8};
  const auto verts = posed_surface(av, pose, avatar_surface(av));
  ConsistencyRunOptions opt;
  opt.out_dir = out / "consistency";
  const auto cam = Camera::look_at({0, 0.9, 3.2}, {0, 0.9, 0}, {0, 1, 0}, 150, 128, 128);
  const auto run = optimize_consistency(field, verts, pose, cam, opt);
  bool monotone = run.violation_fraction.size() == 100;
  for (std::size_t i = 1; i < run.violation_fraction.size(); ++i)
    monotone = monotone && run.violation_fraction[i] <= run.violation_fraction[i - 1];
  bool images = !run.images.empty();
  for (const auto& p : run.images) images = images && fs::exists(p);
  return {monotone && images,
          fmt("violation %.4f -> %.4f over %zu iterations, %s; %zu images in %s", run.violation_fraction.front(),
              run.violation_fraction.back(), run.violation_fraction.size(), monotone ? "non-increasing" : "INCREASED",
              run.images.size(), opt.out_dir.string().c_str())};
}

Dataset turnaround() {
  MotionSpec m;
  m.kind = "turnaround";
  CameraSpec cams;
  cams.width = cams.height = 64;
  cams.focal = 75;
  cams.eval_azimuth_deg.clear();
  return generate_dataset(make_avatar(6), 20, m, cams, 3);
}

Outcome keyframe_selection() {
  const auto ds = turnaround();
  std::vector<std::size_t> pool(ds.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  const auto sel = select_keyframes(ds, pool);
  const std::set<std::size_t> front(sel.front.begin(), sel.front.end());
  const bool cross = front.count(sel.i) != front.count(sel.j);
  const auto surface = coverage_surface(ds.skeleton, ds.capsule_radius);
  std::vector<std::vector<std::uint8_t>> cov;
  for (const auto& f : ds.frames) cov.push_back(covered_samples(surface, ds.skeleton, f));
  std::size_t best_same = 0;
  for (std::size_t a = 0; a < ds.size(); ++a)
    for (std::size_t b = a + 1; b < ds.size(); ++b)
      if (front.count(a) == front.count(b)) best_same = std::max(best_same, union_count(cov[a], cov[b]));
  const bool oracle = sel.coverage == union_count(cov[sel.i], cov[sel.j]) && sel.coverage > best_same;
  const bool same = select_keyframes(turnaround(), pool).to_json() == sel.to_json();
  return {cross && oracle && same, fmt("pair (%zu, %zu) %s, coverage %zu vs best same-set %zu, %s", sel.i, sel.j,
                                       cross ? "cross-facing" : "same-facing", sel.coverage, best_same,
                                       same ? "deterministic" : "NOT deterministic")};
}

Outcome protocol_arithmetic() {
  const auto ds = generate_dataset(make_avatar(4), 380, MotionSpec{}, CameraSpec{}, 1, false);
  const auto split = split_frames(ds.size());
  std::vector<std::size_t> counts;
  for (std::size_t rate : {1, 5, 10, 20}) counts.push_back(subsample(iota_frames(ds.size()), rate).size());
  const bool ok = split.train.size() == 304 && split.held_out.size() == 76 &&
                  counts == std::vector<std::size_t>{380, 76, 38, 19};
  return {ok, fmt("split %zu/%zu, rates 1/5/10/20 -> %zu/%zu/%zu/%zu", split.train.size(), split.held_out.size(),
                  counts[0], counts[1], counts[2], counts[3])};
}

Outcome determinism(const fs::path& out) {
  CameraSpec cams;
  cams.width = cams.height = 32;
  cams.focal = 37.5;
  cams.eval_azimuth_deg = {90};
  const auto ds = generate_dataset(make_avatar(4), 10, MotionSpec{}, cams, 5, true, 4);
  TrainConfig c;
  c.batch_rays = 64;
  c.samples = 16;
  c.width = 16;
  c.layers = 3;
  c.frequencies = 4;
  c.feature_channels = 4;
  c.feature_base = 4;
  c.blend_hidden = 8;
  c.decoder_latent = 8;
  c.decoder_channels = 4;
  c.decoder_stages = 2;
  c.nonrigid_width = 16;
  c.nonrigid_warmup = 5;
  c.seed = 11;
  Trainer a(ds, c), b(ds, c);
  bool steps_equal = true;
  for (int i = 0; i < 10; ++i) {
    const auto ra = a.step(), rb = b.step();
    steps_equal = steps_equal && ra.total == rb.total && ra.frame == rb.frame;
  }
  bool params_equal = true;
  const auto pa = a.model().named_parameters(), pb = b.model().named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    params_equal = params_equal && pa[i].second.values() == pb[i].second.values();

  const auto path = out / "determinism.naf";
  fs::create_directories(out);
  a.save(path);
  const auto loaded = load_trained(path, ds.skeleton);
  auto render = [&](const Model<float>& m, const KeyframeSelection& sel) {
    const auto bank = KeyframeBank::from_dataset(ds, sel);
    auto scene = prepare_scene(m, &bank, nonrigid_enabled(c, 10));
    const auto& v = ds.eval_views.front();
    return render_image(m, scene, ds.frames[v.frame].pose, v.cam);
  };
  const bool pixels = render(a.model(), a.bank().selection).data == render(loaded.model, loaded.selection).data;
  return {steps_equal && params_equal && pixels,
          fmt("10 steps %s, parameters %s, reloaded render %s", steps_equal ? "identical" : "DIFFER",
              params_equal ? "identical" : "DIFFER", pixels ? "bit-identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Runs the acceptance criteria and prints one line per criterion."};
  std::vector<int> only;
  bool full = false;
  int seeds = 3;
  std::string out = "acceptance_out";
  app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 11));
  app.add_flag("--full", full, "Train criteria 6 and 7 at the 20k-iteration default configuration");
  app.add_option("--seeds", seeds, "Seeds per training variant")->check(CLI::Range(1, 20));
  app.add_option("--out", out, "Directory for images, reports and checkpoints");
  CLI11_PARSE(app, argc, argv);

  TrainingRuns runs{full ? full_budget() : desk_budget(), seeds, fs::path(out), {}};
  fs::create_directories(runs.out);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"deformation cycle equivalence", deformation_cycle},
      {"consistency-loss threshold", consistency_branches},
      {"backward-weight simplex", simplex_invariant},
      {"homogeneous-medium compositing", beer_lambert},
      {"end-to-end training", [&] { return end_to_end(runs); }},
      {"ablation direction", [&] { return ablation_direction(runs); }},
      {"standalone consistency optimisation", [&] { return standalone_consistency(runs.out); }},
      {"keyframe selection", keyframe_selection},
      {"protocol arithmetic", protocol_arithmetic},
      {"determinism and persistence", [&] { return determinism(runs.out); }},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto t0 = clk::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(clk::now() - t0).count();
    failed += !o.pass;
    std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
