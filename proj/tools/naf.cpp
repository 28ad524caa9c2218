// Command-line front end: dataset generation, keyframes, training,
// rendering, animation, evaluation and ablations.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "naf/trainer/experiment.hpp"

using namespace naf;
namespace fs = std::filesystem;

namespace {

struct ConfigSources {
  std::string file;
  std::vector<std::string> sets;  // key=value
  std::map<std::string, std::string> flags;
};

// flag > file > default; prints every key with where it came from.
TrainConfig resolve_config(const ConfigSources& src, bool print) {
  TrainConfig cfg;
  std::map<std::string, std::string> origin;
  for (const auto& f : config_fields()) origin[f.key] = "default";
  if (!src.file.empty()) {
    for (const auto& [k, v] : read_config_file(src.file)) {
      set_config_value(cfg, k, v);
      origin[k] = "file";
    }
  }
  for (const auto& s : src.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    origin[s.substr(0, eq)] = "flag";
  }
  for (const auto& [k, v] : src.flags) {
    set_config_value(cfg, k, v);
    origin[k] = "flag";
  }
  cfg.validate();
  if (print) {
    std::printf("configuration (flag > file > default):\n");
    for (const auto& f : config_fields())
      std::printf("  %-26s = %-14s [%s]\n", f.key.c_str(), f.get(cfg).c_str(), origin[f.key].c_str());
  }
  return cfg;
}

void add_config_options(CLI::App* cmd, ConfigSources& src, std::map<std::string, std::string>& raw) {
  cmd->add_option("--config", src.file, "flat key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", src.sets, "override any config key (key=value), repeatable");
  for (const char* key : {"iterations", "batch_rays", "samples", "sample_rate", "lr_rest", "lr_deformation"}) {
    std::string flag = std::string("--") + key;
    for (auto& c : flag)
      if (c == '_') c = '-';
    cmd->add_option(flag, raw[key], config_field(key).help);
  }
  cmd->add_flag("--no-consis", "drop the consistency loss");
  cmd->add_flag("--no-feat", "replace keyframe features with zeros");
}

void collect_flags(CLI::App* cmd, ConfigSources& src, const std::map<std::string, std::string>& raw) {
  for (const auto& [k, v] : raw) {
    std::string flag = "--" + k;
    for (auto& c : flag)
      if (c == '_') c = '-';
    if (cmd->count(flag)) src.flags[k] = v;
  }
  if (cmd->count("--no-consis")) src.flags["no_consis"] = "true";
  if (cmd->count("--no-feat")) src.flags["no_feat"] = "true";
}

Dataset load_data(const std::string& dir) {
  if (dir.empty()) throw std::runtime_error("--data is required");
  return read_dataset(dir);
}

TrainedModel load_model(const std::string& path, const Dataset& ds) {
  if (!fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
  return load_trained(path, ds.skeleton);
}

SceneState<float> scene_for(const TrainedModel& tm, const Dataset& ds, KeyframeBank& bank) {
  if (!tm.config.no_feat) bank = KeyframeBank::from_dataset(ds, tm.selection);
  return prepare_scene(tm.model, tm.config.no_feat ? nullptr : &bank, nonrigid_enabled(tm.config, tm.iteration));
}

Camera orbit_like(const Camera& ref, double azimuth_deg) {
  CameraSpec spec;
  spec.width = ref.width;
  spec.height = ref.height;
  spec.focal = ref.fx;
  return orbit_camera(spec, azimuth_deg);
}

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Articulated neural avatar toolkit"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  std::string out;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "render a synthetic capsule-avatar dataset");
  int frames = 40, bones = 4, size = 128, eval_stride = 1;
  std::string motion = "swing";
  gen->add_option("--frames", frames, "number of frames")->check(CLI::Range(2, 100000));
  gen->add_option("--bones", bones, "avatar preset: 4, 6, 8 or 10 bones")->check(CLI::IsMember({4, 6, 8, 10}));
  gen->add_option("--size", size, "image width and height")->check(CLI::Range(8, 4096));
  gen->add_option("--motion", motion, "swing or turnaround")->check(CLI::IsMember({"swing", "turnaround"}));
  gen->add_option("--eval-stride", eval_stride, "held-out views on every N-th frame")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "random seed");
  gen->add_option("--out", out, "output directory")->required();

  // keyframes
  auto* kf = app.add_subcommand("keyframes", "select the keyframe pair and print the report");
  std::string data;
  std::size_t rate = 1;
  kf->add_option("--data", data, "dataset directory")->required();
  kf->add_option("--sample-rate", rate, "keep every N-th training frame")->check(CLI::PositiveNumber);
  kf->add_option("--seed", seed, "random seed (selection is deterministic)");
  kf->add_option("--out", out, "directory for keyframes.json");

  // train
  auto* train = app.add_subcommand("train", "optimise a model on a dataset");
  ConfigSources train_src;
  std::map<std::string, std::string> train_raw;
  add_config_options(train, train_src, train_raw);
  train->add_option("--data", data, "dataset directory");
  train->add_option("--seed", seed, "random seed");
  train->add_option("--out", out, "run directory")->required();

  // render
  auto* render = app.add_subcommand("render", "render one frame from a checkpoint");
  std::string ckpt;
  int frame = 0, camera = -1;
  std::optional<double> azimuth;
  render->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  render->add_option("--data", data, "dataset directory (skeleton, keyframes, poses)")->required();
  render->add_option("--frame", frame, "frame whose pose is rendered")->check(CLI::NonNegativeNumber);
  render->add_option("--camera", camera, "-1: the frame's camera; k: its k-th held-out camera");
  render->add_option("--azimuth", azimuth, "orbit camera at this azimuth (degrees) instead");
  render->add_option("--seed", seed, "random seed (rendering is deterministic)");
  render->add_option("--out", out, "output directory")->required();

  // animate
  auto* animate = app.add_subcommand("animate", "render a pose sequence file");
  std::string poses_path;
  double anim_az = 0;
  animate->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  animate->add_option("--data", data, "dataset directory")->required();
  animate->add_option("--poses", poses_path, "JSON array of {joints, root}")->required()->check(CLI::ExistingFile);
  animate->add_option("--azimuth", anim_az, "orbit camera azimuth (degrees)");
  animate->add_option("--seed", seed, "random seed (rendering is deterministic)");
  animate->add_option("--out", out, "output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "novel-view / novel-pose report");
  ProtocolConfig proto;
  bool no_bbox = false;
  ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  ev->add_option("--data", data, "dataset directory")->required();
  ev->add_option("--rate", proto.rate, "evaluate every N-th frame")->check(CLI::PositiveNumber);
  ev->add_option("--max-frames", proto.max_frames, "cap per setting (0: all)");
  ev->add_flag("--no-bbox", no_bbox, "score whole images instead of the skeleton box");
  ev->add_option("--seed", seed, "random seed (evaluation is deterministic)");
  ev->add_option("--out", out, "report directory")->required();

  // ablate
  auto* ab = app.add_subcommand("ablate", "train full / no_consis / no_feat and compare");
  ConfigSources ab_src;
  std::map<std::string, std::string> ab_raw;
  add_config_options(ab, ab_src, ab_raw);
  ab->add_option("--data", data, "dataset directory")->required();
  ab->add_option("--rate", proto.rate, "evaluate every N-th frame")->check(CLI::PositiveNumber);
  ab->add_option("--max-frames", proto.max_frames, "cap per setting (0: all)");
  ab->add_option("--seed", seed, "random seed");
  ab->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*gen) {
      CameraSpec cams;
      cams.width = cams.height = size;
      cams.focal = 150.0 * size / 128.0;
      MotionSpec m;
      m.kind = motion;
      const auto ds = generate_dataset(make_avatar(bones), frames, m, cams, seed, true, eval_stride);
      write_dataset(ds, out);
      std::printf("wrote %zu frames, %zu held-out views to %s\n", ds.size(), ds.eval_views.size(), out.c_str());
    } else if (*kf) {
      const auto ds = read_dataset(data);
      const auto sel = select_keyframes(ds, training_frames(ds.size(), rate));
      std::printf("front set: %zu frames, back set: %zu frames%s\n", sel.front.size(), sel.back.size(),
                  sel.fallback ? " (fallback: one set empty or degenerate)" : "");
      std::printf("selected pair: (%zu, %zu)  pose distance %.4f rad  coverage %zu samples\n", sel.i, sel.j,
                  sel.pose_distance, sel.coverage);
      for (const auto& c : sel.candidates)
        std::printf("  candidate (%zu, %zu)  distance %.4f  coverage %zu\n", c.i, c.j, c.pose_distance, c.coverage);
      if (!out.empty()) {
        fs::create_directories(out);
        std::ofstream(fs::path(out) / "keyframes.json") << sel.to_json().dump(2) << "\n";
      }
    } else if (*train) {
      collect_flags(train, train_src, train_raw);
      if (train->count("--data")) train_src.flags["data"] = data;
      if (train->count("--seed")) train_src.flags["seed"] = std::to_string(seed);
      train_src.flags["out"] = out;
      const auto cfg = resolve_config(train_src, true);
      const auto ds = load_data(cfg.data);
      Trainer tr(ds, cfg);
      std::printf("training on %zu frames, keyframes (%zu, %zu)\n", tr.frames().size(), tr.bank().selection.i,
                  tr.bank().selection.j);
      const long every = std::max(1L, cfg.iterations / 20);
      tr.train([&](const StepRecord& r) {
        if (r.iter % every == 0 || r.iter == 1)
          std::printf("iter %6ld  mse %.5f  consis %.5f  total %.5f  %.2fs/it\n", r.iter, r.mse, r.consis, r.total,
                      r.seconds);
      });
      std::printf("checkpoint: %s\n", (fs::path(out) / "checkpoint.naf").c_str());
    } else if (*render) {
      const auto ds = load_data(data);
      const auto tm = load_model(ckpt, ds);
      if (static_cast<std::size_t>(frame) >= ds.size()) throw std::runtime_error("frame out of range");
      KeyframeBank bank;
      auto scene = scene_for(tm, ds, bank);
      const auto& f = ds.frames[frame];
      Camera cam = f.camera;
      if (azimuth) {
        cam = orbit_like(f.camera, *azimuth);
      } else if (camera >= 0) {
        bool found = false;
        for (const auto& v : ds.eval_views)
          if (v.frame == static_cast<std::size_t>(frame) && v.camera == static_cast<std::size_t>(camera)) {
            cam = v.cam;
            found = true;
          }
        if (!found) throw std::runtime_error("frame " + std::to_string(frame) + " has no held-out camera " +
                                             std::to_string(camera));
      }
      const auto img = render_image(tm.model, scene, f.pose, cam);
      const auto path = fs::path(out) / ("render_" + frame_name(frame));
      write_png(path, img);
      std::printf("wrote %s\n", path.c_str());
    } else if (*animate) {
      const auto ds = load_data(data);
      const auto tm = load_model(ckpt, ds);
      std::ifstream in(poses_path);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("cannot parse pose file " + poses_path + ": " + e.what());
      }
      if (!j.is_array()) throw std::runtime_error("pose file must hold a JSON array of poses");
      KeyframeBank bank;
      auto scene = scene_for(tm, ds, bank);
      const auto cam = orbit_like(ds.frames.front().camera, anim_az);
      for (std::size_t i = 0; i < j.size(); ++i) {
        const Pose pose = json_pose(j[i]);
        check_pose(ds.skeleton, pose);
        write_png(fs::path(out) / frame_name(i), render_image(tm.model, scene, pose, cam));
      }
      std::printf("wrote %zu frames to %s\n", j.size(), out.c_str());
    } else if (*ev) {
      const auto ds = load_data(data);
      const auto tm = load_model(ckpt, ds);
      KeyframeBank bank;
      auto scene = scene_for(tm, ds, bank);
      proto.bbox = !no_bbox;
      const auto report = evaluate_model(tm.model, scene, ds, proto);
      report.write(out);
      std::printf("%s", report.to_csv().c_str());
    } else if (*ab) {
      collect_flags(ab, ab_src, ab_raw);
      ab_src.flags["data"] = data;
      if (ab->count("--seed")) ab_src.flags["seed"] = std::to_string(seed);
      const auto base = resolve_config(ab_src, true);
      const auto ds = load_data(base.data);
      std::vector<ExperimentResult> rows;
      for (auto [name, cfg] : ablation_variants(base)) {
        cfg.out = (fs::path(out) / name).string();
        std::printf("== %s\n", name.c_str());
        rows.push_back(run_experiment(ds, cfg, proto, name));
        rows.back().report.write(cfg.out);
        std::printf("   novel-pose MSE %s, violation %s, %.0fs\n", fmt("%.6f", rows.back().report.settings.at("novel_pose").mse).c_str(),
                    fmt("%.4f", rows.back().violation_fraction).c_str(), rows.back().train_seconds);
      }
      const auto table = ablation_table(rows);
      fs::create_directories(out);
      std::ofstream(fs::path(out) / "ablation.md") << table;
      std::printf("%s", table.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
