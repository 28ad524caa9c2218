#pragma once

// In-memory dataset and its directory layout:
//   meta.json            skeleton, cameras, poses, metadata
//   frames/%06d.png      training-camera images
//   masks/%06d.png       subject masks (0 / 255)
//   eval/%06d_c%02d.png  held-out camera images (optional)
//   eval_masks/...       and their masks

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "naf/io/image.hpp"
#include "naf/synthdata/sequence.hpp"

namespace naf {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class DatasetMissingFileError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class DatasetFormatError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};
class DatasetSizeMismatchError : public DatasetError {
 public:
  using DatasetError::DatasetError;
};

struct Frame {
  Camera camera;
  Pose pose;
  Image image;  // RGB
  Image mask;   // 1 channel, 0 or 1
};

struct EvalView {
  std::size_t frame = 0, camera = 0;
  Camera cam;
  Image image, mask;
};

struct Dataset {
  Skeleton skeleton;
  std::vector<Frame> frames;
  std::vector<EvalView> eval_views;
  double fps = 30;
  std::string units = "m";
  std::uint64_t seed = 0;
  std::string motion;
  std::string avatar;                 // preset name when synthetic
  std::vector<double> capsule_radius;  // per bone when synthetic; empty otherwise

  std::size_t size() const { return frames.size(); }
};

inline std::string frame_name(std::size_t i, const char* ext = ".png") {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu%s", i, ext);
  return buf;
}

inline std::string eval_name(std::size_t frame, std::size_t cam) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%06zu_c%02zu.png", frame, cam);
  return buf;
}

// Renders a full dataset from an avatar. Eval views cover every
// eval_stride-th frame from each held-out azimuth.
inline Dataset generate_dataset(const SyntheticAvatar& av, int n_frames, const MotionSpec& motion,
                                const CameraSpec& cams, std::uint64_t seed, bool render = true,
                                int eval_stride = 1) {
  Dataset ds;
  ds.skeleton = av.skeleton;
  ds.seed = seed;
  ds.motion = motion.kind;
  ds.avatar = av.name;
  ds.capsule_radius = av.radius;
  const auto poses = generate_motion(av.skeleton, n_frames, motion, seed);
  for (int t = 0; t < n_frames; ++t) {
    const double az = cams.azimuth_deg + cams.orbit_deg * t / std::max(1, n_frames - 1);
    Frame f{orbit_camera(cams, az), poses[t], {}, {}};
    if (render) {
      auto gt = render_ground_truth(av, f.pose, f.camera);
      quantize8(gt.image);
      f.image = std::move(gt.image);
      f.mask = std::move(gt.mask);
    }
    ds.frames.push_back(std::move(f));
    if (t % std::max(1, eval_stride) != 0) continue;
    for (std::size_t c = 0; c < cams.eval_azimuth_deg.size(); ++c) {
      EvalView v{static_cast<std::size_t>(t), c, orbit_camera(cams, az + cams.eval_azimuth_deg[c]), {}, {}};
      if (render) {
        auto gt = render_ground_truth(av, ds.frames.back().pose, v.cam);
        quantize8(gt.image);
        v.image = std::move(gt.image);
        v.mask = std::move(gt.mask);
      }
      ds.eval_views.push_back(std::move(v));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

inline Vec3 json_vec(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw DatasetFormatError("expected a 3-vector, got " + j.dump());
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json camera_json(const Camera& c) {
  nlohmann::json r = nlohmann::json::array();
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.push_back(c.R(i, k));
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"R", r},
          {"t", vec_json(c.t)}, {"width", c.width}, {"height", c.height}};
}

inline Camera json_camera(const nlohmann::json& j) {
  Camera c;
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  const auto& r = j.at("R");
  if (!r.is_array() || r.size() != 9) throw DatasetFormatError("camera R must have 9 entries");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) c.R(i, k) = r[3 * i + k].get<double>();
  c.t = json_vec(j.at("t"));
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  return c;
}

// Pose record: {"joints": [[x, y, z], ...], "root": [x, y, z]}.
inline nlohmann::json pose_json(const Pose& p) {
  nlohmann::json joints = nlohmann::json::array();
  for (const auto& w : p.rotations) joints.push_back(vec_json(w));
  return {{"joints", joints}, {"root", vec_json(p.root_translation)}};
}

inline Pose json_pose(const nlohmann::json& j) {
  Pose p;
  for (const auto& w : j.at("joints")) p.rotations.push_back(json_vec(w));
  p.root_translation = json_vec(j.at("root"));
  return p;
}

inline nlohmann::json skeleton_json(const Skeleton& s) {
  nlohmann::json joints = nlohmann::json::array();
  for (std::size_t i = 0; i < s.size(); ++i)
    joints.push_back({{"name", i < s.names.size() ? s.names[i] : ""},
                      {"parent", s.parents[i]},
                      {"offset", vec_json(s.offsets[i])},
                      {"tail", vec_json(s.tails[i])}});
  return joints;
}

inline Skeleton json_skeleton(const nlohmann::json& j) {
  Skeleton s;
  for (const auto& b : j) {
    s.names.push_back(b.value("name", ""));
    s.parents.push_back(b.at("parent").get<int>());
    s.offsets.push_back(json_vec(b.at("offset")));
    s.tails.push_back(json_vec(b.at("tail")));
  }
  try {
    s.validate();
  } catch (const SkeletonError& e) {
    throw DatasetFormatError(std::string("invalid skeleton: ") + e.what());
  }
  return s;
}

inline nlohmann::json dataset_meta(const Dataset& ds) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.frames.size(); ++i)
    frames.push_back({{"image", "frames/" + frame_name(i)},
                      {"mask", "masks/" + frame_name(i)},
                      {"camera", camera_json(ds.frames[i].camera)},
                      {"pose", pose_json(ds.frames[i].pose)}});
  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : ds.eval_views)
    views.push_back({{"frame", v.frame},
                     {"camera_index", v.camera},
                     {"image", "eval/" + eval_name(v.frame, v.camera)},
                     {"mask", "eval_masks/" + eval_name(v.frame, v.camera)},
                     {"camera", camera_json(v.cam)}});
  nlohmann::json meta{{"format", "naf-dataset"}, {"version", 1},       {"fps", ds.fps},
                      {"units", ds.units},       {"seed", ds.seed},    {"motion", ds.motion},
                      {"skeleton", skeleton_json(ds.skeleton)},         {"frames", frames},
                      {"eval_views", views}};
  if (!ds.avatar.empty()) meta["avatar"] = {{"name", ds.avatar}, {"capsule_radius", ds.capsule_radius}};
  return meta;
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  if (ds.frames.size() < 2) throw DatasetError("a dataset needs at least 2 frames");
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < ds.frames.size(); ++i) {
    write_png(dir / "frames" / frame_name(i), ds.frames[i].image);
    write_png(dir / "masks" / frame_name(i), ds.frames[i].mask);
  }
  for (const auto& v : ds.eval_views) {
    write_png(dir / "eval" / eval_name(v.frame, v.camera), v.image);
    write_png(dir / "eval_masks" / eval_name(v.frame, v.camera), v.mask);
  }
  std::ofstream out(dir / "meta.json");
  out << dataset_meta(ds).dump(1) << '\n';
  if (!out) throw DatasetError("failed writing " + (dir / "meta.json").string());
}

namespace detail {

inline Image load_dataset_image(const std::filesystem::path& dir, const std::string& rel, int channels,
                                const std::string& what) {
  const auto path = dir / rel;
  if (!std::filesystem::exists(path)) throw DatasetMissingFileError(what + ": missing file " + path.string());
  try {
    auto img = read_png(path, channels);
    if (channels == 1)
      for (auto& v : img.data) v = v >= 0.5f ? 1.f : 0.f;
    return img;
  } catch (const ImageIoError& e) {
    throw DatasetFormatError(what + ": " + e.what());
  }
}

}  // namespace detail

// Unknown keys are ignored. With load_images = false only metadata is read.
inline Dataset read_dataset(const std::filesystem::path& dir, bool load_images = true) {
  const auto meta_path = dir / "meta.json";
  if (!std::filesystem::exists(meta_path)) throw DatasetMissingFileError("missing file " + meta_path.string());
  nlohmann::json meta;
  try {
    std::ifstream in(meta_path);
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetFormatError("malformed JSON in " + meta_path.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.fps = meta.value("fps", 30.0);
    ds.units = meta.value("units", "m");
    ds.seed = meta.value("seed", std::uint64_t{0});
    ds.motion = meta.value("motion", "");
    ds.skeleton = json_skeleton(meta.at("skeleton"));
    if (meta.contains("avatar")) {
      ds.avatar = meta["avatar"].value("name", "");
      ds.capsule_radius = meta["avatar"].value("capsule_radius", std::vector<double>{});
    }
    const auto& frames = meta.at("frames");
    if (!frames.is_array() || frames.size() < 2) throw DatasetFormatError("dataset needs at least 2 frames");
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const auto& fj = frames[i];
      Frame f{json_camera(fj.at("camera")), json_pose(fj.at("pose")), {}, {}};
      check_pose(ds.skeleton, f.pose);
      if (load_images) {
        const std::string what = "frame " + std::to_string(i);
        f.image = detail::load_dataset_image(dir, fj.at("image").get<std::string>(), 3, what + " image");
        f.mask = detail::load_dataset_image(dir, fj.at("mask").get<std::string>(), 1, what + " mask");
        if (f.image.width != f.mask.width || f.image.height != f.mask.height)
          throw DatasetSizeMismatchError(what + ": image and mask sizes differ");
        if (f.image.width != f.camera.width || f.image.height != f.camera.height)
          throw DatasetSizeMismatchError(what + ": image size does not match its camera");
      }
      ds.frames.push_back(std::move(f));
    }
    for (const auto& vj : meta.value("eval_views", nlohmann::json::array())) {
      EvalView v{vj.at("frame").get<std::size_t>(), vj.at("camera_index").get<std::size_t>(),
                 json_camera(vj.at("camera")), {}, {}};
      if (v.frame >= ds.frames.size()) throw DatasetFormatError("eval view refers to a missing frame");
      if (load_images) {
        const std::string what = "eval view " + eval_name(v.frame, v.camera);
        v.image = detail::load_dataset_image(dir, vj.at("image").get<std::string>(), 3, what + " image");
        v.mask = detail::load_dataset_image(dir, vj.at("mask").get<std::string>(), 1, what + " mask");
        if (!(v.image.width == v.mask.width && v.image.height == v.mask.height))
          throw DatasetSizeMismatchError(what + ": image and mask sizes differ");
      }
      ds.eval_views.push_back(std::move(v));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetFormatError("malformed dataset metadata in " + meta_path.string() + ": " + e.what());
  } catch (const SkeletonError& e) {
    throw DatasetFormatError(std::string("inconsistent pose in metadata: ") + e.what());
  }
  return ds;
}

}  // namespace naf
