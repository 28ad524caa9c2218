#pragma once

// Vertex cycle-error diagnostic: project observation-space vertices, colour
// the ones whose cycle error reaches the threshold red.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "naf/deformation/deformation_field.hpp"
#include "naf/geometry/camera.hpp"
#include "naf/io/image.hpp"
#include "naf/numcore/adam.hpp"

namespace naf {

struct VertexDiagnostic {
  Image image;
  double violation_fraction = 0;
  std::vector<double> distances;
  std::vector<std::uint8_t> violating;
  std::size_t drawn = 0;  // vertices in front of the camera
};

template <typename Real>
Tensor<Real> points_tensor(const std::vector<Vec3>& pts) {
  Buffer<Real> v(pts.size() * 3);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int d = 0; d < 3; ++d) v[i * 3 + d] = static_cast<Real>(pts[i][d]);
  return Tensor<Real>::from({pts.size(), 3}, std::move(v));
}

// Renders the vertices from pre-computed cycle distances.
inline VertexDiagnostic draw_vertex_diagnostic(const std::vector<Vec3>& vertices, const std::vector<double>& distances,
                                               double theta, const Camera& cam) {
  VertexDiagnostic out;
  out.image = Image(cam.width, cam.height, 3, 1.f);
  out.distances = distances;
  out.violating.resize(vertices.size());
  std::size_t bad = 0;
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    out.violating[i] = distances[i] >= theta;
    bad += out.violating[i];
  }
  out.violation_fraction = vertices.empty() ? 0.0 : static_cast<double>(bad) / vertices.size();
  // Neutral vertices first so red ones stay visible on top.
  for (int pass = 0; pass < 2; ++pass)
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      if (out.violating[i] != pass) continue;
      const Vec3 xc = cam.to_camera(vertices[i]);
      if (!(xc.z() > kMinCameraDepth)) continue;
      ++out.drawn;
      const auto uv = project_point(cam, vertices[i]);
      const int u = static_cast<int>(std::lround(uv.x())), v = static_cast<int>(std::lround(uv.y()));
      const float rgb[3] = {pass ? 1.f : 0.55f, pass ? 0.f : 0.55f, pass ? 0.f : 0.55f};
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = u + dx, y = v + dy;
          if (x < 0 || y < 0 || x >= cam.width || y >= cam.height) continue;
          for (int c = 0; c < 3; ++c) out.image.at(x, y, c) = rgb[c];
        }
    }
  return out;
}

template <typename Real>
VertexDiagnostic vertex_consistency_diagnostic(const DeformationField<Real>& field, const std::vector<Vec3>& vertices,
                                               const Pose& pose, const Camera& cam, bool nonrigid = false) {
  const auto ctx = make_pose_context(field.skeleton(), pose);
  const auto vol = field.volume();
  const auto cyc = field.consistency_loss(vol, ctx, points_tensor<Real>(vertices), nonrigid);
  std::vector<double> d(cyc.distances.begin(), cyc.distances.end());
  return draw_vertex_diagnostic(vertices, d, field.theta(), cam);
}

struct ConsistencyRunOptions {
  int iterations = 100;
  double lr = 5e-6;
  bool nonrigid = false;
  std::vector<int> snapshot_iterations{1, 50, 100};
  std::filesystem::path out_dir;  // PNG snapshots and metrics.jsonl when non-empty
};

struct ConsistencyRun {
  std::vector<double> violation_fraction;  // one entry per iteration, measured before its update
  std::vector<double> loss;
  std::vector<std::filesystem::path> images;
};

// Optimises only the cycle loss on a fixed vertex set.
template <typename Real>
ConsistencyRun optimize_consistency(DeformationField<Real>& field, const std::vector<Vec3>& vertices, const Pose& pose,
                                    const Camera& cam, const ConsistencyRunOptions& opt) {
  const auto ctx = make_pose_context(field.skeleton(), pose);
  const auto x = points_tensor<Real>(vertices);
  Adam<Real> adam({{"deformation", field.parameters(), opt.lr}});
  ConsistencyRun run;
  std::ofstream log;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    log.open(opt.out_dir / "metrics.jsonl");
  }
  for (int it = 1; it <= opt.iterations; ++it) {
    adam.zero_grad();
    const auto vol = field.volume();
    auto cyc = field.consistency_loss(vol, ctx, x, opt.nonrigid);
    std::vector<double> d(cyc.distances.begin(), cyc.distances.end());
    auto diag = draw_vertex_diagnostic(vertices, d, field.theta(), cam);
    run.violation_fraction.push_back(diag.violation_fraction);
    run.loss.push_back(cyc.loss.item());
    if (log.is_open())
      log << nlohmann::json{{"iteration", it}, {"loss", run.loss.back()}, {"violation_fraction", diag.violation_fraction}}
                 .dump()
          << '\n';
    if (!opt.out_dir.empty() &&
        std::find(opt.snapshot_iterations.begin(), opt.snapshot_iterations.end(), it) != opt.snapshot_iterations.end()) {
      run.images.push_back(opt.out_dir / ("consistency_iter" + std::to_string(it) + ".png"));
      write_png(run.images.back(), diag.image);
    }
    backward(cyc.loss);
    adam.step();
  }
  return run;
}

}  // namespace naf
