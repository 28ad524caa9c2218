#pragma once

// PSNR and SSIM on [0, 1] images.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "naf/geometry/camera.hpp"
#include "naf/geometry/skeleton.hpp"
#include "naf/io/image.hpp"

namespace naf {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kPsnrCap = 99.0;

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct PixelBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  int area() const { return empty() ? 0 : (x1 - x0) * (y1 - y0); }
};

namespace detail {

inline void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_size(b) || a.channels != b.channels)
    throw MetricsError(std::string(what) + ": image sizes differ (" + std::to_string(a.width) + "x" +
                       std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                       std::to_string(b.width) + "x" + std::to_string(b.height) + "x" + std::to_string(b.channels) +
                       ")");
}

}  // namespace detail

// Screen-space box of the posed skeleton's 3D box, padded by `pad` of its
// largest extent, clipped to the image.
inline PixelBox skeleton_crop(const Skeleton& skel, const Pose& pose, const Camera& cam, double pad = 0.1) {
  const Aabb box = posed_bounds(skel, pose, pad);
  double u0 = 1e300, v0 = 1e300, u1 = -1e300, v1 = -1e300;
  bool any = false;
  for (int c = 0; c < 8; ++c) {
    const Vec3 p((c & 1) ? box.hi.x() : box.lo.x(), (c & 2) ? box.hi.y() : box.lo.y(),
                 (c & 4) ? box.hi.z() : box.lo.z());
    if (!(cam.to_camera(p).z() > kMinCameraDepth)) {
      // A corner behind the camera makes the projection unbounded.
      return {0, 0, cam.width, cam.height};
    }
    const auto uv = project_point(cam, p);
    u0 = std::min(u0, uv.x());
    u1 = std::max(u1, uv.x());
    v0 = std::min(v0, uv.y());
    v1 = std::max(v1, uv.y());
    any = true;
  }
  if (!any) return {};
  PixelBox r;
  r.x0 = std::clamp(static_cast<int>(std::floor(u0)), 0, cam.width);
  r.y0 = std::clamp(static_cast<int>(std::floor(v0)), 0, cam.height);
  r.x1 = std::clamp(static_cast<int>(std::ceil(u1)) + 1, 0, cam.width);
  r.y1 = std::clamp(static_cast<int>(std::ceil(v1)) + 1, 0, cam.height);
  return r;
}

// Grows a box symmetrically to at least min_w x min_h, shifted to stay inside w x h.
inline PixelBox grow_box(PixelBox b, int min_w, int min_h, int w, int h) {
  auto grow = [](int& lo, int& hi, int want, int limit) {
    want = std::min(want, limit);
    const int missing = want - (hi - lo);
    if (missing <= 0) return;
    lo -= missing / 2;
    hi += missing - missing / 2;
    if (lo < 0) hi -= lo, lo = 0;
    if (hi > limit) lo -= hi - limit, hi = limit;
  };
  grow(b.x0, b.x1, min_w, w);
  grow(b.y0, b.y1, min_h, h);
  return b;
}

inline double mse(const Image& pred, const Image& gt, const std::optional<PixelBox>& crop = std::nullopt) {
  detail::require_same(pred, gt, "mse");
  const PixelBox b = crop.value_or(PixelBox{0, 0, gt.width, gt.height});
  if (b.empty()) throw MetricsError("metric crop is empty");
  double s = 0;
  for (int y = b.y0; y < b.y1; ++y)
    for (int x = b.x0; x < b.x1; ++x)
      for (int c = 0; c < gt.channels; ++c) {
        const double d = static_cast<double>(pred.at(x, y, c)) - gt.at(x, y, c);
        s += d * d;
      }
  return s / (static_cast<double>(b.area()) * gt.channels);
}

inline double psnr_from_mse(double m) { return m <= 0 ? kPsnrCap : std::min(kPsnrCap, -10.0 * std::log10(m)); }

inline double psnr(const Image& pred, const Image& gt, const std::optional<PixelBox>& crop = std::nullopt) {
  return psnr_from_mse(mse(pred, gt, crop));
}

// ITU-R 601 luma; single-channel images pass through.
inline std::vector<double> luma(const Image& img) {
  std::vector<double> out(img.pixels());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (img.channels == 1) {
      out[i] = img.data[i];
    } else {
      const float* p = &img.data[i * img.channels];
      out[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  }
  return out;
}

inline constexpr int kSsimWindow = 11;

inline std::array<double, kSsimWindow> ssim_kernel(double sigma = 1.5) {
  std::array<double, kSsimWindow> k{};
  double s = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    s += k[i] = std::exp(-d * d / (2 * sigma * sigma));
  }
  for (auto& v : k) v /= s;
  return k;
}

// Gaussian-windowed SSIM on luma, averaged over all fully-contained windows.
inline double ssim(const Image& pred, const Image& gt, const std::optional<PixelBox>& crop = std::nullopt) {
  detail::require_same(pred, gt, "ssim");
  const PixelBox b = crop.value_or(PixelBox{0, 0, gt.width, gt.height});
  if (b.empty()) throw MetricsError("metric crop is empty");
  const int w = b.x1 - b.x0, h = b.y1 - b.y0;
  if (w < kSsimWindow || h < kSsimWindow)
    throw MetricsError("ssim: region " + std::to_string(w) + "x" + std::to_string(h) + " is smaller than the " +
                       std::to_string(kSsimWindow) + "x" + std::to_string(kSsimWindow) + " window");
  const auto la = luma(pred), lb = luma(gt);
  const auto k = ssim_kernel();
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  // Separable filtering of x, y, x^2, y^2, xy: horizontal pass then vertical.
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::array<std::vector<double>, 5> hor;
  for (auto& v : hor) v.assign(static_cast<std::size_t>(ow) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      std::array<double, 5> acc{};
      for (int i = 0; i < kSsimWindow; ++i) {
        const std::size_t src = static_cast<std::size_t>(b.y0 + y) * gt.width + (b.x0 + x + i);
        const double a = la[src], g = lb[src];
        acc[0] += k[i] * a;
        acc[1] += k[i] * g;
        acc[2] += k[i] * a * a;
        acc[3] += k[i] * g * g;
        acc[4] += k[i] * a * g;
      }
      for (int c = 0; c < 5; ++c) hor[c][static_cast<std::size_t>(y) * ow + x] = acc[c];
    }
  double total = 0;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      std::array<double, 5> m{};
      for (int i = 0; i < kSsimWindow; ++i)
        for (int c = 0; c < 5; ++c) m[c] += k[i] * hor[c][static_cast<std::size_t>(y + i) * ow + x];
      const double va = m[2] - m[0] * m[0], vb = m[3] - m[1] * m[1], cov = m[4] - m[0] * m[1];
      total += ((2 * m[0] * m[1] + c1) * (2 * cov + c2)) / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
    }
  return total / (static_cast<double>(ow) * oh);
}

}  // namespace naf
