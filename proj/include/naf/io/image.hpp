#pragma once

// Float images in [0, 1], row-major, interleaved channels, and 8-bit PNG I/O.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace naf {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image {
  int width = 0, height = 0, channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c = 0) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
  bool same_size(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
  bool empty() const { return data.empty(); }
};

inline unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ImageIoError("write_png: only 1 or 3 channels supported");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw ImageIoError("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError("libpng initialisation failed");
  }
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * img.channels);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError("libpng error writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8, img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed header: no timestamps, so identical images give identical files.
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    for (std::size_t i = 0; i < row.size(); ++i) row[i] = to_byte(img.data[y * row.size() + i]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads an 8-bit PNG, converting to the requested channel count (1 or 3).
inline Image read_png(const std::filesystem::path& path, int channels = 3) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw ImageIoError("cannot open image: " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError("libpng initialisation failed");
  }
  Image img;
  std::vector<unsigned char> row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError("malformed PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_expand(png);
  const auto color = png_get_color_type(png, info);
  if (channels == 3 && (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)) png_set_gray_to_rgb(png);
  if (channels == 1 && (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE))
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int c = png_get_channels(png, info);
  if (c != channels) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError("unexpected channel count in " + path.string());
  }
  img = Image(w, h, c);
  row.resize(png_get_rowbytes(png, info));
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int i = 0; i < w * c; ++i) img.data[static_cast<std::size_t>(y) * w * c + i] = row[i] / 255.f;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// Rounds every value to the nearest 8-bit level, as a PNG round trip would.
inline void quantize8(Image& img) {
  for (auto& v : img.data) v = to_byte(v) / 255.f;
}

}  // namespace naf
