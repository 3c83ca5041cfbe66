#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "posekit/error.hpp"

namespace posekit {

// Planar RGB image with channel values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  static constexpr int kChannels = 3;
  std::vector<float> data;  // [channel][y][x]

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<size_t>(kChannels) * w * h, fill) {}

  size_t index(int c, int x, int y) const {
    return (static_cast<size_t>(c) * height + y) * width + x;
  }
  float& at(int c, int x, int y) { return data[index(c, x, y)]; }
  float at(int c, int x, int y) const { return data[index(c, x, y)]; }

  void set_rgb(int x, int y, const std::array<float, 3>& rgb) {
    for (int c = 0; c < kChannels; ++c) at(c, x, y) = rgb[c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Bilinear sample at continuous coordinates (pixel k spans [k, k+1)).
// Samples falling outside the image return `fill`.
inline float sample_bilinear(const Image& img, int c, double x, double y, float fill) {
  const double fx = x - 0.5, fy = y - 0.5;
  if (fx < -0.5 || fy < -0.5 || fx > img.width - 0.5 || fy > img.height - 0.5) return fill;
  const int x0 = static_cast<int>(std::floor(fx)), y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  auto px = [&](int xi, int yi) {
    xi = std::clamp(xi, 0, img.width - 1);
    yi = std::clamp(yi, 0, img.height - 1);
    return static_cast<double>(img.at(c, xi, yi));
  };
  const double v = (1 - ay) * ((1 - ax) * px(x0, y0) + ax * px(x0 + 1, y0)) +
                   ay * ((1 - ax) * px(x0, y0 + 1) + ax * px(x0 + 1, y0 + 1));
  return static_cast<float>(v);
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> rgb(static_cast<size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) rgb[(static_cast<size_t>(y) * img.width + x) * 3 + c] = to_byte(img.at(c, x, y));

  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw Error(ErrorCode::io, "cannot write PNG '" + path.string() + "': " + png.message);
  }
}

inline Image read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw Error(ErrorCode::io, "cannot read PNG '" + path.string() + "': " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, rgb.data(), 0, nullptr)) {
    throw Error(ErrorCode::io, "cannot decode PNG '" + path.string() + "': " + png.message);
  }
  Image img(static_cast<int>(png.width), static_cast<int>(png.height));
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, x, y) = rgb[(static_cast<size_t>(y) * img.width + x) * 3 + c] / 255.0f;
  return img;
}

}  // namespace posekit
