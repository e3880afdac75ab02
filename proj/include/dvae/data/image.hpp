#pragma once

// HWC float images in [-1, 1] and 8-bit RGB PNG files.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dvae/errors.hpp"

namespace dvae::data {

struct Image {
  int height = 0;
  int width = 0;
  Eigen::VectorXf pixels;  // HWC, 3 channels

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(Eigen::VectorXf::Zero(3 * h * w)) {}

  float& at(int y, int x, int c) { return pixels[(y * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return pixels[(y * width + x) * 3 + c]; }
  bool operator==(const Image& o) const {
    return height == o.height && width == o.width && pixels == o.pixels;
  }
};

inline std::uint8_t to_byte(float v) {
  const float s = std::round((std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(s);
}

inline float from_byte(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

// Round trip through 8 bits, as a written-then-read image would be.
inline Image quantize(const Image& im) {
  Image out = im;
  for (Eigen::Index i = 0; i < out.pixels.size(); ++i) out.pixels[i] = from_byte(to_byte(out.pixels[i]));
  return out;
}

inline void write_png(const std::filesystem::path& path, const Image& im) {
  std::vector<std::uint8_t> bytes(im.pixels.size());
  for (Eigen::Index i = 0; i < im.pixels.size(); ++i) bytes[i] = to_byte(im.pixels[i]);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(im.width);
  img.height = static_cast<png_uint_32>(im.height);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, bytes.data(), 0, nullptr)) {
    throw IoError("cannot write " + path.string() + ": " + img.message);
  }
}

inline Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw IoError("cannot read " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode " + path.string() + ": " + img.message);
  }
  Image out(static_cast<int>(img.height), static_cast<int>(img.width));
  for (std::size_t i = 0; i < bytes.size(); ++i) out.pixels[static_cast<Eigen::Index>(i)] = from_byte(bytes[i]);
  return out;
}

// Tiles equally sized images row by row with a 1-pixel dark gutter.
inline Image montage(const std::vector<Image>& tiles, int cols) {
  if (tiles.empty() || cols <= 0) throw DimensionError("montage needs tiles and a positive column count");
  const int h = tiles[0].height, w = tiles[0].width;
  const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
  Image out(rows * (h + 1) + 1, cols * (w + 1) + 1);
  out.pixels.setConstant(-1.0f);
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    if (tiles[t].height != h || tiles[t].width != w) throw DimensionError("montage tiles differ in size");
    const int oy = static_cast<int>(t) / cols * (h + 1) + 1, ox = static_cast<int>(t) % cols * (w + 1) + 1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c) out.at(oy + y, ox + x, c) = tiles[t].at(y, x, c);
  }
  return out;
}

}  // namespace dvae::data
