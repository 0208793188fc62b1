#pragma once

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "eraw/tensor.hpp"

namespace eraw {

/// Interleaved 8-bit image, channels 1 (gray) or 3 (RGB).
struct Image8 {
  int height = 0, width = 0, channels = 3;
  std::vector<std::uint8_t> data;

  Image8() = default;
  Image8(int h, int w, int c) : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, 0) {}

  std::uint8_t& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
};

inline void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: 1 or 3 channels expected");
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = img.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&pi, path.string().c_str(), 0, img.data.data(), 0, nullptr))
    throw std::runtime_error("cannot write " + path.string() + ": " + pi.message);
}

/// Reads any PNG, converting to RGB (channels 3) or gray (channels 1).
inline Image8 read_png(const std::filesystem::path& path, int channels = 3) {
  png_image pi{};
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.string().c_str()))
    throw std::runtime_error("cannot read " + path.string() + ": " + pi.message);
  pi.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 img(static_cast<int>(pi.height), static_cast<int>(pi.width), channels);
  if (!png_image_finish_read(&pi, nullptr, img.data.data(), 0, nullptr)) {
    png_image_free(&pi);
    throw std::runtime_error("corrupt image " + path.string() + ": " + pi.message);
  }
  return img;
}

/// Interleaved bytes -> C x H x W in [0,1].
template <class T = float>
Tensor<T> to_tensor(const Image8& img) {
  Tensor<T> t({img.channels, img.height, img.width});
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t.at(c, y, x) = T(img.at(y, x, c)) / T(255);
  return t;
}

/// C x H x W in [0,1] -> bytes, rounding to nearest.
template <class T>
Image8 to_image(const Tensor<T>& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) shape_fail("to_image: expected 1xHxW or 3xHxW, got ", shape_str(t.shape()));
  Image8 img(t.dim(1), t.dim(2), t.dim(0));
  for (int c = 0; c < t.dim(0); ++c)
    for (int y = 0; y < t.dim(1); ++y)
      for (int x = 0; x < t.dim(2); ++x) {
        const double v = std::clamp(static_cast<double>(t.at(c, y, x)), 0.0, 1.0);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

}  // namespace eraw
