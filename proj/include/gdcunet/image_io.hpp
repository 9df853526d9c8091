// SPDX-License-Identifier: Apache-2.0
/**
 * @file   image_io.hpp
 * @brief  8-bit PNG round-trip, resizing and feature-map export.
 *
 * Images live in (1, H, W, C) double tensors with values in [0, 1] and
 * C = 1 (gray) or 3 (RGB). Quantization is round(v * 255) after clamping
 * to [0, 1], so 0.5 is stored as 128.
 */
#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gdcunet/losses.hpp"

namespace gdc {

class ImageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

using Image = Tensor<double>;

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

namespace detail {

inline void write_png(const std::string& path, std::size_t h, std::size_t w, int channels,
                      const std::vector<std::uint8_t>& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw ImageError("cannot write " + path + ": " + img.message);
}

inline std::vector<std::uint8_t> read_png(const std::string& path, int channels, std::size_t& h,
                                          std::size_t& w) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw ImageError("cannot read " + path + ": " + img.message);
  img.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ImageError("cannot decode " + path + ": " + img.message);
  }
  h = img.height;
  w = img.width;
  return bytes;
}

/// Number of color channels stored in the file (1 for gray, 3 otherwise).
inline int png_channels(const std::string& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw ImageError("cannot read " + path + ": " + img.message);
  const int c = (img.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  png_image_free(&img);
  return c;
}

}  // namespace detail

/// Writes a (1, H, W, C) image with C in {1, 3}.
inline void write_image(const Image& img, const std::string& path) {
  const Shape s = img.shape();
  if (s.b != 1 || (s.c != 1 && s.c != 3))
    throw UsageError("write_image: expected (1, H, W, 1|3), got " + s.str());
  std::vector<std::uint8_t> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) bytes[i] = quantize(img[i]);
  detail::write_png(path, s.h, s.w, static_cast<int>(s.c), bytes);
}

/// Reads a PNG converted to the requested channel count (1 or 3); 0 keeps
/// the file's own (gray stays gray, anything with color becomes RGB).
inline Image read_image(const std::string& path, int channels = 0) {
  if (channels == 0) channels = detail::png_channels(path);
  if (channels != 1 && channels != 3)
    throw UsageError("read_image: channels must be 1 or 3");
  std::size_t h = 0, w = 0;
  const auto bytes = detail::read_png(path, channels, h, w);
  Image img(Shape{1, h, w, static_cast<std::size_t>(channels)});
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = bytes[i] / 255.0;
  return img;
}

inline void write_mask(const BinaryMask& m, const std::string& path) {
  std::vector<std::uint8_t> bytes(m.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = m.data[i] ? 255 : 0;
  detail::write_png(path, m.height, m.width, 1, bytes);
}

/// Gray levels above 127 become foreground.
inline BinaryMask read_mask(const std::string& path) {
  std::size_t h = 0, w = 0;
  const auto bytes = detail::read_png(path, 1, h, w);
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) m.data[i] = bytes[i] > 127 ? 1 : 0;
  return m;
}

/// Bilinear resize with half-pixel centres and edge clamping.
inline Image resize_bilinear(const Image& img, std::size_t out_h, std::size_t out_w) {
  const Shape s = img.shape();
  if (s.h == out_h && s.w == out_w) return img;
  Image out(Shape{s.b, out_h, out_w, s.c});
  const double sy = double(s.h) / double(out_h), sx = double(s.w) / double(out_w);
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t y = 0; y < out_h; ++y) {
      const double fy = std::clamp((double(y) + 0.5) * sy - 0.5, 0.0, double(s.h - 1));
      const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, s.h - 1);
      const double wy = fy - double(y0);
      for (std::size_t x = 0; x < out_w; ++x) {
        const double fx = std::clamp((double(x) + 0.5) * sx - 0.5, 0.0, double(s.w - 1));
        const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, s.w - 1);
        const double wx = fx - double(x0);
        for (std::size_t c = 0; c < s.c; ++c)
          out(b, y, x, c) = (1 - wy) * ((1 - wx) * img(b, y0, x0, c) + wx * img(b, y0, x1, c)) +
                            wy * ((1 - wx) * img(b, y1, x0, c) + wx * img(b, y1, x1, c));
      }
    }
  return out;
}

/// Nearest-neighbour resize, which keeps masks binary.
inline BinaryMask resize_nearest(const BinaryMask& m, std::size_t out_h, std::size_t out_w) {
  if (m.height == out_h && m.width == out_w) return m;
  BinaryMask out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(m.height - 1, (2 * y + 1) * m.height / (2 * out_h));
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(m.width - 1, (2 * x + 1) * m.width / (2 * out_w));
      out(y, x) = m(sy, sx);
    }
  }
  return out;
}

/// Channel `c` of batch item `b` as a gray image scaled so its minimum maps
/// to 0 and its maximum to 1 (constant maps become all 0).
template <class T>
Image normalized_channel(const Tensor<T>& t, std::size_t c, std::size_t b = 0) {
  const Shape s = t.shape();
  Image out(Shape{1, s.h, s.w, 1});
  double lo = INFINITY, hi = -INFINITY;
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) {
      const double v = double(t(b, y, x, c));
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double span = hi - lo;
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      out(0, y, x, 0) = span > 0 ? (double(t(b, y, x, c)) - lo) / span : 0.0;
  return out;
}

}  // namespace gdc
