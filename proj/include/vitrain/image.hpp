// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vitrain/errors.hpp"

namespace vitrain {

/// 8-bit RGB raster, row-major, interleaved channels.
struct ImageU8 {
  static constexpr std::size_t kChannels = 3;

  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  ImageU8() = default;
  ImageU8(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(w * h * kChannels, fill) {
    validate();
  }
  ImageU8(std::size_t w, std::size_t h, std::vector<std::uint8_t> data)
      : width(w), height(h), pixels(std::move(data)) {
    validate();
  }

  void validate() const {
    if (width < 1 || height < 1) throw ParameterError("ImageU8: width and height must be >= 1");
    if (pixels.size() != width * height * kChannels) {
      throw ParameterError("ImageU8: pixel buffer has " + std::to_string(pixels.size()) +
                           " bytes, expected " + std::to_string(width * height * kChannels));
    }
  }

  std::size_t index(std::size_t x, std::size_t y, std::size_t c = 0) const {
    return (y * width + x) * kChannels + c;
  }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[index(x, y, c)]; }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[index(x, y, c)]; }

  friend bool operator==(const ImageU8&, const ImageU8&) = default;
};

/// Round half up and clamp into [0, 255].
inline std::uint8_t to_byte(double v) {
  const double r = std::floor(v + 0.5);
  if (r <= 0.0) return 0;
  if (r >= 255.0) return 255;
  return static_cast<std::uint8_t>(r);
}

}  // namespace vitrain
