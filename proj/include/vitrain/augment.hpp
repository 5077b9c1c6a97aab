// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vitrain/errors.hpp"
#include "vitrain/image.hpp"
#include "vitrain/numerics/tensor.hpp"
#include "vitrain/rng.hpp"

namespace vitrain::augment {

enum class CropMode { kRandomResized, kSimpleRandom };

inline std::string to_string(CropMode mode) {
  return mode == CropMode::kRandomResized ? "rrc" : "src";
}

struct AugmentPolicy {
  double color_jitter_strength = 0.3;
  double hflip_prob = 0.5;
  int solarize_threshold = 128;  // 256 disables solarization
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  CropMode crop_mode = CropMode::kRandomResized;
  double mixup_alpha = 0.8;  // 0 disables
  double cutmix_alpha = 1.0;  // 0 disables
  std::size_t train_resolution = 224;

  void validate() const {
    if (!(color_jitter_strength >= 0.0 && color_jitter_strength < 1.0)) {
      throw ParameterError("AugmentPolicy: color_jitter_strength must be in [0, 1)");
    }
    if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ParameterError("AugmentPolicy: hflip_prob must be in [0, 1]");
    if (solarize_threshold < 0 || solarize_threshold > 256) {
      throw ParameterError("AugmentPolicy: solarize_threshold must be in [0, 256]");
    }
    if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max)) {
      throw ParameterError("AugmentPolicy: blur sigma range must satisfy 0 < min <= max");
    }
    if (!(mixup_alpha >= 0.0) || !(cutmix_alpha >= 0.0)) throw ParameterError("AugmentPolicy: alphas must be >= 0");
    if (train_resolution < 1) throw ParameterError("AugmentPolicy: train_resolution must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Pixel primitives
// ---------------------------------------------------------------------------

/// BT.601 luma, unrounded.
inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

inline ImageU8 grayscale(const ImageU8& img) {
  ImageU8 out = img;
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    const auto y = to_byte(luma(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]));
    out.pixels[i] = out.pixels[i + 1] = out.pixels[i + 2] = y;
  }
  return out;
}

/// p -> 255 - p for p >= threshold. threshold 256 leaves the image unchanged.
inline ImageU8 solarize(const ImageU8& img, int threshold) {
  ImageU8 out = img;
  for (auto& p : out.pixels) {
    if (static_cast<int>(p) >= threshold) p = static_cast<std::uint8_t>(255 - p);
  }
  return out;
}

inline ImageU8 hflip(const ImageU8& img) {
  ImageU8 out = img;
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
    }
  }
  return out;
}

/// Mirror index without repeating the edge sample: -1 -> 1, n -> n-2.
inline std::size_t reflect_index(std::int64_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::int64_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  if (i >= static_cast<std::int64_t>(n)) i = period - i;
  return static_cast<std::size_t>(i);
}

inline ImageU8 reflect_pad(const ImageU8& img, std::size_t pad) {
  ImageU8 out(img.width + 2 * pad, img.height + 2 * pad);
  const auto p = static_cast<std::int64_t>(pad);
  for (std::size_t y = 0; y < out.height; ++y) {
    const auto sy = reflect_index(static_cast<std::int64_t>(y) - p, img.height);
    for (std::size_t x = 0; x < out.width; ++x) {
      const auto sx = reflect_index(static_cast<std::int64_t>(x) - p, img.width);
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
    }
  }
  return out;
}

/// Normalized 1-D Gaussian taps for offsets -r..r, r = ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw ParameterError("gaussian_kernel: sigma must be > 0");
  const auto radius = static_cast<std::int64_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::int64_t k = -radius; k <= radius; ++k) {
    const double w = std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
    taps[static_cast<std::size_t>(k + radius)] = w;
    total += w;
  }
  for (auto& w : taps) w /= total;
  return taps;
}

/// Separable Gaussian blur with reflect borders; rounds once at the end.
inline ImageU8 gaussian_blur(const ImageU8& img, double sigma) {
  const auto taps = gaussian_kernel(sigma);
  const auto radius = static_cast<std::int64_t>(taps.size() / 2);
  const std::size_t w = img.width, h = img.height;
  std::vector<double> rows(w * h * 3, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (std::int64_t k = -radius; k <= radius; ++k) {
        const auto sx = reflect_index(static_cast<std::int64_t>(x) + k, w);
        const double tap = taps[static_cast<std::size_t>(k + radius)];
        for (std::size_t c = 0; c < 3; ++c) acc[c] += tap * img.at(sx, y, c);
      }
      for (std::size_t c = 0; c < 3; ++c) rows[(y * w + x) * 3 + c] = acc[c];
    }
  }
  ImageU8 out(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc[3] = {0.0, 0.0, 0.0};
      for (std::int64_t k = -radius; k <= radius; ++k) {
        const auto sy = reflect_index(static_cast<std::int64_t>(y) + k, h);
        const double tap = taps[static_cast<std::size_t>(k + radius)];
        for (std::size_t c = 0; c < 3; ++c) acc[c] += tap * rows[(sy * w + x) * 3 + c];
      }
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = to_byte(acc[c]);
    }
  }
  return out;
}

inline ImageU8 adjust_brightness(const ImageU8& img, double factor) {
  ImageU8 out = img;
  for (auto& p : out.pixels) p = to_byte(p * factor);
  return out;
}

/// Blends every channel toward the image's mean luma.
inline ImageU8 adjust_contrast(const ImageU8& img, double factor) {
  double mean = 0.0;
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    mean += luma(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]);
  }
  mean /= static_cast<double>(img.width * img.height);
  ImageU8 out = img;
  for (auto& p : out.pixels) p = to_byte(mean + factor * (p - mean));
  return out;
}

/// Blends every pixel toward its own luma.
inline ImageU8 adjust_saturation(const ImageU8& img, double factor) {
  ImageU8 out = img;
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    const double y = luma(img.pixels[i], img.pixels[i + 1], img.pixels[i + 2]);
    for (std::size_t c = 0; c < 3; ++c) out.pixels[i + c] = to_byte(y + factor * (img.pixels[i + c] - y));
  }
  return out;
}

struct JitterFactors {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;
};

/// Brightness, then contrast, then saturation.
inline ImageU8 color_jitter(const ImageU8& img, const JitterFactors& f) {
  return adjust_saturation(adjust_contrast(adjust_brightness(img, f.brightness), f.contrast), f.saturation);
}

inline JitterFactors sample_jitter(double strength, Rng& rng) {
  if (!(strength >= 0.0 && strength < 1.0)) throw ParameterError("color_jitter: strength must be in [0, 1)");
  JitterFactors f;
  f.brightness = rng.uniform(1.0 - strength, 1.0 + strength);
  f.contrast = rng.uniform(1.0 - strength, 1.0 + strength);
  f.saturation = rng.uniform(1.0 - strength, 1.0 + strength);
  return f;
}

inline ImageU8 color_jitter(const ImageU8& img, double strength, Rng& rng) {
  return color_jitter(img, sample_jitter(strength, rng));
}

// ---------------------------------------------------------------------------
// 3-Augment
// ---------------------------------------------------------------------------

enum class Branch { kGrayscale = 0, kSolarize = 1, kBlur = 2 };

inline const char* to_string(Branch b) {
  switch (b) {
    case Branch::kGrayscale: return "grayscale";
    case Branch::kSolarize: return "solarize";
    case Branch::kBlur: return "blur";
  }
  return "?";
}

struct AugmentOutcome {
  ImageU8 image;
  Branch branch = Branch::kGrayscale;
  bool flipped = false;
};

/// One of {grayscale, solarize, blur} chosen uniformly, then color jitter, then
/// a horizontal flip with probability policy.hflip_prob. `forced` pins the
/// branch (tests and previews).
inline AugmentOutcome three_augment_traced(const ImageU8& img, const AugmentPolicy& policy, Rng& rng,
                                           std::optional<Branch> forced = std::nullopt) {
  AugmentOutcome out;
  out.branch = forced ? *forced : static_cast<Branch>(rng.below(3));
  switch (out.branch) {
    case Branch::kGrayscale:
      out.image = grayscale(img);
      break;
    case Branch::kSolarize:
      out.image = solarize(img, policy.solarize_threshold);
      break;
    case Branch::kBlur:
      out.image = gaussian_blur(img, rng.uniform(policy.blur_sigma_min, policy.blur_sigma_max));
      break;
  }
  out.image = color_jitter(out.image, policy.color_jitter_strength, rng);
  out.flipped = rng.bernoulli(policy.hflip_prob);
  if (out.flipped) out.image = hflip(out.image);
  return out;
}

inline ImageU8 three_augment(const ImageU8& img, const AugmentPolicy& policy, Rng& rng) {
  return three_augment_traced(img, policy, rng).image;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Bilinear resize with half-pixel centers and edge clamping.
inline ImageU8 resize(const ImageU8& img, std::size_t out_w, std::size_t out_h) {
  if (out_w < 1 || out_h < 1) throw ParameterError("resize: output size must be >= 1");
  if (out_w == img.width && out_h == img.height) return img;
  struct Tap {
    std::size_t i0, i1;
    double f;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
      if (s < 0.0) s = 0.0;
      auto i0 = static_cast<std::size_t>(std::floor(s));
      if (i0 > in - 1) i0 = in - 1;
      const std::size_t i1 = std::min(i0 + 1, in - 1);
      t[o] = {i0, i1, s - static_cast<double>(i0)};
    }
    return t;
  };
  const auto tx = taps(img.width, out_w);
  const auto ty = taps(img.height, out_h);
  ImageU8 out(out_w, out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(tx[x].i0, ty[y].i0, c) * (1.0 - tx[x].f) + img.at(tx[x].i1, ty[y].i0, c) * tx[x].f;
        const double bot = img.at(tx[x].i0, ty[y].i1, c) * (1.0 - tx[x].f) + img.at(tx[x].i1, ty[y].i1, c) * tx[x].f;
        out.at(x, y, c) = to_byte(top * (1.0 - ty[y].f) + bot * ty[y].f);
      }
    }
  }
  return out;
}

struct CropBox {
  std::size_t x = 0, y = 0, width = 0, height = 0;
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

inline ImageU8 crop(const ImageU8& img, const CropBox& box) {
  if (box.width < 1 || box.height < 1 || box.x + box.width > img.width || box.y + box.height > img.height) {
    throw ParameterError("crop: box outside image bounds");
  }
  ImageU8 out(box.width, box.height);
  for (std::size_t y = 0; y < box.height; ++y) {
    const auto* src = &img.pixels[img.index(box.x, box.y + y)];
    std::copy_n(src, box.width * 3, &out.pixels[out.index(0, y)]);
  }
  return out;
}

struct RrcBounds {
  double scale_min = 0.08;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
  int attempts = 10;
};

inline std::size_t round_half_up(double v) { return static_cast<std::size_t>(std::floor(v + 0.5)); }

/// Samples the crop rectangle for random_resized_crop; always inside the image.
inline CropBox sample_rrc_box(std::size_t width, std::size_t height, Rng& rng, const RrcBounds& bounds = {}) {
  const double area = static_cast<double>(width * height);
  const double log_lo = std::log(bounds.ratio_min), log_hi = std::log(bounds.ratio_max);
  for (int attempt = 0; attempt < bounds.attempts; ++attempt) {
    const double target = area * rng.uniform(bounds.scale_min, bounds.scale_max);
    const double aspect = std::exp(rng.uniform(log_lo, log_hi));
    const auto w = round_half_up(std::sqrt(target * aspect));
    const auto h = round_half_up(std::sqrt(target / aspect));
    if (w >= 1 && h >= 1 && w <= width && h <= height) {
      const auto x = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(width - w)));
      const auto y = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(height - h)));
      return {x, y, w, h};
    }
  }
  // Center crop clamped to the allowed aspect-ratio range.
  const double in_ratio = static_cast<double>(width) / static_cast<double>(height);
  std::size_t w = width, h = height;
  if (in_ratio < bounds.ratio_min) {
    h = std::clamp<std::size_t>(round_half_up(static_cast<double>(w) / bounds.ratio_min), 1, height);
  } else if (in_ratio > bounds.ratio_max) {
    w = std::clamp<std::size_t>(round_half_up(static_cast<double>(h) * bounds.ratio_max), 1, width);
  }
  return {(width - w) / 2, (height - h) / 2, w, h};
}

inline ImageU8 random_resized_crop(const ImageU8& img, std::size_t out, Rng& rng, const RrcBounds& bounds = {}) {
  if (out < 1) throw ParameterError("random_resized_crop: out must be >= 1");
  return resize(crop(img, sample_rrc_box(img.width, img.height, rng, bounds)), out, out);
}

/// Sizes produced by simple_random_crop before the final crop.
struct SrcGeometry {
  std::size_t resized_width, resized_height;
  std::size_t padded_width, padded_height;
  std::size_t max_x, max_y;  // inclusive offset ranges start at 0
};

inline constexpr std::size_t kSrcPad = 4;

/// Size after resizing so the shorter side equals `out`.
inline std::pair<std::size_t, std::size_t> shorter_side_size(std::size_t w, std::size_t h, std::size_t out) {
  if (w <= h) return {out, round_half_up(static_cast<double>(h) * static_cast<double>(out) / static_cast<double>(w))};
  return {round_half_up(static_cast<double>(w) * static_cast<double>(out) / static_cast<double>(h)), out};
}

inline SrcGeometry src_geometry(std::size_t width, std::size_t height, std::size_t out) {
  const auto [rw, rh] = shorter_side_size(width, height, out);
  SrcGeometry g{rw, rh, rw + 2 * kSrcPad, rh + 2 * kSrcPad, 0, 0};
  g.max_x = g.padded_width - out;
  g.max_y = g.padded_height - out;
  return g;
}

/// Resize shorter side to `out`, reflect-pad 4 px, random out x out crop.
inline ImageU8 simple_random_crop(const ImageU8& img, std::size_t out, Rng& rng, CropBox* chosen = nullptr) {
  if (out < 1) throw ParameterError("simple_random_crop: out must be >= 1");
  const auto g = src_geometry(img.width, img.height, out);
  const auto padded = reflect_pad(resize(img, g.resized_width, g.resized_height), kSrcPad);
  const CropBox box{static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(g.max_x))),
                    static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(g.max_y))), out, out};
  if (chosen) *chosen = box;
  return crop(padded, box);
}

/// Resize shorter side to round(out / crop_ratio), then center-crop out x out.
inline ImageU8 eval_preprocess(const ImageU8& img, std::size_t out, double crop_ratio) {
  if (!(crop_ratio > 0.0 && crop_ratio <= 1.0)) throw ParameterError("eval_preprocess: crop_ratio must be in (0, 1]");
  if (out < 1) throw ParameterError("eval_preprocess: out must be >= 1");
  const auto side = round_half_up(static_cast<double>(out) / crop_ratio);
  const auto [rw, rh] = shorter_side_size(img.width, img.height, side);
  const auto resized = resize(img, rw, rh);
  if (rw == out && rh == out) return resized;
  return crop(resized, {(rw - out) / 2, (rh - out) / 2, out, out});
}

// ---------------------------------------------------------------------------
// Batch mixing
// ---------------------------------------------------------------------------

using BatchTensor = numerics::Tensor<float>;

struct MixResult {
  BatchTensor images;
  BatchTensor targets;
  double lambda = 1.0;  // weight of batch a in the targets
};

namespace detail {
inline void require_conformable(const BatchTensor& a, const BatchTensor& b, const BatchTensor& ya,
                                const BatchTensor& yb) {
  if (a.shape() != b.shape() || ya.shape() != yb.shape() || a.rank() < 1 || ya.rank() != 2 ||
      a.dim(0) != ya.dim(0)) {
    throw DimensionError("mix: batches and targets are not conformable");
  }
}

inline BatchTensor blend(const BatchTensor& a, const BatchTensor& b, double lambda) {
  std::vector<float> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(lambda * x[i] + (1.0 - lambda) * y[i]);
  }
  return BatchTensor::from(a.shape(), std::move(out));
}
}  // namespace detail

inline MixResult mixup_with_lambda(const BatchTensor& a, const BatchTensor& b, const BatchTensor& ya,
                                   const BatchTensor& yb, double lambda) {
  detail::require_conformable(a, b, ya, yb);
  return {detail::blend(a, b, lambda), detail::blend(ya, yb, lambda), lambda};
}

/// lambda ~ Beta(alpha, alpha); convex blend of images and targets.
inline MixResult mixup(const BatchTensor& a, const BatchTensor& b, const BatchTensor& ya, const BatchTensor& yb,
                       double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ParameterError("mixup: alpha must be > 0");
  return mixup_with_lambda(a, b, ya, yb, rng.beta(alpha, alpha));
}

/// Pasted region [x0, x1) x [y0, y1).
struct CutBox {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  std::size_t area() const { return (x1 - x0) * (y1 - y0); }
};

/// Box with side ratio sqrt(1 - lambda) around a uniform center, clipped.
inline CutBox sample_cut_box(std::size_t resolution, double lambda, Rng& rng) {
  const double ratio = std::sqrt(std::max(0.0, 1.0 - lambda));
  const auto cut = static_cast<std::int64_t>(static_cast<double>(resolution) * ratio);
  const auto r = static_cast<std::int64_t>(resolution);
  const auto cx = static_cast<std::int64_t>(rng.below(resolution));
  const auto cy = static_cast<std::int64_t>(rng.below(resolution));
  auto clip = [r](std::int64_t v) { return static_cast<std::size_t>(std::clamp<std::int64_t>(v, 0, r)); };
  return {clip(cx - cut / 2), clip(cy - cut / 2), clip(cx + cut / 2), clip(cy + cut / 2)};
}

/// Pastes `box` of b into a; lambda is recomputed from the pasted area.
inline MixResult cutmix_with_box(const BatchTensor& a, const BatchTensor& b, const BatchTensor& ya,
                                 const BatchTensor& yb, const CutBox& box) {
  detail::require_conformable(a, b, ya, yb);
  if (a.rank() != 4 || a.dim(2) != a.dim(3)) throw DimensionError("cutmix: images must be [B, C, R, R]");
  const std::size_t res = a.dim(2);
  if (box.x0 > box.x1 || box.y0 > box.y1 || box.x1 > res || box.y1 > res) {
    throw ParameterError("cutmix: box outside image");
  }
  std::vector<float> out(a.data().begin(), a.data().end());
  auto src = b.data();
  const std::size_t planes = a.dim(0) * a.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = box.y0; y < box.y1; ++y) {
      for (std::size_t x = box.x0; x < box.x1; ++x) {
        const std::size_t i = (p * res + y) * res + x;
        out[i] = src[i];
      }
    }
  }
  const double lambda = 1.0 - static_cast<double>(box.area()) / static_cast<double>(res * res);
  return {BatchTensor::from(a.shape(), std::move(out)), detail::blend(ya, yb, lambda), lambda};
}

inline MixResult cutmix(const BatchTensor& a, const BatchTensor& b, const BatchTensor& ya, const BatchTensor& yb,
                        double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ParameterError("cutmix: alpha must be > 0");
  if (a.rank() != 4) throw DimensionError("cutmix: images must be [B, C, R, R]");
  const double lambda = rng.beta(alpha, alpha);
  return cutmix_with_box(a, b, ya, yb, sample_cut_box(a.dim(2), lambda, rng));
}

enum class MixKind { kNone, kMixup, kCutmix };

/// Per-batch choice: 50/50 when both are enabled, otherwise whichever is.
inline MixKind mix_dispatch(const AugmentPolicy& policy, Rng& rng) {
  const bool mix = policy.mixup_alpha > 0.0, cut = policy.cutmix_alpha > 0.0;
  if (mix && cut) return rng.bernoulli(0.5) ? MixKind::kCutmix : MixKind::kMixup;
  if (cut) return MixKind::kCutmix;
  if (mix) return MixKind::kMixup;
  return MixKind::kNone;
}

}  // namespace vitrain::augment
