// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <set>

#include "vitrain/augment.hpp"

using namespace vitrain;
using namespace vitrain::augment;

namespace {

ImageU8 random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  ImageU8 img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

ImageU8 solid(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  ImageU8 img(w, h);
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  }
  return img;
}

// Direct 2-D convolution with the outer-product kernel; independent of the
// two-pass implementation.
std::vector<double> direct_blur(const ImageU8& img, double sigma) {
  const auto radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> w1;
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    w1.push_back(std::exp(-(k * k) / (2.0 * sigma * sigma)));
    total += w1.back();
  }
  auto mirror = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
  };
  const int w = static_cast<int>(img.width), h = static_cast<int>(img.height);
  std::vector<double> out(img.pixels.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int dy = -radius; dy <= radius; ++dy) {
          for (int dx = -radius; dx <= radius; ++dx) {
            const double k = w1[dy + radius] * w1[dx + radius] / (total * total);
            acc += k * img.at(mirror(x + dx, w), mirror(y + dy, h), c);
          }
        }
        out[(y * w + x) * 3 + c] = acc;
      }
    }
  }
  return out;
}

double channel_mean(const ImageU8& img, std::size_t c) {
  double s = 0.0;
  for (std::size_t i = c; i < img.pixels.size(); i += 3) s += img.pixels[i];
  return s / static_cast<double>(img.width * img.height);
}

}  // namespace

TEST(Grayscale, Examples) {
  EXPECT_EQ(grayscale(solid(1, 1, 255, 255, 255)), solid(1, 1, 255, 255, 255));
  EXPECT_EQ(grayscale(solid(1, 1, 255, 0, 0)), solid(1, 1, 76, 76, 76));
  EXPECT_EQ(grayscale(solid(1, 1, 0, 0, 0)), solid(1, 1, 0, 0, 0));
}

TEST(Grayscale, ChannelsEqualOnRandomImage) {
  const auto g = grayscale(random_image(9, 7, 1));
  for (std::size_t i = 0; i < g.pixels.size(); i += 3) {
    EXPECT_EQ(g.pixels[i], g.pixels[i + 1]);
    EXPECT_EQ(g.pixels[i], g.pixels[i + 2]);
  }
}

TEST(Solarize, Examples) {
  EXPECT_EQ(solarize(solid(1, 1, 200, 100, 128), 128), solid(1, 1, 55, 100, 127));
  const auto img = random_image(5, 5, 2);
  EXPECT_EQ(solarize(img, 256), img);
}

TEST(GaussianBlur, ConstantImageUnchanged) {
  const auto img = solid(6, 5, 10, 130, 250);
  for (double sigma : {0.1, 0.7, 2.0}) EXPECT_EQ(gaussian_blur(img, sigma), img);
}

TEST(GaussianBlur, RejectsNonPositiveSigma) {
  EXPECT_THROW(gaussian_blur(solid(2, 2, 0, 0, 0), 0.0), ParameterError);
  EXPECT_THROW(gaussian_blur(solid(2, 2, 0, 0, 0), -1.0), ParameterError);
}

TEST(GaussianBlur, SeparableMatchesDirectConvolution) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = random_image(8, 8, 100 + seed);
    for (double sigma : {0.1, 0.5, 1.0, 1.7, 2.0}) {
      const auto fast = gaussian_blur(img, sigma);
      const auto slow = direct_blur(img, sigma);
      for (std::size_t i = 0; i < slow.size(); ++i) {
        EXPECT_LE(std::abs(static_cast<int>(fast.pixels[i]) - static_cast<int>(to_byte(slow[i]))), 1)
            << "seed " << seed << " sigma " << sigma;
      }
    }
  }
}

// Reflect borders do not conserve mass exactly, so on 8x8 images the mean is
// compared against the direct-convolution oracle; on 64x64 images the border
// share is small enough to compare against the input itself.
TEST(GaussianBlur, MeanPreservedWithinOneLevel) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto img = random_image(8, 8, 200 + seed);
    for (double sigma : {0.3, 1.0, 2.0}) {
      const auto out = gaussian_blur(img, sigma);
      const auto slow = direct_blur(img, sigma);
      for (std::size_t c = 0; c < 3; ++c) {
        double oracle = 0.0;
        for (std::size_t i = c; i < slow.size(); i += 3) oracle += slow[i];
        oracle /= 64.0;
        EXPECT_LE(std::abs(channel_mean(out, c) - oracle), 1.0) << "seed " << seed << " sigma " << sigma;
      }
    }
  }
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto img = random_image(64, 64, 300 + seed);
    for (double sigma : {0.3, 1.0, 2.0}) {
      const auto out = gaussian_blur(img, sigma);
      for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_LE(std::abs(channel_mean(out, c) - channel_mean(img, c)), 1.0) << "seed " << seed << " sigma " << sigma;
      }
    }
  }
}

TEST(ReflectPad, RampTable) {
  // 3x3 ramp, value = 10*y + x on every channel.
  ImageU8 img(3, 3);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(10 * y + x);
  const auto p = reflect_pad(img, 2);
  ASSERT_EQ(p.width, 7u);
  // Row y=-2..4 maps to 2,1,0,1,2,1,0 and likewise for columns.
  const std::array<int, 7> idx{2, 1, 0, 1, 2, 1, 0};
  for (std::size_t y = 0; y < 7; ++y)
    for (std::size_t x = 0; x < 7; ++x) EXPECT_EQ(p.at(x, y, 0), 10 * idx[y] + idx[x]) << x << "," << y;
}

TEST(ColorJitter, ZeroStrengthIsIdentity) {
  const auto img = random_image(7, 6, 3);
  Rng rng(4);
  EXPECT_EQ(color_jitter(img, 0.0, rng), img);
}

TEST(ColorJitter, BrightnessDoubling) {
  EXPECT_EQ(color_jitter(solid(2, 2, 100, 100, 100), JitterFactors{2.0, 1.0, 1.0}), solid(2, 2, 200, 200, 200));
}

TEST(ColorJitter, ContrastMatchesPerPixelFormula) {
  const auto img = random_image(6, 5, 5);
  for (double f : {0.7, 1.0, 1.3}) {
    double m = 0.0;
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x) m += 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
    m /= 30.0;
    const auto out = adjust_contrast(img, f);
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = std::clamp(std::floor(m + f * (img.at(x, y, c) - m) + 0.5), 0.0, 255.0);
          EXPECT_EQ(out.at(x, y, c), static_cast<std::uint8_t>(v));
        }
  }
}

TEST(ColorJitter, RejectsStrengthOutOfRange) {
  Rng rng(1);
  EXPECT_THROW(color_jitter(solid(1, 1, 1, 1, 1), 1.0, rng), ParameterError);
}

TEST(ThreeAugment, BranchFrequenciesWithinThreeSigma) {
  const auto img = random_image(2, 2, 6);
  AugmentPolicy policy;
  std::array<int, 3> counts{};
  const int n = 30000;
  for (int i = 0; i < n; ++i) {
    Rng rng(combine_seed(99, static_cast<std::uint64_t>(i)));
    ++counts[static_cast<int>(three_augment_traced(img, policy, rng).branch)];
  }
  const double p = 1.0 / 3.0, sigma = std::sqrt(p * (1 - p) / n);
  for (int c : counts) EXPECT_LE(std::abs(c / double(n) - p), 3 * sigma);
}

TEST(ThreeAugment, FixedSeedIsDeterministic) {
  const auto img = random_image(16, 12, 7);
  AugmentPolicy policy;
  Rng a(42), b(42);
  EXPECT_EQ(three_augment(img, policy, a), three_augment(img, policy, b));
}

TEST(ThreeAugment, CollapsesToGrayscale) {
  const auto img = random_image(9, 9, 8);
  AugmentPolicy policy;
  policy.color_jitter_strength = 0.0;
  policy.hflip_prob = 0.0;
  Rng rng(5);
  EXPECT_EQ(three_augment_traced(img, policy, rng, Branch::kGrayscale).image, grayscale(img));
}

// Rebuilds each candidate pipeline by hand and checks exactly one reproduces
// the output.
TEST(ThreeAugment, AppliesExactlyOnePrimitive) {
  const auto img = random_image(10, 10, 9);
  AugmentPolicy policy;
  std::array<int, 3> seen{};
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    Rng rng(seed);
    const auto outcome = three_augment_traced(img, policy, rng);
    int matches = 0;
    for (int c = 0; c < 3; ++c) {
      Rng r(seed);
      r.below(3);
      ImageU8 x;
      if (c == 0) x = grayscale(img);
      if (c == 1) x = solarize(img, policy.solarize_threshold);
      if (c == 2) x = gaussian_blur(img, r.uniform(policy.blur_sigma_min, policy.blur_sigma_max));
      x = color_jitter(x, sample_jitter(policy.color_jitter_strength, r));
      if (r.bernoulli(policy.hflip_prob)) x = hflip(x);
      if (x == outcome.image) {
        ++matches;
        EXPECT_EQ(c, static_cast<int>(outcome.branch));
      }
    }
    EXPECT_EQ(matches, 1) << "seed " << seed;
    ++seen[static_cast<int>(outcome.branch)];
  }
  for (int s : seen) EXPECT_GT(s, 0);
}

TEST(RandomResizedCrop, OutputSizeAndBoxBounds) {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    Rng rng(seed);
    const std::size_t w = 5 + seed % 60, h = 3 + (seed * 7) % 50;
    const auto box = sample_rrc_box(w, h, rng);
    EXPECT_GE(box.width, 1u);
    EXPECT_GE(box.height, 1u);
    EXPECT_LE(box.x + box.width, w);
    EXPECT_LE(box.y + box.height, h);
  }
  const auto img = random_image(40, 30, 10);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto out = random_resized_crop(img, 17, rng);
    EXPECT_EQ(out.width, 17u);
    EXPECT_EQ(out.height, 17u);
  }
}

TEST(RandomResizedCrop, FullAreaNativeRatioEqualsResize) {
  const auto img = random_image(40, 30, 11);
  RrcBounds bounds;
  bounds.scale_min = bounds.scale_max = 1.0;
  bounds.ratio_min = bounds.ratio_max = 40.0 / 30.0;
  Rng rng(12);
  EXPECT_EQ(random_resized_crop(img, 24, rng, bounds), resize(img, 24, 24));
}

TEST(RandomResizedCrop, FallbackIsCentered) {
  RrcBounds impossible;
  impossible.attempts = 0;
  Rng rng(1);
  const auto box = sample_rrc_box(100, 10, rng, impossible);
  EXPECT_EQ(box.height, 10u);
  EXPECT_EQ(box.width, 13u);
  EXPECT_EQ(box.x, (100u - 13u) / 2);
}

TEST(SimpleRandomCrop, GeometryFor640x480) {
  const auto g = src_geometry(640, 480, 224);
  EXPECT_EQ(g.resized_width, 299u);
  EXPECT_EQ(g.resized_height, 224u);
  EXPECT_EQ(g.padded_width, 307u);
  EXPECT_EQ(g.padded_height, 232u);
  EXPECT_EQ(g.max_x, 83u);
  EXPECT_EQ(g.max_y, 8u);
}

TEST(SimpleRandomCrop, SquareInputAndOffsetsCoverRange) {
  const auto g = src_geometry(32, 32, 32);
  EXPECT_EQ(g.padded_width, 40u);
  EXPECT_EQ(g.max_x, 8u);
  EXPECT_EQ(g.max_y, 8u);
  const auto img = random_image(32, 32, 13);
  const auto padded = reflect_pad(img, 4);
  std::set<std::size_t> xs, ys;
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    Rng rng(seed);
    CropBox box;
    const auto out = simple_random_crop(img, 32, rng, &box);
    EXPECT_EQ(out.width, 32u);
    EXPECT_EQ(out, crop(padded, box));
    xs.insert(box.x);
    ys.insert(box.y);
  }
  EXPECT_EQ(xs.size(), 9u);
  EXPECT_EQ(ys.size(), 9u);
}

TEST(EvalPreprocess, Examples) {
  const auto square = random_image(50, 50, 14);
  EXPECT_EQ(eval_preprocess(square, 32, 1.0), resize(square, 32, 32));
  EXPECT_EQ(eval_preprocess(square, 50, 1.0), square);
  EXPECT_EQ(round_half_up(224 / 0.875), 256u);
  const auto img = random_image(300, 256, 15);
  const auto out = eval_preprocess(img, 224, 0.875);
  EXPECT_EQ(out.width, 224u);
  // Shorter side already 256: no resize, offsets floor((dim - out) / 2).
  EXPECT_EQ(out, crop(img, {38, 16, 224, 224}));
  EXPECT_THROW(eval_preprocess(img, 224, 0.0), ParameterError);
  EXPECT_THROW(eval_preprocess(img, 224, 1.5), ParameterError);
}

namespace {

BatchTensor one_hot(const std::vector<std::size_t>& labels, std::size_t k) {
  std::vector<float> v(labels.size() * k, 0.0f);
  for (std::size_t i = 0; i < labels.size(); ++i) v[i * k + labels[i]] = 1.0f;
  return BatchTensor::from({labels.size(), k}, std::move(v));
}

BatchTensor random_batch(std::size_t b, std::size_t r, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(b * 3 * r * r);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-2, 2));
  return BatchTensor::from({b, 3, r, r}, std::move(v));
}

void expect_probability_rows(const BatchTensor& t) {
  const std::size_t k = t.dim(1);
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      EXPECT_GE(t.at(i * k + j), 0.0f);
      s += t.at(i * k + j);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

}  // namespace

TEST(Mixup, LambdaOneKeepsA) {
  auto a = random_batch(2, 4, 1), b = random_batch(2, 4, 2);
  auto ya = one_hot({0, 1}, 3), yb = one_hot({2, 2}, 3);
  const auto r = mixup_with_lambda(a, b, ya, yb, 1.0);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(r.images.at(i), a.at(i));
  for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_EQ(r.targets.at(i), ya.at(i));
}

TEST(Mixup, HalfLambdaSplitsTargets) {
  auto a = random_batch(1, 2, 1), b = random_batch(1, 2, 2);
  const auto r = mixup_with_lambda(a, b, one_hot({1}, 4), one_hot({3}, 4), 0.5);
  EXPECT_EQ(r.targets.at(1), 0.5f);
  EXPECT_EQ(r.targets.at(3), 0.5f);
  EXPECT_EQ(r.targets.at(0), 0.0f);
}

TEST(Mixup, TargetsStayProbabilityVectors) {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    auto r = mixup(random_batch(3, 2, 1), random_batch(3, 2, 2), one_hot({0, 1, 2}, 5), one_hot({4, 1, 3}, 5), 0.8, rng);
    EXPECT_GE(r.lambda, 0.0);
    EXPECT_LE(r.lambda, 1.0);
    expect_probability_rows(r.targets);
  }
}

TEST(Cutmix, EmptyAndFullBoxes) {
  auto a = random_batch(2, 6, 1), b = random_batch(2, 6, 2);
  auto ya = one_hot({0, 1}, 3), yb = one_hot({2, 0}, 3);
  const auto none = cutmix_with_box(a, b, ya, yb, {3, 3, 3, 3});
  EXPECT_EQ(none.lambda, 1.0);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(none.images.at(i), a.at(i));
  for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_EQ(none.targets.at(i), ya.at(i));
  const auto full = cutmix_with_box(a, b, ya, yb, {0, 0, 6, 6});
  EXPECT_EQ(full.lambda, 0.0);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(full.images.at(i), b.at(i));
  for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_EQ(full.targets.at(i), yb.at(i));
}

TEST(Cutmix, LambdaEqualsPixelCount) {
  const std::size_t res = 16;
  auto zeros = BatchTensor::zeros({1, 3, res, res});
  auto ones = BatchTensor::full({1, 3, res, res}, 1.0f);
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const auto r = cutmix(zeros, ones, one_hot({0}, 2), one_hot({1}, 2), 1.0, rng);
    std::size_t pasted = 0;
    for (std::size_t i = 0; i < res * res; ++i) pasted += r.images.at(i) == 1.0f;
    EXPECT_EQ(r.lambda, 1.0 - static_cast<double>(pasted) / static_cast<double>(res * res));
    expect_probability_rows(r.targets);
  }
}

TEST(Cutmix, RejectsNonSquare) {
  auto a = BatchTensor::zeros({1, 3, 4, 5});
  EXPECT_THROW(cutmix_with_box(a, a, one_hot({0}, 2), one_hot({0}, 2), {}), DimensionError);
}

TEST(MixDispatch, Rules) {
  AugmentPolicy p;
  Rng rng(1);
  p.mixup_alpha = 0.0;
  p.cutmix_alpha = 0.0;
  for (int i = 0; i < 100; ++i) EXPECT_EQ(mix_dispatch(p, rng), MixKind::kNone);
  p.cutmix_alpha = 1.0;
  for (int i = 0; i < 100; ++i) EXPECT_EQ(mix_dispatch(p, rng), MixKind::kCutmix);
  p.mixup_alpha = 0.8;
  // One generator per batch, as in the training loop.
  const int n = 10000;
  int cut = 0;
  for (int i = 0; i < n; ++i) {
    Rng batch_rng(combine_seed(7, static_cast<std::uint64_t>(i)));
    cut += mix_dispatch(p, batch_rng) == MixKind::kCutmix;
  }
  EXPECT_LE(std::abs(cut / double(n) - 0.5), 3 * std::sqrt(0.25 / n));
}

TEST(Rng, Splitmix64ReferenceValue) {
  Rng rng(0);
  EXPECT_EQ(rng.next_u64(), 0xe220a8397b1dcdafULL);
}

TEST(Policy, Validation) {
  AugmentPolicy p;
  EXPECT_NO_THROW(p.validate());
  p.hflip_prob = 1.5;
  EXPECT_THROW(p.validate(), ParameterError);
  p = {};
  p.mixup_alpha = -1;
  EXPECT_THROW(p.validate(), ParameterError);
}
