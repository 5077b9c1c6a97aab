// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vitrain/errors.hpp"
#include "vitrain/numerics/ops.hpp"
#include "vitrain/rng.hpp"

namespace vitrain::model {

using numerics::Shape;
using numerics::Tensor;

struct ViTConfig {
  std::size_t patch_size = 16;
  std::size_t embed_dim = 768;
  std::size_t depth = 12;
  std::size_t num_heads = 12;
  double mlp_ratio = 4.0;
  std::size_t num_classes = 1000;
  double drop_path_rate = 0.0;
  bool layerscale = true;
  double layerscale_init = 1e-4;
  std::size_t image_size = 224;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t mlp_hidden() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(embed_dim) * mlp_ratio));
  }
  std::size_t head_dim() const { return embed_dim / num_heads; }

  void validate() const {
    if (patch_size == 0 || embed_dim == 0 || depth == 0 || num_heads == 0 || num_classes == 0) {
      throw ParameterError("ViTConfig: extents must be positive");
    }
    if (image_size == 0 || image_size % patch_size != 0) {
      throw ParameterError("ViTConfig: image_size " + std::to_string(image_size) +
                           " is not a positive multiple of patch_size " + std::to_string(patch_size));
    }
    if (embed_dim % num_heads != 0) throw ParameterError("ViTConfig: embed_dim must be divisible by num_heads");
    if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) {
      throw ParameterError("ViTConfig: drop_path_rate must be in [0, 1)");
    }
    if (!(mlp_ratio > 0.0)) throw ParameterError("ViTConfig: mlp_ratio must be positive");
  }

  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

struct NamedPreset {
  std::string_view name;
  std::size_t embed_dim, num_heads, depth, patch_size;
  // Stochastic-depth rates for ImageNet-1k (400 epochs) and ImageNet-21k (90 epochs).
  double drop_path_in1k, drop_path_in21k;
};

inline constexpr std::array<NamedPreset, 5> kPresets{{
    {"ViT-T", 192, 3, 12, 16, 0.0, 0.0},
    {"ViT-S", 384, 6, 12, 16, 0.0, 0.0},
    {"ViT-B", 768, 12, 12, 16, 0.1, 0.1},
    {"ViT-L", 1024, 16, 24, 16, 0.4, 0.3},
    {"ViT-H", 1280, 16, 32, 14, 0.5, 0.5},
}};

inline const NamedPreset& find_preset(std::string_view name) {
  for (const auto& p : kPresets) {
    if (p.name == name) return p;
  }
  throw ParameterError("unknown model preset '" + std::string(name) + "'");
}

inline ViTConfig preset_config(std::string_view name, std::size_t num_classes = 1000,
                               std::optional<std::size_t> image_size = std::nullopt) {
  const auto& p = find_preset(name);
  ViTConfig c;
  c.embed_dim = p.embed_dim;
  c.num_heads = p.num_heads;
  c.depth = p.depth;
  c.patch_size = p.patch_size;
  c.num_classes = num_classes;
  c.image_size = image_size.value_or(224);
  c.validate();
  return c;
}

template <std::floating_point T>
struct BlockParams {
  Tensor<T> norm1_weight, norm1_bias;
  Tensor<T> qkv_weight, qkv_bias;
  Tensor<T> proj_weight, proj_bias;
  Tensor<T> ls1;
  Tensor<T> norm2_weight, norm2_bias;
  Tensor<T> fc1_weight, fc1_bias;
  Tensor<T> fc2_weight, fc2_bias;
  Tensor<T> ls2;
};

/// A learnable tensor with its checkpoint name. Only matrices are decayed.
template <std::floating_point T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
  bool decay = false;
};

template <std::floating_point T>
struct ViTParams {
  ViTConfig config;
  Tensor<T> patch_weight, patch_bias;  // [3*p*p, D], [D]
  Tensor<T> cls_token;                 // [D]
  Tensor<T> pos_embed;                 // [1 + N, D]
  std::vector<BlockParams<T>> blocks;
  Tensor<T> norm_weight, norm_bias;
  Tensor<T> head_weight, head_bias;  // [D, K], [K]

  std::vector<NamedParam<T>> named_parameters() const {
    std::vector<NamedParam<T>> out;
    out.push_back({"patch_embed.weight", patch_weight, true});
    out.push_back({"patch_embed.bias", patch_bias, false});
    out.push_back({"cls_token", cls_token, false});
    out.push_back({"pos_embed", pos_embed, false});
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      const std::string p = "blocks." + std::to_string(i) + ".";
      out.push_back({p + "norm1.weight", b.norm1_weight, false});
      out.push_back({p + "norm1.bias", b.norm1_bias, false});
      out.push_back({p + "attn.qkv.weight", b.qkv_weight, true});
      out.push_back({p + "attn.qkv.bias", b.qkv_bias, false});
      out.push_back({p + "attn.proj.weight", b.proj_weight, true});
      out.push_back({p + "attn.proj.bias", b.proj_bias, false});
      if (b.ls1.defined()) out.push_back({p + "ls1", b.ls1, false});
      out.push_back({p + "norm2.weight", b.norm2_weight, false});
      out.push_back({p + "norm2.bias", b.norm2_bias, false});
      out.push_back({p + "mlp.fc1.weight", b.fc1_weight, true});
      out.push_back({p + "mlp.fc1.bias", b.fc1_bias, false});
      out.push_back({p + "mlp.fc2.weight", b.fc2_weight, true});
      out.push_back({p + "mlp.fc2.bias", b.fc2_bias, false});
      if (b.ls2.defined()) out.push_back({p + "ls2", b.ls2, false});
    }
    out.push_back({"norm.weight", norm_weight, false});
    out.push_back({"norm.bias", norm_bias, false});
    out.push_back({"head.weight", head_weight, true});
    out.push_back({"head.bias", head_bias, false});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : named_parameters()) n += p.tensor.numel();
    return n;
  }

  /// Deep copy with fresh leaves.
  ViTParams clone() const {
    ViTParams c = *this;
    auto src = named_parameters();
    auto dst = c.named_parameters_mut();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i].tensor.clone();
    return c;
  }

  std::vector<Tensor<T>*> named_parameters_mut() {
    std::vector<Tensor<T>*> out{&patch_weight, &patch_bias, &cls_token, &pos_embed};
    for (auto& b : blocks) {
      for (Tensor<T>* t : {&b.norm1_weight, &b.norm1_bias, &b.qkv_weight, &b.qkv_bias, &b.proj_weight,
                           &b.proj_bias, &b.ls1, &b.norm2_weight, &b.norm2_bias, &b.fc1_weight, &b.fc1_bias,
                           &b.fc2_weight, &b.fc2_bias, &b.ls2}) {
        if (t->defined()) out.push_back(t);
      }
    }
    for (Tensor<T>* t : {&norm_weight, &norm_bias, &head_weight, &head_bias}) out.push_back(t);
    return out;
  }
};

namespace detail {

template <std::floating_point T>
Tensor<T> leaf(Shape shape, std::vector<T> values) {
  auto t = Tensor<T>::from(std::move(shape), std::move(values));
  t.set_requires_grad();
  return t;
}

template <std::floating_point T>
Tensor<T> trunc_normal(Shape shape, Rng& rng, double std = 0.02) {
  std::vector<T> v(numerics::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.truncated_normal(std));
  return leaf<T>(std::move(shape), std::move(v));
}

template <std::floating_point T>
Tensor<T> constant(Shape shape, T value) {
  std::vector<T> v(numerics::shape_numel(shape), value);
  return leaf<T>(std::move(shape), std::move(v));
}

}  // namespace detail

/// Truncated-normal(0.02) weights, class token and positional embeddings; zero
/// biases; unit LayerNorm scales; LayerScale vectors at layerscale_init.
template <std::floating_point T>
ViTParams<T> init(const ViTConfig& config, Rng& rng) {
  config.validate();
  using detail::constant;
  using detail::trunc_normal;
  const std::size_t d = config.embed_dim, h = config.mlp_hidden(), p = config.patch_size;
  ViTParams<T> m;
  m.config = config;
  m.patch_weight = trunc_normal<T>({3 * p * p, d}, rng);
  m.patch_bias = constant<T>({d}, T(0));
  m.cls_token = trunc_normal<T>({d}, rng);
  m.pos_embed = trunc_normal<T>({config.num_tokens(), d}, rng);
  for (std::size_t i = 0; i < config.depth; ++i) {
    BlockParams<T> b;
    b.norm1_weight = constant<T>({d}, T(1));
    b.norm1_bias = constant<T>({d}, T(0));
    b.qkv_weight = trunc_normal<T>({d, 3 * d}, rng);
    b.qkv_bias = constant<T>({3 * d}, T(0));
    b.proj_weight = trunc_normal<T>({d, d}, rng);
    b.proj_bias = constant<T>({d}, T(0));
    b.norm2_weight = constant<T>({d}, T(1));
    b.norm2_bias = constant<T>({d}, T(0));
    b.fc1_weight = trunc_normal<T>({d, h}, rng);
    b.fc1_bias = constant<T>({h}, T(0));
    b.fc2_weight = trunc_normal<T>({h, d}, rng);
    b.fc2_bias = constant<T>({d}, T(0));
    if (config.layerscale) {
      b.ls1 = constant<T>({d}, static_cast<T>(config.layerscale_init));
      b.ls2 = constant<T>({d}, static_cast<T>(config.layerscale_init));
    }
    m.blocks.push_back(std::move(b));
  }
  m.norm_weight = constant<T>({d}, T(1));
  m.norm_bias = constant<T>({d}, T(0));
  m.head_weight = trunc_normal<T>({d, config.num_classes}, rng);
  m.head_bias = constant<T>({config.num_classes}, T(0));
  return m;
}

enum class Mode { kTrain, kEval };

inline constexpr double kLayerNormEps = 1e-6;

/// [B, 3, R, R] -> [B, (R/p)^2, 3*p*p], patch vectors ordered (channel, row, col).
template <std::floating_point T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch) {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != images.dim(3) || images.dim(2) % patch != 0) {
    throw DimensionError("patchify: expected [B, 3, R, R] with R divisible by " + std::to_string(patch) + ", got " +
                         numerics::shape_str(images.shape()));
  }
  const std::size_t b = images.dim(0), r = images.dim(2), g = r / patch, pp = patch * patch;
  std::vector<T> out(b * g * g * 3 * pp);
  auto src = images.data();
  std::size_t o = 0;
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t gy = 0; gy < g; ++gy) {
      for (std::size_t gx = 0; gx < g; ++gx) {
        for (std::size_t c = 0; c < 3; ++c) {
          for (std::size_t ky = 0; ky < patch; ++ky) {
            const std::size_t row = ((s * 3 + c) * r + gy * patch + ky) * r + gx * patch;
            for (std::size_t kx = 0; kx < patch; ++kx) out[o++] = src[row + kx];
          }
        }
      }
    }
  }
  return Tensor<T>::from({b, g * g, 3 * pp}, std::move(out));
}

/// Per-sample residual-branch factors: 0 when dropped, 1/(1-rate) when kept.
template <std::floating_point T>
std::vector<T> drop_path_factors(std::size_t batch, double rate, Rng& rng) {
  std::vector<T> f(batch);
  const T keep = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& v : f) v = rng.bernoulli(rate) ? T(0) : keep;
  return f;
}

/// Identity in eval mode or at rate 0; otherwise per-sample stochastic depth.
template <std::floating_point T>
Tensor<T> drop_path(const Tensor<T>& branch, double rate, Mode mode, Rng& rng) {
  if (mode == Mode::kEval || rate <= 0.0) return branch;
  const auto f = drop_path_factors<T>(branch.dim(0), rate, rng);
  return numerics::scale_samples<T>(branch, f);
}

template <std::floating_point T>
Tensor<T> attention_branch(const Tensor<T>& h, const BlockParams<T>& blk, std::size_t heads) {
  namespace nm = numerics;
  const std::size_t b = h.dim(0), n = h.dim(1), d = h.dim(2), dh = d / heads;
  auto qkv = nm::linear(h, blk.qkv_weight, blk.qkv_bias);
  qkv = nm::permute(nm::reshape(qkv, {b, n, 3, heads, dh}), {2, 0, 3, 1, 4});
  auto q = nm::reshape(nm::select(qkv, 0, 0), {b * heads, n, dh});
  auto k = nm::reshape(nm::select(qkv, 0, 1), {b * heads, n, dh});
  auto v = nm::reshape(nm::select(qkv, 0, 2), {b * heads, n, dh});
  auto scores = nm::scale(nm::matmul(q, nm::transpose_last2(k)), static_cast<T>(1.0 / std::sqrt(double(dh))));
  auto out = nm::matmul(nm::softmax(scores), v);
  out = nm::reshape(nm::permute(nm::reshape(out, {b, heads, n, dh}), {0, 2, 1, 3}), {b, n, d});
  return nm::linear(out, blk.proj_weight, blk.proj_bias);
}

template <std::floating_point T>
Tensor<T> mlp_branch(const Tensor<T>& h, const BlockParams<T>& blk) {
  namespace nm = numerics;
  return nm::linear(nm::gelu(nm::linear(h, blk.fc1_weight, blk.fc1_bias)), blk.fc2_weight, blk.fc2_bias);
}

template <std::floating_point T>
Tensor<T> block_forward(const Tensor<T>& x, const BlockParams<T>& blk, const ViTConfig& cfg, Mode mode, Rng& rng) {
  namespace nm = numerics;
  const T eps = static_cast<T>(kLayerNormEps);
  auto a = attention_branch(nm::layernorm(x, blk.norm1_weight, blk.norm1_bias, eps), blk, cfg.num_heads);
  if (blk.ls1.defined()) a = nm::mul_trailing(a, blk.ls1);
  auto y = nm::add(x, drop_path(a, cfg.drop_path_rate, mode, rng));
  auto m = mlp_branch(nm::layernorm(y, blk.norm2_weight, blk.norm2_bias, eps), blk);
  if (blk.ls2.defined()) m = nm::mul_trailing(m, blk.ls2);
  return nm::add(y, drop_path(m, cfg.drop_path_rate, mode, rng));
}

/// images [B, 3, R, R] (already standardized) -> logits [B, num_classes].
template <std::floating_point T>
Tensor<T> forward(const ViTParams<T>& params, const Tensor<T>& images, Mode mode, Rng& rng) {
  namespace nm = numerics;
  const auto& cfg = params.config;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != cfg.image_size || images.dim(3) != cfg.image_size) {
    throw DimensionError("forward: expected [B, 3, " + std::to_string(cfg.image_size) + ", " +
                         std::to_string(cfg.image_size) + "], got " + nm::shape_str(images.shape()));
  }
  const std::size_t b = images.dim(0), d = cfg.embed_dim, tokens = cfg.num_tokens();
  auto x = nm::linear(patchify(images, cfg.patch_size), params.patch_weight, params.patch_bias);
  x = nm::prepend_token(x, params.cls_token);
  // Positional embeddings are added as a rank-1 trailing vector over the flattened token grid.
  x = nm::reshape(nm::add_trailing(nm::reshape(x, {b, tokens * d}), nm::reshape(params.pos_embed, {tokens * d})),
                  {b, tokens, d});
  for (const auto& blk : params.blocks) x = block_forward(x, blk, cfg, mode, rng);
  x = nm::layernorm(x, params.norm_weight, params.norm_bias, static_cast<T>(kLayerNormEps));
  return nm::linear(nm::select(x, 1, 0), params.head_weight, params.head_bias);
}

// ---------------------------------------------------------------------------
// Positional-embedding resampling
// ---------------------------------------------------------------------------

namespace detail {

// Cubic convolution kernel with A = -0.75, half-pixel sampling, edge clamp.
struct CubicTaps {
  std::array<std::size_t, 4> index;
  std::array<double, 4> weight;
};

inline std::vector<CubicTaps> cubic_taps(std::size_t in, std::size_t out) {
  constexpr double a = -0.75;
  auto near = [](double x) { return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0; };
  auto far = [](double x) { return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a; };
  std::vector<CubicTaps> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const double base = std::floor(s);
    const double t = s - base;
    taps[o].weight = {far(t + 1.0), near(t), near(1.0 - t), far(2.0 - t)};
    for (int k = 0; k < 4; ++k) {
      const auto idx = static_cast<std::int64_t>(base) - 1 + k;
      taps[o].index[static_cast<std::size_t>(k)] =
          static_cast<std::size_t>(std::clamp<std::int64_t>(idx, 0, static_cast<std::int64_t>(in) - 1));
    }
  }
  return taps;
}

}  // namespace detail

/// Bicubic resampling of a [g*g, d] grid to [g2*g2, d].
inline std::vector<double> resample_grid(const std::vector<double>& grid, std::size_t g, std::size_t g2, std::size_t d) {
  const auto taps = detail::cubic_taps(g, g2);
  std::vector<double> rows(g * g2 * d, 0.0);  // [g][g2][d], resampled along x
  for (std::size_t y = 0; y < g; ++y)
    for (std::size_t x = 0; x < g2; ++x)
      for (int k = 0; k < 4; ++k) {
        const double w = taps[x].weight[static_cast<std::size_t>(k)];
        const std::size_t sx = taps[x].index[static_cast<std::size_t>(k)];
        for (std::size_t c = 0; c < d; ++c) rows[(y * g2 + x) * d + c] += w * grid[(y * g + sx) * d + c];
      }
  std::vector<double> out(g2 * g2 * d, 0.0);
  for (std::size_t y = 0; y < g2; ++y)
    for (int k = 0; k < 4; ++k) {
      const double w = taps[y].weight[static_cast<std::size_t>(k)];
      const std::size_t sy = taps[y].index[static_cast<std::size_t>(k)];
      for (std::size_t x = 0; x < g2; ++x)
        for (std::size_t c = 0; c < d; ++c) out[(y * g2 + x) * d + c] += w * rows[(sy * g2 + x) * d + c];
    }
  return out;
}

/// Copy of `params` for a new input resolution. The class-token row is kept;
/// the patch grid is resampled bicubically.
template <std::floating_point T>
ViTParams<T> interpolate_pos_embed(const ViTParams<T>& params, std::size_t new_size) {
  const auto& cfg = params.config;
  if (new_size == 0 || new_size % cfg.patch_size != 0) {
    throw ParameterError("interpolate_pos_embed: " + std::to_string(new_size) + " is not a multiple of patch size " +
                         std::to_string(cfg.patch_size));
  }
  ViTParams<T> out = params.clone();
  out.config.image_size = new_size;
  if (new_size == cfg.image_size) return out;
  const std::size_t d = cfg.embed_dim, g = cfg.grid(), g2 = new_size / cfg.patch_size;
  auto src = params.pos_embed.data();
  std::vector<double> grid(src.begin() + static_cast<std::ptrdiff_t>(d), src.end());
  const auto resampled = resample_grid(grid, g, g2, d);
  std::vector<T> values(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(d));
  for (double v : resampled) values.push_back(static_cast<T>(v));
  out.pos_embed = detail::leaf<T>({1 + g2 * g2, d}, std::move(values));
  return out;
}

// ---------------------------------------------------------------------------
// Shape oracles
// ---------------------------------------------------------------------------

/// Learnable scalars: patch projection, class token, positional embeddings,
/// blocks (LayerNorms, biased qkv/proj/MLP, LayerScale), final norm, head.
inline std::uint64_t count_params(const ViTConfig& c) {
  const std::uint64_t d = c.embed_dim, h = c.mlp_hidden(), p = c.patch_size, k = c.num_classes;
  const std::uint64_t patch = 3 * p * p * d + d;
  const std::uint64_t tokens = d + c.num_tokens() * d;
  const std::uint64_t block = 4 * d + (3 * d * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d) + (c.layerscale ? 2 * d : 0);
  return patch + tokens + c.depth * block + 2 * d + d * k + k;
}

/// Multiply-accumulate count of one forward pass (patch projection, qkv,
/// both attention products, projection, MLP, head). Reported as "FLOPs" in
/// the usual ViT tables.
inline std::uint64_t count_flops(const ViTConfig& c, std::size_t resolution) {
  if (resolution == 0 || resolution % c.patch_size != 0) {
    throw ParameterError("count_flops: resolution must be a multiple of the patch size");
  }
  const std::uint64_t d = c.embed_dim, h = c.mlp_hidden(), p = c.patch_size;
  const std::uint64_t patches = (resolution / p) * (resolution / p);
  const std::uint64_t n = patches + 1;
  const std::uint64_t patch = patches * 3 * p * p * d;
  const std::uint64_t block = n * d * 3 * d + 2 * n * n * d + n * d * d + 2 * n * d * h;
  return patch + c.depth * block + d * c.num_classes;
}

inline std::size_t token_count(std::size_t resolution, std::size_t patch) {
  if (patch == 0 || resolution % patch != 0) throw ParameterError("token_count: resolution not divisible by patch");
  return (resolution / patch) * (resolution / patch);
}

}  // namespace vitrain::model
