// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vitrain/augment.hpp"
#include "vitrain/checkpoint.hpp"
#include "vitrain/errors.hpp"
#include "vitrain/model.hpp"
#include "vitrain/optim.hpp"

namespace vitrain::recipe {

enum class LossKind { kBce, kCe };
enum class Regime { kIn1k, kIn21k };

/// Every knob of the training procedure, one key per field.
struct RecipeConfig {
  // Architecture. Zero extents take the value of the named model preset.
  std::string model = "ViT-B";
  std::size_t embed_dim = 0;
  std::size_t depth = 0;
  std::size_t num_heads = 0;
  std::size_t patch_size = 0;

  std::size_t batch_size = 2048;
  std::string optimizer = "lamb";
  double lr = 3e-3;
  std::string lr_decay = "cosine";
  double weight_decay = 0.02;
  std::size_t warmup_epochs = 5;
  double label_smoothing = 0.0;
  double dropout = 0.0;
  std::optional<double> drop_path;  // nullopt: per-model table value
  bool repeated_aug = true;
  double grad_clip = 1.0;  // 0 disables clipping
  bool hflip = true;
  augment::CropMode crop_mode = augment::CropMode::kRandomResized;
  bool three_augment = true;
  bool layerscale = true;
  double layerscale_init = 1e-4;
  double mixup_alpha = 0.8;  // 0 disables
  double cutmix_alpha = 1.0;  // 0 disables
  double erasing = 0.0;
  double color_jitter = 0.3;
  double test_crop_ratio = 1.0;
  LossKind loss = LossKind::kBce;
  std::size_t epochs = 400;
  std::size_t train_resolution = 224;
  std::size_t eval_resolution = 0;  // 0: same as train_resolution
  std::uint64_t seed = 0;

  Regime regime = Regime::kIn1k;  // selects the drop-path table column
  double min_lr = 1e-6;
  double warmup_start_lr = 1e-6;
  std::size_t val_every = 1;  // epochs between validation passes; 0 disables
  std::size_t dataset_size = 1'281'167;  // schedule length when no data is given

  std::size_t resolved_eval_resolution() const { return eval_resolution ? eval_resolution : train_resolution; }

  void validate() const;
  /// Pairings that are legal but never used together by a preset.
  std::vector<std::string> coupling_violations() const;
};

// ---------------------------------------------------------------------------
// Key table
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v) { return checkpoint::format_double(v); }

template <typename U>
U parse_uint(std::string_view key, std::string_view s) {
  U v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw ParameterError("config key '" + std::string(key) + "': expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

inline double parse_real(std::string_view key, std::string_view s) {
  const auto v = checkpoint::parse_double(std::string(s));
  if (!v) throw ParameterError("config key '" + std::string(key) + "': expected a number, got '" + std::string(s) + "'");
  return *v;
}

inline bool parse_bool(std::string_view key, std::string_view s) {
  if (s == "true" || s == "on" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "off" || s == "0" || s == "no") return false;
  throw ParameterError("config key '" + std::string(key) + "': expected a boolean, got '" + std::string(s) + "'");
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

struct Field {
  const char* key;
  std::function<std::string(const RecipeConfig&)> get;
  std::function<void(RecipeConfig&, std::string_view)> set;
};

#define VITRAIN_UINT(name)                                                                   \
  Field {                                                                                    \
    #name, [](const RecipeConfig& c) { return std::to_string(c.name); },                     \
        [](RecipeConfig& c, std::string_view v) { c.name = parse_uint<decltype(c.name)>(#name, v); } \
  }
#define VITRAIN_REAL(name)                                                        \
  Field {                                                                         \
    #name, [](const RecipeConfig& c) { return fmt(c.name); },                     \
        [](RecipeConfig& c, std::string_view v) { c.name = parse_real(#name, v); } \
  }
#define VITRAIN_BOOL(name)                                                        \
  Field {                                                                         \
    #name, [](const RecipeConfig& c) { return std::string(c.name ? "true" : "false"); }, \
        [](RecipeConfig& c, std::string_view v) { c.name = parse_bool(#name, v); } \
  }
#define VITRAIN_TEXT(name)                                                      \
  Field {                                                                       \
    #name, [](const RecipeConfig& c) { return c.name; },                        \
        [](RecipeConfig& c, std::string_view v) { c.name = std::string(v); }    \
  }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      VITRAIN_TEXT(model),
      VITRAIN_UINT(embed_dim),
      VITRAIN_UINT(depth),
      VITRAIN_UINT(num_heads),
      VITRAIN_UINT(patch_size),
      VITRAIN_UINT(batch_size),
      VITRAIN_TEXT(optimizer),
      VITRAIN_REAL(lr),
      VITRAIN_TEXT(lr_decay),
      VITRAIN_REAL(weight_decay),
      VITRAIN_UINT(warmup_epochs),
      VITRAIN_REAL(label_smoothing),
      VITRAIN_REAL(dropout),
      Field{"drop_path", [](const RecipeConfig& c) { return c.drop_path ? fmt(*c.drop_path) : std::string("auto"); },
            [](RecipeConfig& c, std::string_view v) {
              if (v == "auto") c.drop_path.reset();
              else c.drop_path = parse_real("drop_path", v);
            }},
      VITRAIN_BOOL(repeated_aug),
      VITRAIN_REAL(grad_clip),
      VITRAIN_BOOL(hflip),
      Field{"crop_mode",
            [](const RecipeConfig& c) {
              return std::string(c.crop_mode == augment::CropMode::kRandomResized ? "rrc" : "src");
            },
            [](RecipeConfig& c, std::string_view v) {
              if (v == "rrc") c.crop_mode = augment::CropMode::kRandomResized;
              else if (v == "src") c.crop_mode = augment::CropMode::kSimpleRandom;
              else throw ParameterError("config key 'crop_mode': expected rrc or src, got '" + std::string(v) + "'");
            }},
      VITRAIN_BOOL(three_augment),
      VITRAIN_BOOL(layerscale),
      VITRAIN_REAL(layerscale_init),
      VITRAIN_REAL(mixup_alpha),
      VITRAIN_REAL(cutmix_alpha),
      VITRAIN_REAL(erasing),
      VITRAIN_REAL(color_jitter),
      VITRAIN_REAL(test_crop_ratio),
      Field{"loss", [](const RecipeConfig& c) { return std::string(c.loss == LossKind::kBce ? "bce" : "ce"); },
            [](RecipeConfig& c, std::string_view v) {
              if (v == "bce") c.loss = LossKind::kBce;
              else if (v == "ce") c.loss = LossKind::kCe;
              else throw ParameterError("config key 'loss': expected bce or ce, got '" + std::string(v) + "'");
            }},
      VITRAIN_UINT(epochs),
      VITRAIN_UINT(train_resolution),
      VITRAIN_UINT(eval_resolution),
      VITRAIN_UINT(seed),
      Field{"regime", [](const RecipeConfig& c) { return std::string(c.regime == Regime::kIn1k ? "in1k" : "in21k"); },
            [](RecipeConfig& c, std::string_view v) {
              if (v == "in1k") c.regime = Regime::kIn1k;
              else if (v == "in21k") c.regime = Regime::kIn21k;
              else throw ParameterError("config key 'regime': expected in1k or in21k, got '" + std::string(v) + "'");
            }},
      VITRAIN_REAL(min_lr),
      VITRAIN_REAL(warmup_start_lr),
      VITRAIN_UINT(val_every),
      VITRAIN_UINT(dataset_size),
  };
  return table;
}

#undef VITRAIN_UINT
#undef VITRAIN_REAL
#undef VITRAIN_BOOL
#undef VITRAIN_TEXT

}  // namespace detail

inline std::vector<std::string> keys() {
  std::vector<std::string> out;
  for (const auto& f : detail::fields()) out.emplace_back(f.key);
  return out;
}

inline std::string get(const RecipeConfig& c, std::string_view key) {
  for (const auto& f : detail::fields())
    if (key == f.key) return f.get(c);
  throw ParameterError("unknown config key '" + std::string(key) + "'");
}

inline void set(RecipeConfig& c, std::string_view key, std::string_view value) {
  for (const auto& f : detail::fields()) {
    if (key == f.key) {
      f.set(c, value);
      return;
    }
  }
  throw ParameterError("unknown config key '" + std::string(key) + "'");
}

/// "key=value" with optional surrounding blanks.
inline void apply_override(RecipeConfig& c, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ParameterError("override '" + std::string(assignment) + "' is not key=value");
  set(c, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

/// Flat "key = value" lines; '#' starts a comment.
inline void apply_text(RecipeConfig& c, std::string_view text, const std::string& origin = "config") {
  std::istringstream in{std::string(text)};
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = detail::trim(s);
    if (s.empty()) continue;
    try {
      apply_override(c, s);
    } catch (const ParameterError& e) {
      throw ParameterError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_file(RecipeConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_text(c, ss.str(), path.string());
}

/// One "key = value" line per field, in table order.
inline std::string to_text(const RecipeConfig& c) {
  std::string out;
  for (const auto& f : detail::fields()) out += std::string(f.key) + " = " + f.get(c) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"in1k", "in21k_pretrain", "in21k_finetune", "fixres_finetune"};
  return names;
}

inline RecipeConfig preset(std::string_view name) {
  RecipeConfig c;  // defaults are the ImageNet-1k column
  if (name == "in1k") return c;
  if (name == "in21k_pretrain" || name == "in21k_finetune") {
    c.crop_mode = augment::CropMode::kSimpleRandom;
    c.repeated_aug = false;
    c.mixup_alpha = 0.0;
    c.label_smoothing = 0.1;
    c.loss = LossKind::kCe;
    c.epochs = 90;
    c.regime = Regime::kIn21k;
    if (name == "in21k_finetune") {
      c.lr = 3e-4;
      c.epochs = 50;
    }
    return c;
  }
  if (name == "fixres_finetune") {
    c.lr = 1e-5;
    c.batch_size = 512;
    c.epochs = 20;
    c.weight_decay = 0.1;
    c.repeated_aug = false;
    c.warmup_epochs = 0;
    return c;
  }
  throw ParameterError("unknown preset '" + std::string(name) + "'");
}

inline void RecipeConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ParameterError("config: " + msg); };
  if (optimizer != "lamb") fail("optimizer must be 'lamb'");
  if (lr_decay != "cosine") fail("lr_decay must be 'cosine'");
  if (dropout != 0.0) fail("dropout is not supported (must be 0)");
  if (erasing != 0.0) fail("random erasing is not supported (must be 0)");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (!(lr > 0.0)) fail("lr must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) fail("label_smoothing must be in [0, 1)");
  if (drop_path && !(*drop_path >= 0.0 && *drop_path < 1.0)) fail("drop_path must be in [0, 1)");
  if (!(grad_clip >= 0.0)) fail("grad_clip must be >= 0");
  if (!(layerscale_init > 0.0)) fail("layerscale_init must be > 0");
  if (!(mixup_alpha >= 0.0 && cutmix_alpha >= 0.0)) fail("mixup_alpha and cutmix_alpha must be >= 0");
  if (!(color_jitter >= 0.0 && color_jitter < 1.0)) fail("color_jitter must be in [0, 1)");
  if (!(test_crop_ratio > 0.0 && test_crop_ratio <= 1.0)) fail("test_crop_ratio must be in (0, 1]");
  if (epochs == 0) fail("epochs must be >= 1");
  if (warmup_epochs >= epochs) fail("warmup_epochs must be < epochs");
  if (train_resolution == 0) fail("train_resolution must be >= 1");
  if (!(min_lr >= 0.0 && min_lr <= lr)) fail("need 0 <= min_lr <= lr");
  if (!(warmup_start_lr >= 0.0)) fail("warmup_start_lr must be >= 0");
  if (dataset_size == 0) fail("dataset_size must be >= 1");
  model::find_preset(model);
}

inline std::vector<std::string> RecipeConfig::coupling_violations() const {
  std::vector<std::string> out;
  if (loss == LossKind::kBce && label_smoothing > 0.0) out.emplace_back("BCE loss combined with label smoothing");
  if (crop_mode == augment::CropMode::kSimpleRandom && repeated_aug) {
    out.emplace_back("simple random crop combined with repeated augmentation");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Derived settings
// ---------------------------------------------------------------------------

inline double table_drop_path(const RecipeConfig& c) {
  const auto& p = model::find_preset(c.model);
  return c.regime == Regime::kIn1k ? p.drop_path_in1k : p.drop_path_in21k;
}

/// Drop-path and weight decay after the long-schedule scaling rule.
inline optim::Regularization regularization(const RecipeConfig& c) {
  const double base = c.drop_path.value_or(table_drop_path(c));
  return optim::scale_regularization({base, c.weight_decay}, c.epochs);
}

inline model::ViTConfig model_config(const RecipeConfig& c, std::size_t num_classes) {
  const auto& p = model::find_preset(c.model);
  model::ViTConfig m;
  m.embed_dim = c.embed_dim ? c.embed_dim : p.embed_dim;
  m.depth = c.depth ? c.depth : p.depth;
  m.num_heads = c.num_heads ? c.num_heads : p.num_heads;
  m.patch_size = c.patch_size ? c.patch_size : p.patch_size;
  m.num_classes = num_classes;
  m.image_size = c.train_resolution;
  m.layerscale = c.layerscale;
  m.layerscale_init = c.layerscale_init;
  m.drop_path_rate = regularization(c).drop_path;
  m.validate();
  return m;
}

inline augment::AugmentPolicy augment_policy(const RecipeConfig& c) {
  augment::AugmentPolicy p;
  p.color_jitter_strength = c.color_jitter;
  p.hflip_prob = c.hflip ? 0.5 : 0.0;
  p.crop_mode = c.crop_mode;
  p.mixup_alpha = c.mixup_alpha;
  p.cutmix_alpha = c.cutmix_alpha;
  p.train_resolution = c.train_resolution;
  p.validate();
  return p;
}

inline optim::ScheduleConfig schedule(const RecipeConfig& c, std::size_t steps_per_epoch) {
  optim::ScheduleConfig s;
  s.base_lr = c.lr;
  s.min_lr = c.min_lr;
  s.warmup_epochs = c.warmup_epochs;
  s.total_epochs = c.epochs;
  s.steps_per_epoch = steps_per_epoch;
  s.warmup_start_lr = c.warmup_start_lr;
  s.validate();
  return s;
}

}  // namespace vitrain::recipe
