// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vitrain/augment.hpp"
#include "vitrain/checkpoint.hpp"
#include "vitrain/data.hpp"
#include "vitrain/model.hpp"
#include "vitrain/optim.hpp"
#include "vitrain/recipe.hpp"

namespace vitrain::trainer {

namespace fs = std::filesystem;
using numerics::Tensor;
using recipe::RecipeConfig;

// Independent RNG streams derived from the run seed.
inline constexpr std::uint64_t kInitStream = 0x1d17'0000'0001ULL;
inline constexpr std::uint64_t kDropPathStream = 0x1d17'0000'0002ULL;
inline constexpr std::uint64_t kMixStream = 0x1d17'0000'0003ULL;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

inline constexpr std::string_view kMetricsHeader = "epoch,step,lr,train_loss,train_acc,val_acc,wall_seconds";

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global, 0-based
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> train_acc;
  std::optional<double> val_acc;
  double wall_seconds = 0.0;
};

inline std::string to_csv(const MetricsRow& r) {
  auto opt = [](const std::optional<double>& v) { return v ? checkpoint::format_double(*v) : std::string(); };
  char wall[32];
  std::snprintf(wall, sizeof wall, "%.3f", r.wall_seconds);
  return std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + checkpoint::format_double(r.lr) + "," +
         checkpoint::format_double(r.train_loss) + "," + opt(r.train_acc) + "," + opt(r.val_acc) + "," + wall;
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

/// Crop, then 3-Augment (or jitter and flip alone when it is off).
inline ImageU8 augment_sample(const ImageU8& img, const RecipeConfig& cfg, const augment::AugmentPolicy& policy,
                              Rng& rng) {
  const std::size_t r = cfg.train_resolution;
  ImageU8 x = cfg.crop_mode == augment::CropMode::kRandomResized ? augment::random_resized_crop(img, r, rng)
                                                                 : augment::simple_random_crop(img, r, rng);
  if (cfg.three_augment) return augment::three_augment(x, policy, rng);
  if (policy.color_jitter_strength > 0.0) x = augment::color_jitter(x, policy.color_jitter_strength, rng);
  if (rng.bernoulli(policy.hflip_prob)) x = augment::hflip(x);
  return x;
}

struct BatchData {
  Tensor<float> images;   // [B, 3, R, R]
  Tensor<float> targets;  // [B, K]
};

inline Tensor<float> one_hot(const std::vector<std::size_t>& labels, std::size_t k) {
  std::vector<float> t(labels.size() * k, 0.0f);
  for (std::size_t i = 0; i < labels.size(); ++i) t[i * k + labels[i]] = 1.0f;
  return Tensor<float>::from({labels.size(), k}, std::move(t));
}

/// Augmented batch; each item's stream depends only on (seed, epoch, index, repeat).
inline BatchData training_batch(const data::Dataset& ds, const data::Batch& batch, const RecipeConfig& cfg,
                                const augment::AugmentPolicy& policy, std::uint64_t epoch) {
  const std::size_t r = cfg.train_resolution, plane = 3 * r * r;
  std::vector<float> pixels(batch.size() * plane);
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& item = batch[i];
    Rng rng(data::repeat_seed(data::per_sample_seed(cfg.seed, epoch, item.index), item.repeat));
    const auto img = augment_sample(ds.images[item.index], cfg, policy, rng);
    data::normalize_into<float>(img, std::span<float>(pixels).subspan(i * plane, plane));
    labels.push_back(ds.manifest.entries[item.index].label);
  }
  return {Tensor<float>::from({batch.size(), 3, r, r}, std::move(pixels)), one_hot(labels, ds.num_classes())};
}

inline Tensor<float> reverse_batch(const Tensor<float>& t) {
  const std::size_t b = t.dim(0), row = t.numel() / b;
  std::vector<float> out(t.numel());
  auto src = t.data();
  for (std::size_t i = 0; i < b; ++i) std::copy_n(src.begin() + (b - 1 - i) * row, row, out.begin() + i * row);
  return Tensor<float>::from(t.shape(), std::move(out));
}

/// Mixup or CutMix against the batch in reversed order.
inline BatchData mix_batch(BatchData b, const augment::AugmentPolicy& policy, Rng& rng) {
  const auto kind = augment::mix_dispatch(policy, rng);
  if (kind == augment::MixKind::kNone) return b;
  const auto ib = reverse_batch(b.images), tb = reverse_batch(b.targets);
  const auto m = kind == augment::MixKind::kMixup ? augment::mixup(b.images, ib, b.targets, tb, policy.mixup_alpha, rng)
                                                  : augment::cutmix(b.images, ib, b.targets, tb, policy.cutmix_alpha, rng);
  return {m.images, m.targets};
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Top-1 accuracy under the deterministic center-crop pipeline. Parameters
/// are resampled when `resolution` differs from the model's.
inline double evaluate(const model::ViTParams<float>& params, const data::Dataset& ds, std::size_t resolution,
                       double crop_ratio, std::size_t batch_size = 64) {
  if (ds.num_classes() != params.config.num_classes) {
    throw ContractError("evaluate: dataset has " + std::to_string(ds.num_classes()) + " classes, model has " +
                        std::to_string(params.config.num_classes));
  }
  if (ds.size() == 0) throw ContractError("evaluate: empty dataset");
  const auto p = resolution == params.config.image_size ? params : model::interpolate_pos_embed(params, resolution);
  numerics::NoGradGuard no_grad;
  Rng unused(0);
  const std::size_t plane = 3 * resolution * resolution;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, ds.size() - start);
    std::vector<float> pixels(n * plane);
    for (std::size_t i = 0; i < n; ++i) {
      const auto img = augment::eval_preprocess(ds.images[start + i], resolution, crop_ratio);
      data::normalize_into<float>(img, std::span<float>(pixels).subspan(i * plane, plane));
    }
    const auto logits = model::forward(p, Tensor<float>::from({n, 3, resolution, resolution}, std::move(pixels)),
                                       model::Mode::kEval, unused);
    const std::size_t k = p.config.num_classes;
    auto z = logits.data();
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = z.subspan(i * k, k);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == ds.manifest.entries[start + i].label) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct RunOptions {
  std::optional<fs::path> out_dir;        // checkpoint, metrics and resolved config
  const data::Dataset* val = nullptr;
  std::ostream* log = nullptr;
  std::optional<std::size_t> stop_after_epochs;  // truncates the run; the schedule is unchanged
  std::vector<std::string> overrides;       // recorded in the resolved config
};

struct TrainResult {
  checkpoint::Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
  std::vector<double> epoch_mean_loss;
  double train_acc = 0.0;
  std::optional<double> val_acc;
};

inline Tensor<float> loss_for(const RecipeConfig& cfg, const Tensor<float>& logits, const Tensor<float>& targets) {
  return cfg.loss == recipe::LossKind::kBce ? optim::bce_loss(logits, targets)
                                            : optim::ce_smoothed_loss(logits, targets, cfg.label_smoothing);
}

inline void write_run_config(const fs::path& dir, const RecipeConfig& cfg, const RunOptions& opts,
                             const model::ViTConfig& mc) {
  std::string text = "# resolved recipe\n" + recipe::to_text(cfg);
  text += "# model: embed_dim " + std::to_string(mc.embed_dim) + ", depth " + std::to_string(mc.depth) +
          ", heads " + std::to_string(mc.num_heads) + ", patch " + std::to_string(mc.patch_size) + ", drop_path " +
          checkpoint::format_double(mc.drop_path_rate) + "\n";
  for (const auto& o : opts.overrides) text += "# override " + o + "\n";
  io::write_file(dir / "config.txt", std::vector<char>(text.begin(), text.end()));
}

/// Runs the full schedule from `params`, updating them in place.
inline TrainResult train_loop(model::ViTParams<float> params, const data::Dataset& ds, const RecipeConfig& cfg,
                              const RunOptions& opts) {
  cfg.validate();
  if (ds.size() == 0) throw ContractError("train: empty dataset");
  if (ds.num_classes() != params.config.num_classes) {
    throw ContractError("train: dataset classes do not match the model head");
  }
  const auto policy = recipe::augment_policy(cfg);
  const auto reg = recipe::regularization(cfg);
  const data::SamplerConfig sampler{cfg.batch_size, cfg.repeated_aug ? std::size_t{3} : std::size_t{1}};
  const std::size_t spe = data::steps_per_epoch(ds.size(), sampler);
  const auto sched = recipe::schedule(cfg, spe);
  const std::size_t epochs = std::min(cfg.epochs, opts.stop_after_epochs.value_or(cfg.epochs));

  auto named = params.named_parameters();
  std::vector<Tensor<float>> tensors;
  for (auto& p : named) tensors.push_back(p.tensor);
  optim::LambState<float> state;

  std::ofstream csv;
  if (opts.out_dir) {
    fs::create_directories(*opts.out_dir);
    write_run_config(*opts.out_dir, cfg, opts, params.config);
    csv.open(*opts.out_dir / "metrics.csv", std::ios::trunc);
    if (!csv) throw FormatError("cannot write metrics to '" + opts.out_dir->string() + "'");
    csv << kMetricsHeader << "\n";
  }

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto bs = data::batches(ds.size(), sampler, cfg.seed, epoch);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < bs.size(); ++bi, ++step) {
      const double lr = optim::cosine_lr(sched, step);
      Rng mix_rng(combine_seed(combine_seed(cfg.seed, kMixStream), step));
      const auto batch = mix_batch(training_batch(ds, bs[bi], cfg, policy, epoch), policy, mix_rng);
      Rng drop_rng(combine_seed(combine_seed(cfg.seed, kDropPathStream), step));
      for (auto& t : tensors) t.zero_grad();
      const auto logits = model::forward(params, batch.images, model::Mode::kTrain, drop_rng);
      const auto loss = loss_for(cfg, logits, batch.targets);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite loss " + std::to_string(lv) + " at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step));
      }
      numerics::backward(loss);
      std::vector<std::span<float>> grads;
      for (auto& t : tensors) grads.push_back(t.mutable_grad());
      if (cfg.grad_clip > 0.0) optim::grad_clip_global_norm(grads, cfg.grad_clip);
      std::vector<optim::LambGroup<float>> groups;
      for (std::size_t i = 0; i < tensors.size(); ++i) {
        groups.push_back({tensors[i].mutable_data(), grads[i], named[i].decay ? reg.weight_decay : 0.0, named[i].decay});
      }
      optim::lamb_step<float>(groups, state, lr);
      loss_sum += lv;

      MetricsRow row{epoch, step, lr, lv, std::nullopt, std::nullopt, 0.0};
      if (bi + 1 == bs.size()) {
        row.train_acc = result.train_acc = evaluate(params, ds, cfg.train_resolution, cfg.test_crop_ratio);
        const bool last = epoch + 1 == epochs;
        if (opts.val && cfg.val_every > 0 && ((epoch + 1) % cfg.val_every == 0 || last)) {
          row.val_acc = result.val_acc =
              evaluate(params, *opts.val, cfg.resolved_eval_resolution(), cfg.test_crop_ratio);
        }
      }
      row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (csv.is_open()) csv << to_csv(row) << "\n" << std::flush;
      result.metrics.push_back(row);
    }
    result.epoch_mean_loss.push_back(loss_sum / static_cast<double>(bs.size()));
    if (opts.log) {
      *opts.log << "epoch " << epoch + 1 << "/" << cfg.epochs << "  loss " << result.epoch_mean_loss.back()
                << "  train_acc " << result.train_acc;
      if (result.metrics.back().val_acc) *opts.log << "  val_acc " << *result.metrics.back().val_acc;
      *opts.log << "\n" << std::flush;
    }
  }

  result.checkpoint.params = std::move(params);
  result.checkpoint.optimizer = std::move(state);
  for (const auto& key : recipe::keys()) result.checkpoint.meta["recipe." + key] = recipe::get(cfg, key);
  result.checkpoint.meta["epochs_completed"] = std::to_string(epochs);
  if (opts.out_dir) checkpoint::save(*opts.out_dir / "checkpoint.vitckpt", result.checkpoint);
  return result;
}

inline model::ViTParams<float> initial_params(const RecipeConfig& cfg, std::size_t num_classes) {
  Rng rng(combine_seed(cfg.seed, kInitStream));
  return model::init<float>(recipe::model_config(cfg, num_classes), rng);
}

inline TrainResult train(const RecipeConfig& cfg, const data::Dataset& ds, const RunOptions& opts = {}) {
  cfg.validate();
  for (const auto& w : cfg.coupling_violations()) {
    if (opts.log) *opts.log << "warning: " << w << "\n";
  }
  return train_loop(initial_params(cfg, ds.num_classes()), ds, cfg, opts);
}

/// Resamples positional embeddings to cfg.train_resolution, applies the
/// recipe's drop-path rate and trains with fresh optimizer state.
inline TrainResult finetune(const checkpoint::Checkpoint& ck, const RecipeConfig& cfg, const data::Dataset& ds,
                            const RunOptions& opts = {}) {
  cfg.validate();
  if (ck.params.config.num_classes != ds.num_classes()) {
    throw FormatError("finetune: checkpoint has " + std::to_string(ck.params.config.num_classes) +
                      " classes, dataset has " + std::to_string(ds.num_classes()));
  }
  const std::size_t patch = ck.params.config.patch_size;
  if (cfg.train_resolution % patch != 0) {
    throw ParameterError("finetune: resolution " + std::to_string(cfg.train_resolution) +
                         " is not divisible by the checkpoint patch size " + std::to_string(patch));
  }
  auto params = model::interpolate_pos_embed(ck.params, cfg.train_resolution);
  params.config.drop_path_rate = recipe::regularization(cfg).drop_path;
  if (opts.log) {
    const auto g0 = ck.params.config.grid(), g1 = params.config.grid();
    *opts.log << "token grid " << g0 << "x" << g0 << " -> " << g1 << "x" << g1 << " (" << g0 * g0 << " -> "
              << g1 * g1 << " patch tokens)\n";
  }
  return train_loop(std::move(params), ds, cfg, opts);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct PreviewItem {
  std::size_t sample;
  augment::Branch branch;
  fs::path path;
};

/// n augmented samples (crop, then 3-Augment), named by sample, seed and branch.
inline std::vector<PreviewItem> augment_preview(const data::Dataset& ds, const RecipeConfig& cfg, std::size_t n,
                                                const std::optional<fs::path>& out_dir) {
  const auto policy = recipe::augment_policy(cfg);
  std::vector<PreviewItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t sample = i % ds.size();
    Rng rng(data::per_sample_seed(cfg.seed, 0, i));
    const std::size_t r = cfg.train_resolution;
    const auto cropped = cfg.crop_mode == augment::CropMode::kRandomResized
                             ? augment::random_resized_crop(ds.images[sample], r, rng)
                             : augment::simple_random_crop(ds.images[sample], r, rng);
    const auto out = augment::three_augment_traced(cropped, policy, rng);
    PreviewItem item{sample, out.branch, {}};
    if (out_dir) {
      item.path = *out_dir / ("preview_" + std::to_string(i) + "_sample" + std::to_string(sample) + "_seed" +
                              std::to_string(cfg.seed) + "_" + augment::to_string(out.branch) + ".img1");
      data::save_image(item.path, out.image);
    }
    items.push_back(std::move(item));
  }
  return items;
}

inline constexpr std::string_view kScheduleHeader = "step,lr,drop_path,weight_decay";

/// One row per optimizer step.
inline void schedule_dump(const RecipeConfig& cfg, std::size_t steps_per_epoch, std::ostream& out) {
  cfg.validate();
  const auto sched = recipe::schedule(cfg, steps_per_epoch);
  const auto reg = recipe::regularization(cfg);
  const std::string tail = "," + checkpoint::format_double(reg.drop_path) + "," + checkpoint::format_double(reg.weight_decay) + "\n";
  out << kScheduleHeader << "\n";
  for (std::size_t s = 0; s < sched.total_steps(); ++s) {
    out << s << "," << checkpoint::format_double(optim::cosine_lr(sched, s)) << tail;
  }
}

inline std::size_t schedule_steps_per_epoch(const RecipeConfig& cfg, std::size_t dataset_size) {
  return data::steps_per_epoch(dataset_size, {cfg.batch_size, cfg.repeated_aug ? std::size_t{3} : std::size_t{1}});
}

inline std::string flops_report(const model::ViTConfig& mc, std::size_t resolution) {
  char buf[256];
  const auto params = model::count_params(mc);
  const auto flops = model::count_flops(mc, resolution);
  std::snprintf(buf, sizeof buf,
                "resolution %zu\npatch_tokens %zu\nparams %llu\nparams_millions %.1f\nflops %llu\ngflops %.1f\n",
                resolution, model::token_count(resolution, mc.patch_size), static_cast<unsigned long long>(params),
                static_cast<double>(params) / 1e6, static_cast<unsigned long long>(flops),
                static_cast<double>(flops) / 1e9);
  return buf;
}

}  // namespace vitrain::trainer
