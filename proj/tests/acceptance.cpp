// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, followed by indented
// detail lines. Every tolerance is a named constant below.
//
// Usage: acceptance [--only N]... [--known-deviation ID]...
// Exit status is 1 when any check fails that is not listed as a known deviation.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fd_oracle.hpp"
#include "vitrain/trainer.hpp"

namespace {

using namespace vitrain;
using numerics::Tensor;

// ---------------------------------------------------------------------------
// Pinned tolerances
// ---------------------------------------------------------------------------

constexpr double kFlopsRelTol = 0.015;
constexpr double kGradRelTol = 1e-4;
constexpr double kFdStep = 1e-5;
// Central differences at kFdStep carry ~eps*|loss|/h = 2e-11 of roundoff;
// relative errors use this denominator floor, well above that noise.
constexpr double kFdFloor = 1e-6;
constexpr double kAdamWRelTol = 1e-12;
constexpr double kLambNormRelTol = 1e-10;
constexpr double kRegTol = 1e-12;
constexpr double kSigmas = 3.0;
constexpr int kBlurMaxByteDiff = 1;
constexpr double kToyAccuracy = 0.95;

// Tiny model and toy run shared by the training criteria.
constexpr std::size_t kToyDim = 32, kToyDepth = 2, kToyHeads = 2, kToyPatch = 4;
constexpr std::size_t kToyRes = 32, kFinetuneRes = 48;

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

struct Check {
  std::string id;
  bool pass;
  std::string detail;
};

struct Report {
  std::set<std::string> known;
  bool blocking_failure = false;

  void emit(int number, const char* title, const std::vector<Check>& checks, double seconds) {
    bool pass = true, excused = true;
    for (const auto& c : checks) {
      if (c.pass) continue;
      pass = false;
      if (!known.count(c.id)) excused = false;
    }
    if (!pass && !excused) blocking_failure = true;
    std::printf("%s  C%-2d %s  (%.1fs)%s\n", pass ? "PASS" : "FAIL", number, title, seconds,
                !pass && excused ? "  [known deviation]" : "");
    for (const auto& c : checks) {
      std::printf("      %s %-28s %s\n", c.pass ? "ok  " : "FAIL", c.id.c_str(), c.detail.c_str());
    }
    std::fflush(stdout);
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// ---------------------------------------------------------------------------
// C1, C2: model shapes
// ---------------------------------------------------------------------------

std::vector<Check> model_shapes() {
  std::vector<Check> out;
  const std::pair<const char*, double> params[] = {
      {"ViT-T", 5.7}, {"ViT-S", 22.0}, {"ViT-B", 86.6}, {"ViT-L", 304.4}, {"ViT-H", 632.1}};
  for (const auto& [name, millions] : params) {
    const auto n = model::count_params(model::preset_config(name, 1000, 224));
    const double got = std::round(static_cast<double>(n) / 1e5) / 10.0;
    out.push_back({std::string("params.") + name, got == millions,
                   fmt("%llu -> %.1fM, reference %.1fM", static_cast<unsigned long long>(n), got, millions)});
  }
  const std::pair<const char*, double> flops[] = {{"ViT-S", 4.6}, {"ViT-B", 17.5}, {"ViT-L", 61.6}, {"ViT-H", 167.4}};
  for (const auto& [name, g] : flops) {
    const double got = static_cast<double>(model::count_flops(model::preset_config(name), 224)) / 1e9;
    out.push_back({std::string("flops.") + name, rel(got, g) <= kFlopsRelTol,
                   fmt("%.3f G vs %.1f G, rel err %.4f (tol %.3f)", got, g, rel(got, g), kFlopsRelTol)});
  }
  return out;
}

std::vector<Check> token_counts() {
  const auto a = model::token_count(160, 16), b = model::token_count(224, 16);
  return {{"tokens.160", a == 100, fmt("%zu (expected 100)", a)}, {"tokens.224", b == 196, fmt("%zu (expected 196)", b)}};
}

// ---------------------------------------------------------------------------
// C3: gradient suite
// ---------------------------------------------------------------------------

std::vector<Check> gradients() {
  model::ViTConfig cfg;
  cfg.embed_dim = kToyDim;
  cfg.depth = kToyDepth;
  cfg.num_heads = kToyHeads;
  cfg.patch_size = kToyPatch;
  cfg.image_size = 16;
  cfg.num_classes = 4;
  cfg.drop_path_rate = 0.1;
  Rng rng(2024);
  auto p = model::init<double>(cfg, rng);
  // Off-init values keep most gradients well above the finite-difference noise;
  // key-projection biases have an identically zero gradient.
  for (auto* t : p.named_parameters_mut()) {
    for (auto& v : t->mutable_data()) v = rng.uniform(-0.5, 0.5);
  }
  const std::size_t batch = 2;
  std::vector<double> px(batch * 3 * 16 * 16);
  for (auto& v : px) v = rng.normal();
  const auto images = Tensor<double>::from({batch, 3, 16, 16}, px);
  std::vector<double> soft(batch * 4), hard(batch * 4, 0.0);
  for (auto& v : soft) v = rng.uniform();
  hard[1] = hard[4 + 3] = 1.0;
  const auto soft_t = Tensor<double>::from({batch, 4}, soft), hard_t = Tensor<double>::from({batch, 4}, hard);

  std::vector<Check> out;
  for (const bool bce : {true, false}) {
    auto loss = [&] {
      Rng dp(99);
      const auto logits = model::forward(p, images, model::Mode::kTrain, dp);
      return bce ? optim::bce_loss(logits, soft_t) : optim::ce_smoothed_loss(logits, hard_t, 0.1);
    };
    for (auto* t : p.named_parameters_mut()) t->zero_grad();
    numerics::backward(loss());
    double worst = 0.0;
    std::string worst_name;
    std::size_t checked = 0, floored = 0;
    for (const auto& np : p.named_parameters()) {
      auto t = np.tensor;
      const std::vector<double> analytic(t.grad().begin(), t.grad().end());
      const double e = testing::max_fd_error(t.mutable_data(), analytic, [&] { return loss().item(); }, {},
                                             kFdStep, kFdFloor);
      checked += analytic.size();
      floored += static_cast<std::size_t>(
          std::count_if(analytic.begin(), analytic.end(), [](double g) { return std::abs(g) < kFdFloor; }));
      if (e >= worst) worst = e, worst_name = np.name;
    }
    out.push_back({bce ? "grad.bce" : "grad.smoothed_ce", worst < kGradRelTol,
                   fmt("%zu entries (%zu below floor %.0e), max rel err %.2e at %s (tol %.0e)", checked, floored,
                       kFdFloor, worst, worst_name.c_str(), kGradRelTol)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// C4: optimizer oracle
// ---------------------------------------------------------------------------

/// Decoupled-weight-decay Adam, written without reference to the LAMB code.
struct AdamW {
  double b1 = 0.9, b2 = 0.999, eps = 1e-6, wd;
  std::vector<double> m, v;
  long t = 0;
  void step(std::vector<double>& w, const std::vector<double>& g, double lr) {
    if (m.empty()) m.assign(w.size(), 0.0), v.assign(w.size(), 0.0);
    ++t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t)), c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= lr * ((m[i] / c1) / (std::sqrt(v[i] / c2) + eps) + wd * w[i]);
    }
  }
};

std::vector<Check> optimizer() {
  std::vector<Check> out;
  Rng rng(77);
  {
    const std::vector<std::size_t> sizes = {7, 64, 3};
    const double wds[] = {0.05, 0.0, 0.1};
    std::vector<std::vector<double>> w(sizes.size()), wo;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      w[i].resize(sizes[i]);
      for (auto& x : w[i]) x = rng.normal();
    }
    wo = w;
    std::vector<AdamW> oracle;
    for (double wd : wds) oracle.push_back(AdamW{.wd = wd});
    optim::LambState<double> st;
    double worst = 0.0;
    for (int s = 0; s < 100; ++s) {
      const double lr = rng.uniform(1e-4, 1e-2);
      std::vector<std::vector<double>> g(sizes.size());
      std::vector<optim::LambGroup<double>> groups;
      for (std::size_t i = 0; i < sizes.size(); ++i) {
        g[i].resize(sizes[i]);
        for (auto& x : g[i]) x = rng.normal() * std::pow(10.0, rng.uniform(-3, 1));
        groups.push_back({w[i], g[i], wds[i], false});
        oracle[i].step(wo[i], g[i], lr);
      }
      optim::lamb_step<double>(groups, st, lr);
      for (std::size_t i = 0; i < sizes.size(); ++i)
        for (std::size_t j = 0; j < sizes[i]; ++j) worst = std::max(worst, rel(w[i][j], wo[i][j]));
    }
    out.push_back({"lamb_vs_adamw", worst < kAdamWRelTol,
                   fmt("100 steps, 3 tensors, max rel err %.2e (tol %.0e)", worst, kAdamWRelTol)});
  }
  {
    std::vector<double> w(50);
    for (auto& x : w) x = rng.normal();
    optim::LambState<double> st;
    double worst = 0.0;
    for (int s = 0; s < 100; ++s) {
      std::vector<double> g(w.size());
      for (auto& x : g) x = rng.normal();
      const auto before = w;
      double wn = 0.0;
      for (double x : w) wn += x * x;
      const double lr = 1e-3;
      const optim::LambGroup<double> group{w, g, 0.0, true};
      optim::lamb_step<double>(std::span<const optim::LambGroup<double>>(&group, 1), st, lr);
      double dn = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) dn += (w[i] - before[i]) * (w[i] - before[i]);
      worst = std::max(worst, rel(std::sqrt(dn), lr * std::sqrt(wn)));
    }
    out.push_back({"lamb_step_norm", worst < kLambNormRelTol,
                   fmt("||dw|| vs lr*||w|| over 100 steps, max rel err %.2e (tol %.0e)", worst, kLambNormRelTol)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// C5: schedule endpoints
// ---------------------------------------------------------------------------

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string x; std::getline(ss, x, sep);) out.push_back(x);
  return out;
}

std::vector<Check> schedule_endpoints() {
  std::vector<Check> out;
  const auto cfg = recipe::preset("in1k");
  const auto spe = trainer::schedule_steps_per_epoch(cfg, cfg.dataset_size);
  const auto sched = recipe::schedule(cfg, spe);
  const double at_warmup = optim::cosine_lr(sched, sched.warmup_steps());
  const double last = optim::cosine_lr(sched, sched.total_steps() - 1);
  out.push_back({"lr.warmup_end", at_warmup == 3e-3,
                 fmt("step %zu of %zu: %.17g (expected exactly 3e-3)", sched.warmup_steps(), sched.total_steps(),
                     at_warmup)});
  out.push_back({"lr.final", last == cfg.min_lr, fmt("%.17g (min_lr %.17g)", last, cfg.min_lr)});

  auto long_run = cfg;
  long_run.epochs = 800;
  std::ostringstream csv;
  trainer::schedule_dump(long_run, 1, csv);
  const auto rows = split(csv.str(), '\n');
  const auto cols = split(rows.back(), ',');
  const double base = recipe::table_drop_path(long_run);
  const double dp = std::stod(cols.at(2)), wd = std::stod(cols.at(3));
  out.push_back({"reg.drop_path_800", std::abs(dp - (base + 0.10)) < kRegTol,
                 fmt("ViT-B: %.17g (base %.2f + 0.10)", dp, base)});
  out.push_back({"reg.weight_decay_800", std::abs(wd - 0.05) < kRegTol, fmt("%.17g (expected 0.05)", wd)});
  return out;
}

// ---------------------------------------------------------------------------
// C6: augmentation statistics
// ---------------------------------------------------------------------------

Check within_sigma(const std::string& id, std::size_t hits, std::size_t n, double p) {
  const double mean = static_cast<double>(n) * p, sd = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
  const double z = (static_cast<double>(hits) - mean) / sd;
  return {id, std::abs(z) <= kSigmas, fmt("%zu / %zu, expected %.0f, z = %+.2f (limit %.0f)", hits, n, mean, z, kSigmas)};
}

std::vector<Check> augmentation_statistics() {
  constexpr std::size_t kDraws = 30'000;
  std::vector<Check> out;
  augment::AugmentPolicy policy;
  ImageU8 img(4, 4);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>(i * 37 % 256);
  std::size_t counts[3] = {0, 0, 0};
  for (std::size_t i = 0; i < kDraws; ++i) {
    Rng rng(data::per_sample_seed(1, 0, i));
    ++counts[static_cast<int>(augment::three_augment_traced(img, policy, rng).branch)];
  }
  for (int b = 0; b < 3; ++b) {
    out.push_back(within_sigma(std::string("branch.") + augment::to_string(static_cast<augment::Branch>(b)), counts[b],
                               kDraws, 1.0 / 3.0));
  }
  std::size_t cut = 0;
  for (std::size_t i = 0; i < kDraws; ++i) {
    Rng rng(data::per_sample_seed(2, 0, i));
    if (augment::mix_dispatch(policy, rng) == augment::MixKind::kCutmix) ++cut;
  }
  out.push_back(within_sigma("mix_dispatch.cutmix", cut, kDraws, 0.5));
  Rng rng(3);
  const double rate = 0.1;
  const auto f = model::drop_path_factors<double>(kDraws, rate, rng);
  out.push_back(within_sigma("drop_path.rate_0.1", static_cast<std::size_t>(std::count(f.begin(), f.end(), 0.0)),
                             kDraws, rate));
  return out;
}

// ---------------------------------------------------------------------------
// C7: augmentation oracles
// ---------------------------------------------------------------------------

std::size_t mirror(long i, long n) {
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return static_cast<std::size_t>(i);
}

/// Direct 2-D Gaussian convolution with mirrored borders.
ImageU8 brute_force_blur(const ImageU8& img, double sigma) {
  const long r = static_cast<long>(std::ceil(3.0 * sigma));
  const long w = static_cast<long>(img.width), h = static_cast<long>(img.height);
  double total = 0.0;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx) total += std::exp(-static_cast<double>(dx * dx + dy * dy) / (2 * sigma * sigma));
  ImageU8 out(img.width, img.height);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx) {
            const double k = std::exp(-static_cast<double>(dx * dx + dy * dy) / (2 * sigma * sigma)) / total;
            acc += k * img.at(mirror(x + dx, w), mirror(y + dy, h), c);
          }
        out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) =
            static_cast<std::uint8_t>(std::clamp(std::lround(acc), 0L, 255L));
      }
  return out;
}

std::vector<Check> augmentation_oracles() {
  std::vector<Check> out;
  Rng rng(11);
  int worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    ImageU8 img(8, 8);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    const double sigma = rng.uniform(0.1, 2.0);
    const auto a = augment::gaussian_blur(img, sigma), b = brute_force_blur(img, sigma);
    for (std::size_t i = 0; i < a.pixels.size(); ++i) worst = std::max(worst, std::abs(int(a.pixels[i]) - int(b.pixels[i])));
  }
  out.push_back({"blur.separable_vs_2d", worst <= kBlurMaxByteDiff,
                 fmt("50 random 8x8 images, sigma in [0.1, 2], max diff %d byte (limit %d)", worst, kBlurMaxByteDiff)});

  std::size_t mismatches = 0;
  const std::size_t res = 16;
  const auto zeros = Tensor<float>::zeros({1, 3, res, res});
  const auto ones = Tensor<float>::from({1, 3, res, res}, std::vector<float>(3 * res * res, 1.0f));
  const auto ya = Tensor<float>::from({1, 2}, {1.0f, 0.0f}), yb = Tensor<float>::from({1, 2}, {0.0f, 1.0f});
  for (int trial = 0; trial < 1000; ++trial) {
    const auto m = augment::cutmix(zeros, ones, ya, yb, 1.0, rng);
    std::size_t pasted = 0;
    for (std::size_t i = 0; i < res * res; ++i) pasted += m.images.data()[i] == 1.0f;
    const double expected = 1.0 - static_cast<double>(pasted) / static_cast<double>(res * res);
    if (m.lambda != expected || m.targets.data()[0] != static_cast<float>(expected)) ++mismatches;
  }
  out.push_back({"cutmix.lambda_adj", mismatches == 0, fmt("1000 draws, %zu mismatches against pixel counts", mismatches)});

  const auto g = augment::src_geometry(640, 480, 224);
  out.push_back({"src.geometry", g.padded_width == 307 && g.padded_height == 232 && g.max_x == 83 && g.max_y == 8,
                 fmt("padded %zux%zu, offsets [0,%zu]x[0,%zu]", g.padded_width, g.padded_height, g.max_x, g.max_y)});
  ImageU8 big(640, 480, 100);
  std::size_t lo_x = 1000, hi_x = 0, lo_y = 1000, hi_y = 0;
  for (int i = 0; i < 400; ++i) {
    augment::CropBox box{};
    augment::simple_random_crop(big, 224, rng, &box);
    lo_x = std::min(lo_x, box.x), hi_x = std::max(hi_x, box.x);
    lo_y = std::min(lo_y, box.y), hi_y = std::max(hi_y, box.y);
  }
  out.push_back({"src.sampled_offsets", lo_x == 0 && hi_x == 83 && lo_y == 0 && hi_y == 8,
                 fmt("400 crops span [%zu,%zu]x[%zu,%zu]", lo_x, hi_x, lo_y, hi_y)});
  return out;
}

// ---------------------------------------------------------------------------
// C8, C9: toy training and the low-resolution pipeline
// ---------------------------------------------------------------------------

recipe::RecipeConfig toy_recipe(recipe::LossKind loss) {
  auto c = recipe::preset("in1k");
  c.model = "ViT-T";
  c.embed_dim = kToyDim;
  c.depth = kToyDepth;
  c.num_heads = kToyHeads;
  c.patch_size = kToyPatch;
  c.train_resolution = kToyRes;
  c.batch_size = 64;
  c.epochs = 30;
  c.lr = 5e-4;
  if (loss == recipe::LossKind::kCe) {
    c.loss = loss;
    c.label_smoothing = 0.1;
  }
  return c;
}

data::Dataset toy_data(std::size_t resolution) {
  data::SynthSpec spec;
  spec.resolution = resolution;
  return data::synth_dataset(spec);
}

struct ToyRuns {
  std::optional<trainer::TrainResult> bce;
};

std::vector<Check> toy_training(ToyRuns& runs) {
  std::vector<Check> out;
  const auto ds = toy_data(kToyRes);
  runs.bce = trainer::train(toy_recipe(recipe::LossKind::kBce), ds);
  const auto again = trainer::train(toy_recipe(recipe::LossKind::kBce), ds);
  const auto ce = trainer::train(toy_recipe(recipe::LossKind::kCe), ds);
  out.push_back({"train_acc.bce", runs.bce->train_acc >= kToyAccuracy,
                 fmt("%.4f (threshold %.2f), final epoch loss %.4f", runs.bce->train_acc, kToyAccuracy,
                     runs.bce->epoch_mean_loss.back())});
  out.push_back({"train_acc.smoothed_ce", ce.train_acc >= kToyAccuracy,
                 fmt("%.4f (threshold %.2f), final epoch loss %.4f", ce.train_acc, kToyAccuracy,
                     ce.epoch_mean_loss.back())});
  const auto a = checkpoint::encode(runs.bce->checkpoint), b = checkpoint::encode(again.checkpoint);
  out.push_back({"determinism", a == b, fmt("two same-seed runs, %zu checkpoint bytes, %s", a.size(),
                                           a == b ? "identical" : "different")});
  return out;
}

std::vector<Check> fixres_pipeline(ToyRuns& runs) {
  std::vector<Check> out;
  if (!runs.bce) runs.bce = trainer::train(toy_recipe(recipe::LossKind::kBce), toy_data(kToyRes));
  const auto ds48 = toy_data(kFinetuneRes);
  auto ft = recipe::preset("fixres_finetune");
  ft.model = "ViT-T";
  ft.embed_dim = kToyDim;
  ft.depth = kToyDepth;
  ft.num_heads = kToyHeads;
  ft.patch_size = kToyPatch;
  ft.batch_size = 64;
  ft.train_resolution = kFinetuneRes;

  const auto& pre = runs.bce->checkpoint.params;
  const double naive = trainer::evaluate(pre, ds48, kFinetuneRes, 1.0);
  const auto tuned = trainer::finetune(runs.bce->checkpoint, ft, ds48);
  const double final_acc = trainer::evaluate(tuned.checkpoint.params, ds48, kFinetuneRes, 1.0);

  trainer::RunOptions one_epoch;
  one_epoch.stop_after_epochs = 1;
  const auto scratch = trainer::train(ft, ds48, one_epoch);
  const double l_ft = tuned.epoch_mean_loss.front(), l_rand = scratch.epoch_mean_loss.front();
  out.push_back({"first_epoch_loss", std::isfinite(l_ft) && l_ft < l_rand,
                 fmt("finetune %.5f vs random init %.5f", l_ft, l_rand)});
  out.push_back({"accuracy_48", final_acc >= naive,
                 fmt("finetuned %.4f vs naive interpolation %.4f", final_acc, naive)});
  return out;
}

// ---------------------------------------------------------------------------
// C10: preset fidelity
// ---------------------------------------------------------------------------

std::vector<Check> preset_fidelity() {
  using Snapshot = std::vector<std::pair<std::string, std::string>>;
  const Snapshot in1k = {
      {"batch_size", "2048"},  {"optimizer", "lamb"},   {"lr", "0.003"},           {"lr_decay", "cosine"},
      {"weight_decay", "0.02"}, {"warmup_epochs", "5"}, {"label_smoothing", "0"},  {"dropout", "0"},
      {"repeated_aug", "true"}, {"grad_clip", "1"},     {"hflip", "true"},         {"crop_mode", "rrc"},
      {"three_augment", "true"}, {"layerscale", "true"}, {"layerscale_init", "0.0001"}, {"mixup_alpha", "0.8"},
      {"cutmix_alpha", "1"},    {"erasing", "0"},       {"color_jitter", "0.3"},   {"test_crop_ratio", "1"},
      {"loss", "bce"},          {"epochs", "400"}};
  auto patch = [](Snapshot s, const Snapshot& changes) {
    for (const auto& [k, v] : changes)
      for (auto& kv : s)
        if (kv.first == k) kv.second = v;
    return s;
  };
  const auto pre = patch(in1k, {{"crop_mode", "src"}, {"repeated_aug", "false"}, {"mixup_alpha", "0"},
                                {"label_smoothing", "0.1"}, {"loss", "ce"}, {"epochs", "90"}});
  const std::vector<std::pair<std::string, Snapshot>> expected = {
      {"in1k", in1k},
      {"in21k_pretrain", pre},
      {"in21k_finetune", patch(pre, {{"lr", "0.0003"}, {"epochs", "50"}})},
      {"fixres_finetune", patch(in1k, {{"lr", "1e-05"}, {"batch_size", "512"}, {"epochs", "20"},
                                       {"weight_decay", "0.1"}, {"repeated_aug", "false"}, {"warmup_epochs", "0"}})},
  };
  std::vector<Check> out;
  for (const auto& [name, snap] : expected) {
    const auto c = recipe::preset(name);
    std::size_t bad = 0;
    std::string first;
    for (const auto& [k, v] : snap) {
      if (recipe::get(c, k) != v) {
        if (!bad++) first = k + "=" + recipe::get(c, k) + " (expected " + v + ")";
      }
    }
    const bool clean = c.coupling_violations().empty();
    out.push_back({"preset." + name, bad == 0 && clean,
                   fmt("%zu keys, %zu mismatched%s%s", snap.size(), bad, bad ? ": " : "", first.c_str()) +
                       (clean ? "" : ", coupling violation")});
  }
  out.push_back({"scale_disclaimer", true,
                 "full-scale ImageNet accuracies are outside desk scale and are not asserted"});
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  Report report;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      only.insert(std::atoi(argv[++i]));
    } else if (!std::strcmp(argv[i], "--known-deviation") && i + 1 < argc) {
      report.known.insert(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--only N]... [--known-deviation ID]...\n", argv[0]);
      return 2;
    }
  }
  ToyRuns runs;
  const std::vector<std::pair<const char*, std::function<std::vector<Check>()>>> criteria = {
      {"model-shape oracle (params, FLOPs)", model_shapes},
      {"token counts 160 vs 224", token_counts},
      {"gradient suite (tiny ViT, f64, BCE and smoothed CE)", gradients},
      {"optimizer oracle (AdamW, trust-ratio norm)", optimizer},
      {"schedule endpoints", schedule_endpoints},
      {"augmentation statistics", augmentation_statistics},
      {"augmentation oracles (blur, cutmix, SRC)", augmentation_oracles},
      {"end-to-end toy training", [&] { return toy_training(runs); }},
      {"low-resolution pretrain, higher-resolution finetune", [&] { return fixres_pipeline(runs); }},
      {"preset fidelity and scale disclaimer", preset_fidelity},
  };
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(number)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<Check> checks;
    try {
      checks = criteria[i].second();
    } catch (const std::exception& e) {
      checks.push_back({"exception", false, e.what()});
    }
    report.emit(number, criteria[i].first, checks,
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return report.blocking_failure ? 1 : 0;
}
