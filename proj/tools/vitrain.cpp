// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "vitrain/trainer.hpp"

namespace fs = std::filesystem;
namespace rc = vitrain::recipe;
namespace tr = vitrain::trainer;

namespace {

struct Common {
  std::string config;
  std::string preset;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, Common& c, const std::string& default_preset) {
  c.preset = default_preset;
  sub->add_option("--config", c.config, "Recipe file of 'key = value' lines")->check(CLI::ExistingFile);
  sub->add_option("--preset", c.preset, "Base preset")->capture_default_str();
  sub->add_option("--data", c.data, "Dataset manifest (TSV)");
  sub->add_option("--out", c.out, "Output directory or file");
  sub->add_option("--seed", c.seed, "Run seed");
  sub->add_option("--override", c.overrides, "key=value, applied after --config (repeatable)");
}

/// preset, then config file, then overrides, then --seed.
rc::RecipeConfig resolve(const Common& c) {
  auto cfg = rc::preset(c.preset);
  if (!c.config.empty()) rc::apply_file(cfg, c.config);
  for (const auto& o : c.overrides) rc::apply_override(cfg, o);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  for (const auto& w : cfg.coupling_violations()) std::cerr << "warning: " << w << "\n";
  return cfg;
}

std::vector<std::string> recorded_overrides(const Common& c) {
  std::vector<std::string> out;
  out.push_back("preset=" + c.preset);
  if (!c.config.empty()) out.push_back("config=" + c.config);
  for (const auto& o : c.overrides) out.push_back(o);
  if (c.seed) out.push_back("seed=" + std::to_string(*c.seed));
  return out;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw vitrain::ParameterError(std::string(flag) + " is required");
}

void report(const tr::TrainResult& r, const std::string& out) {
  std::printf("train_acc %.6f\n", r.train_acc);
  if (r.val_acc) std::printf("val_acc %.6f\n", *r.val_acc);
  std::printf("checkpoint %s\n", (fs::path(out) / "checkpoint.vitckpt").c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Supervised ViT training recipe at desk scale"};
  app.require_subcommand(1);

  Common train_opts, finetune_opts, eval_opts, preview_opts, sched_opts, flops_opts;
  std::string val_path, checkpoint_path;
  std::optional<double> crop_ratio;
  std::size_t preview_count = 16;
  std::string flops_model;
  std::optional<std::size_t> flops_resolution;
  vitrain::data::SynthSpec synth;
  std::string synth_out;

  auto* train = app.add_subcommand("train", "Train from scratch");
  add_common(train, train_opts, "in1k");
  train->add_option("--val", val_path, "Validation manifest");

  auto* finetune = app.add_subcommand("finetune", "Finetune a checkpoint at train_resolution");
  add_common(finetune, finetune_opts, "fixres_finetune");
  finetune->add_option("--checkpoint", checkpoint_path, "Checkpoint to start from")->required();
  finetune->add_option("--val", val_path, "Validation manifest");

  auto* eval = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint");
  add_common(eval, eval_opts, "in1k");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint to evaluate")->required();
  eval->add_option("--crop-ratio", crop_ratio, "Center-crop ratio in (0, 1]");

  auto* preview = app.add_subcommand("augment-preview", "Write augmented samples as IMG1 files");
  add_common(preview, preview_opts, "in1k");
  preview->add_option("--count", preview_count, "Number of samples")->capture_default_str();

  auto* sched = app.add_subcommand("schedule-dump", "CSV of step, lr, drop_path, weight_decay");
  add_common(sched, sched_opts, "in1k");

  auto* flops = app.add_subcommand("flops", "Parameter and FLOP counts");
  add_common(flops, flops_opts, "in1k");
  flops->add_option("--model", flops_model, "Model preset (overrides the recipe's model)");
  flops->add_option("--resolution", flops_resolution, "Input resolution (default: train_resolution)");

  auto* make_synth = app.add_subcommand("make-synth", "Write the synthetic grating dataset");
  make_synth->add_option("--out", synth_out, "Output directory")->required();
  make_synth->add_option("--classes", synth.num_classes)->capture_default_str();
  make_synth->add_option("--per-class", synth.samples_per_class)->capture_default_str();
  make_synth->add_option("--resolution", synth.resolution)->capture_default_str();
  make_synth->add_option("--seed", synth.seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto cfg = resolve(train_opts);
      require(train_opts.data, "--data");
      require(train_opts.out, "--out");
      const auto ds = vitrain::data::load_dataset(train_opts.data);
      std::optional<vitrain::data::Dataset> val;
      if (!val_path.empty()) val = vitrain::data::load_dataset(val_path);
      tr::RunOptions opts;
      opts.out_dir = train_opts.out;
      opts.val = val ? &*val : nullptr;
      opts.log = &std::cerr;
      opts.overrides = recorded_overrides(train_opts);
      report(tr::train(cfg, ds, opts), train_opts.out);
    } else if (*finetune) {
      const auto cfg = resolve(finetune_opts);
      require(finetune_opts.data, "--data");
      require(finetune_opts.out, "--out");
      const auto ck = vitrain::checkpoint::load(checkpoint_path);
      const auto ds = vitrain::data::load_dataset(finetune_opts.data);
      std::optional<vitrain::data::Dataset> val;
      if (!val_path.empty()) val = vitrain::data::load_dataset(val_path);
      tr::RunOptions opts;
      opts.out_dir = finetune_opts.out;
      opts.val = val ? &*val : nullptr;
      opts.log = &std::cerr;
      opts.overrides = recorded_overrides(finetune_opts);
      opts.overrides.push_back("checkpoint=" + checkpoint_path);
      report(tr::finetune(ck, cfg, ds, opts), finetune_opts.out);
    } else if (*eval) {
      require(eval_opts.data, "--data");
      const auto ck = vitrain::checkpoint::load(checkpoint_path);
      const auto ds = vitrain::data::load_dataset(eval_opts.data);
      // Resolution and crop ratio default to the checkpoint's own values.
      auto cfg = resolve(eval_opts);
      std::size_t resolution = ck.params.config.image_size;
      if (cfg.eval_resolution) resolution = cfg.eval_resolution;
      double ratio = crop_ratio.value_or(cfg.test_crop_ratio);
      if (!crop_ratio) {
        if (auto it = ck.meta.find("recipe.test_crop_ratio"); it != ck.meta.end()) {
          if (auto v = vitrain::checkpoint::parse_double(it->second)) ratio = *v;
        }
      }
      if (!(ratio > 0.0 && ratio <= 1.0)) throw vitrain::ParameterError("--crop-ratio must be in (0, 1]");
      const double acc = tr::evaluate(ck.params, ds, resolution, ratio);
      std::printf("resolution %zu\ncrop_ratio %s\ntop1 %.6f\n", resolution,
                  vitrain::checkpoint::format_double(ratio).c_str(), acc);
    } else if (*preview) {
      const auto cfg = resolve(preview_opts);
      require(preview_opts.data, "--data");
      require(preview_opts.out, "--out");
      const auto ds = vitrain::data::load_dataset(preview_opts.data);
      for (const auto& item : tr::augment_preview(ds, cfg, preview_count, fs::path(preview_opts.out))) {
        std::printf("%s\n", item.path.c_str());
      }
    } else if (*sched) {
      const auto cfg = resolve(sched_opts);
      std::size_t n = cfg.dataset_size;
      if (!sched_opts.data.empty()) n = vitrain::data::read_manifest(sched_opts.data).entries.size();
      const std::size_t spe = tr::schedule_steps_per_epoch(cfg, n);
      if (sched_opts.out.empty()) {
        tr::schedule_dump(cfg, spe, std::cout);
      } else {
        if (const auto parent = fs::path(sched_opts.out).parent_path(); !parent.empty()) fs::create_directories(parent);
        std::ofstream f(sched_opts.out);
        if (!f) throw vitrain::FormatError("cannot write '" + sched_opts.out + "'");
        tr::schedule_dump(cfg, spe, f);
      }
    } else if (*flops) {
      auto cfg = resolve(flops_opts);
      if (!flops_model.empty()) {
        cfg.model = flops_model;
        cfg.embed_dim = cfg.depth = cfg.num_heads = cfg.patch_size = 0;
      }
      const auto mc = rc::model_config(cfg, 1000);
      const std::size_t res = flops_resolution.value_or(cfg.train_resolution);
      if (res % mc.patch_size != 0) {
        throw vitrain::ParameterError("resolution " + std::to_string(res) + " is not divisible by patch size " +
                                      std::to_string(mc.patch_size));
      }
      std::printf("model %s\n%s", cfg.model.c_str(), tr::flops_report(mc, res).c_str());
    } else if (*make_synth) {
      const auto path = vitrain::data::write_dataset(synth_out, vitrain::data::synth_dataset(synth));
      std::printf("%s\n", path.c_str());
    }
  } catch (const vitrain::ParameterError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const vitrain::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const vitrain::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
