// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vitrain/binary_io.hpp"
#include "vitrain/errors.hpp"
#include "vitrain/image.hpp"
#include "vitrain/numerics/tensor.hpp"
#include "vitrain/rng.hpp"

namespace vitrain::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// IMG1
// ---------------------------------------------------------------------------

inline constexpr std::string_view kImageMagic = "IMG1";

inline std::vector<char> encode_image(const ImageU8& img) {
  img.validate();
  io::Writer w;
  w.bytes(kImageMagic);
  w.uint(static_cast<std::uint32_t>(img.width));
  w.uint(static_cast<std::uint32_t>(img.height));
  w.uint(static_cast<std::uint32_t>(ImageU8::kChannels));
  w.bytes(img.pixels.data(), img.pixels.size());
  return w.buffer();
}

inline ImageU8 decode_image(const std::vector<char>& bytes, const std::string& what = "IMG1") {
  io::Reader r(bytes, what);
  if (r.bytes(4) != kImageMagic) throw FormatError(what + ": bad magic");
  const auto w = r.uint<std::uint32_t>();
  const auto h = r.uint<std::uint32_t>();
  const auto c = r.uint<std::uint32_t>();
  if (c != ImageU8::kChannels) throw FormatError(what + ": unsupported channel count " + std::to_string(c));
  if (w == 0 || h == 0) throw FormatError(what + ": zero extent");
  const std::size_t n = std::size_t{w} * h * c;
  const auto payload = r.bytes(n);
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes after payload");
  return ImageU8(w, h, std::vector<std::uint8_t>(payload.begin(), payload.end()));
}

inline ImageU8 load_image(const fs::path& path) { return decode_image(io::read_file(path), path.string()); }
inline void save_image(const fs::path& path, const ImageU8& img) { io::write_file(path, encode_image(img)); }

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  std::size_t label = 0;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  fs::path root;
  std::vector<ManifestEntry> entries;
  std::size_t num_classes = 0;

  void validate() const {
    if (num_classes == 0) throw FormatError("manifest: classes must be >= 1");
    for (const auto& e : entries) {
      if (e.label >= num_classes) {
        throw FormatError("manifest: label " + std::to_string(e.label) + " of '" + e.path + "' is >= classes " +
                          std::to_string(num_classes));
      }
    }
  }
  std::size_t size() const { return entries.size(); }
};

namespace detail {
inline std::size_t parse_index(std::string_view s, const std::string& where) {
  std::size_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw FormatError(where + ": not a non-negative integer '" + std::string(s) + "'");
  return v;
}
}  // namespace detail

/// Text format: "classes\tK" then one "relative/path\tlabel" per line.
inline DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest '" + path.string() + "'");
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError(where + ": expected a tab-separated pair");
    const std::string_view key(line.data(), tab), value(line.data() + tab + 1, line.size() - tab - 1);
    if (!header) {
      if (key != "classes") throw FormatError(where + ": first line must be 'classes<TAB>K'");
      m.num_classes = detail::parse_index(value, where);
      header = true;
      continue;
    }
    m.entries.push_back({std::string(key), detail::parse_index(value, where)});
  }
  if (!header) throw FormatError("manifest '" + path.string() + "' is empty");
  m.validate();
  return m;
}

inline void write_manifest(const fs::path& path, const DatasetManifest& m) {
  m.validate();
  std::ostringstream out;
  out << "classes\t" << m.num_classes << "\n";
  for (const auto& e : m.entries) out << e.path << "\t" << e.label << "\n";
  const std::string s = out.str();
  io::write_file(path, std::vector<char>(s.begin(), s.end()));
}

/// Manifest plus decoded images, index-aligned.
struct Dataset {
  DatasetManifest manifest;
  std::vector<ImageU8> images;

  std::size_t size() const { return images.size(); }
  std::size_t num_classes() const { return manifest.num_classes; }
};

inline Dataset load_dataset(const fs::path& manifest_path) {
  Dataset d;
  d.manifest = read_manifest(manifest_path);
  if (d.manifest.entries.empty()) throw FormatError("manifest '" + manifest_path.string() + "' has no entries");
  d.images.reserve(d.manifest.size());
  for (const auto& e : d.manifest.entries) d.images.push_back(load_image(d.manifest.root / e.path));
  return d;
}

// ---------------------------------------------------------------------------
// Seeding and sampling
// ---------------------------------------------------------------------------

inline constexpr std::uint64_t per_sample_seed(std::uint64_t global_seed, std::uint64_t epoch,
                                               std::uint64_t sample_index) noexcept {
  return combine_seed(combine_seed(global_seed, epoch), sample_index);
}

/// Independent stream for one repeat of a sample within a batch.
inline constexpr std::uint64_t repeat_seed(std::uint64_t sample_seed, std::uint64_t repeat) noexcept {
  return combine_seed(sample_seed, repeat);
}

inline constexpr std::uint64_t kShuffleStream = 0x5348'5546'464c'45ULL;

inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t global_seed, std::uint64_t epoch) {
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(combine_seed(combine_seed(global_seed, epoch), kShuffleStream));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return perm;
}

struct SamplerConfig {
  std::size_t batch_size = 64;
  std::size_t repeats = 1;  // 1 is plain sampling

  void validate() const {
    if (batch_size == 0) throw ParameterError("sampler: batch_size must be >= 1");
    if (repeats == 0) throw ParameterError("sampler: repeats must be >= 1");
  }
};

struct BatchItem {
  std::size_t index;
  std::size_t repeat;
  friend bool operator==(const BatchItem&, const BatchItem&) = default;
};

using Batch = std::vector<BatchItem>;

/// One epoch of batches. Each batch takes ceil(B/m) fresh samples from the
/// seeded permutation and repeats each m times, truncated to B. The final
/// batch may be short; the epoch ends when the permutation is exhausted.
inline std::vector<Batch> batches(std::size_t dataset_size, const SamplerConfig& sampler, std::uint64_t global_seed,
                                  std::uint64_t epoch) {
  sampler.validate();
  if (dataset_size == 0) throw ParameterError("batches: empty dataset");
  const auto perm = epoch_permutation(dataset_size, global_seed, epoch);
  const std::size_t distinct = (sampler.batch_size + sampler.repeats - 1) / sampler.repeats;
  std::vector<Batch> out;
  for (std::size_t start = 0; start < dataset_size; start += distinct) {
    const std::size_t end = std::min(dataset_size, start + distinct);
    Batch b;
    for (std::size_t i = start; i < end && b.size() < sampler.batch_size; ++i) {
      for (std::size_t r = 0; r < sampler.repeats && b.size() < sampler.batch_size; ++r) b.push_back({perm[i], r});
    }
    out.push_back(std::move(b));
  }
  return out;
}

inline std::size_t steps_per_epoch(std::size_t dataset_size, const SamplerConfig& sampler) {
  sampler.validate();
  const std::size_t distinct = (sampler.batch_size + sampler.repeats - 1) / sampler.repeats;
  return (dataset_size + distinct - 1) / distinct;
}

// ---------------------------------------------------------------------------
// Synthetic gratings
// ---------------------------------------------------------------------------

struct SynthSpec {
  std::size_t num_classes = 4;
  std::size_t samples_per_class = 64;
  std::size_t resolution = 32;
  std::uint64_t seed = 0;
  double amplitude = 90.0;  // grating peak deviation from 128, in byte units
  double noise = 40.0;      // uniform noise half-width, in byte units

  void validate() const {
    if (num_classes < 2) throw ParameterError("SynthSpec: need at least 2 classes");
    if (samples_per_class == 0 || resolution < 4) throw ParameterError("SynthSpec: empty dataset or resolution < 4");
    if (!(amplitude >= 0.0 && noise >= 0.0)) throw ParameterError("SynthSpec: amplitude and noise must be >= 0");
  }

  std::size_t size() const { return num_classes * samples_per_class; }
  double angle(std::size_t c) const { return static_cast<double>(c) * std::numbers::pi / static_cast<double>(num_classes); }
  /// Full cycles across the image. Classes c and K-c swap under a horizontal
  /// flip, so they get different frequencies.
  double cycles(std::size_t c) const { return 2 * c < num_classes ? 3.0 : 6.0; }
};

/// Sample i has label i mod K. Pure function of (spec, i).
inline ImageU8 synth_image(const SynthSpec& spec, std::size_t index) {
  spec.validate();
  const std::size_t label = index % spec.num_classes;
  const std::size_t r = spec.resolution;
  const double th = spec.angle(label);
  const double k = 2.0 * std::numbers::pi * spec.cycles(label) / static_cast<double>(r);
  const double ct = std::cos(th), st = std::sin(th), half = 0.5 * static_cast<double>(r);
  Rng rng(per_sample_seed(spec.seed, 0, index));
  ImageU8 img(r, r);
  for (std::size_t y = 0; y < r; ++y) {
    for (std::size_t x = 0; x < r; ++x) {
      const double u = (static_cast<double>(x) + 0.5 - half) * ct + (static_cast<double>(y) + 0.5 - half) * st;
      const double base = 128.0 + spec.amplitude * std::sin(k * u);
      for (std::size_t c = 0; c < ImageU8::kChannels; ++c) {
        const double n = spec.noise > 0.0 ? rng.uniform(-spec.noise, spec.noise) : 0.0;
        img.at(x, y, c) = to_byte(base + n);
      }
    }
  }
  return img;
}

inline Dataset synth_dataset(const SynthSpec& spec) {
  spec.validate();
  Dataset d;
  d.manifest.num_classes = spec.num_classes;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    d.images.push_back(synth_image(spec, i));
    d.manifest.entries.push_back({"img_" + std::to_string(i) + ".img1", i % spec.num_classes});
  }
  return d;
}

/// Writes images and "manifest.tsv" under `dir`; returns the manifest path.
inline fs::path write_dataset(const fs::path& dir, const Dataset& d) {
  for (std::size_t i = 0; i < d.size(); ++i) save_image(dir / d.manifest.entries[i].path, d.images[i]);
  const auto path = dir / "manifest.tsv";
  write_manifest(path, d.manifest);
  return path;
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

inline constexpr std::array<double, 3> kMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kStd{0.229, 0.224, 0.225};

/// Writes planar [3, H, W] standardized values into `out`.
template <std::floating_point T>
void normalize_into(const ImageU8& img, std::span<T> out) {
  const std::size_t plane = img.width * img.height;
  if (out.size() != 3 * plane) throw DimensionError("normalize_into: output span has wrong size");
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = kMean[c], inv = 1.0 / kStd[c];
    for (std::size_t i = 0; i < plane; ++i) {
      out[c * plane + i] = static_cast<T>((img.pixels[i * 3 + c] / 255.0 - mean) * inv);
    }
  }
}

template <std::floating_point T = float>
numerics::Tensor<T> normalize(const ImageU8& img) {
  std::vector<T> v(3 * img.width * img.height);
  normalize_into<T>(img, v);
  return numerics::Tensor<T>::from({3, img.height, img.width}, std::move(v));
}

/// Inverse of normalize for a [3, H, W] tensor, rounded to bytes.
template <std::floating_point T>
ImageU8 denormalize(const numerics::Tensor<T>& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw DimensionError("denormalize: expected [3, H, W]");
  const std::size_t h = t.dim(1), w = t.dim(2), plane = h * w;
  ImageU8 img(w, h);
  const auto v = t.data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane; ++i) img.pixels[i * 3 + c] = to_byte((v[c * plane + i] * kStd[c] + kMean[c]) * 255.0);
  }
  return img;
}

}  // namespace vitrain::data
