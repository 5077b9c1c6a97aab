// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vitrain/binary_io.hpp"
#include "vitrain/errors.hpp"
#include "vitrain/model.hpp"
#include "vitrain/optim.hpp"

namespace vitrain::checkpoint {

inline constexpr std::string_view kMagic = "VITCKPT1";

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// Strict full-string parse; nullopt on any leftover characters.
inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return std::nullopt;
  return v;
}

using Meta = std::map<std::string, std::string>;

struct Checkpoint {
  model::ViTParams<float> params;
  std::optional<optim::LambState<float>> optimizer;
  Meta meta;  // free-form keys stored alongside the model config
};

namespace detail {

inline const char* kConfigKeys[] = {"patch_size", "embed_dim",  "depth",           "num_heads",  "mlp_ratio",
                                    "num_classes", "drop_path_rate", "layerscale", "layerscale_init", "image_size"};

inline Meta config_to_meta(const model::ViTConfig& c) {
  return {{"patch_size", std::to_string(c.patch_size)},
          {"embed_dim", std::to_string(c.embed_dim)},
          {"depth", std::to_string(c.depth)},
          {"num_heads", std::to_string(c.num_heads)},
          {"mlp_ratio", format_double(c.mlp_ratio)},
          {"num_classes", std::to_string(c.num_classes)},
          {"drop_path_rate", format_double(c.drop_path_rate)},
          {"layerscale", c.layerscale ? "1" : "0"},
          {"layerscale_init", format_double(c.layerscale_init)},
          {"image_size", std::to_string(c.image_size)}};
}

inline model::ViTConfig meta_to_config(const Meta& m) {
  auto get = [&](const char* k) -> const std::string& {
    auto it = m.find(k);
    if (it == m.end()) throw FormatError(std::string("checkpoint: config key '") + k + "' missing");
    return it->second;
  };
  auto as_size = [&](const char* k) {
    try {
      return static_cast<std::size_t>(std::stoull(get(k)));
    } catch (const std::logic_error&) {
      throw FormatError(std::string("checkpoint: bad integer for '") + k + "'");
    }
  };
  auto as_double = [&](const char* k) {
    const auto v = parse_double(get(k));
    if (!v) throw FormatError(std::string("checkpoint: bad number for '") + k + "'");
    return *v;
  };
  model::ViTConfig c;
  c.patch_size = as_size("patch_size");
  c.embed_dim = as_size("embed_dim");
  c.depth = as_size("depth");
  c.num_heads = as_size("num_heads");
  c.mlp_ratio = as_double("mlp_ratio");
  c.num_classes = as_size("num_classes");
  c.drop_path_rate = as_double("drop_path_rate");
  c.layerscale = get("layerscale") == "1";
  c.layerscale_init = as_double("layerscale_init");
  c.image_size = as_size("image_size");
  try {
    c.validate();
  } catch (const ParameterError& e) {
    throw FormatError(std::string("checkpoint: invalid model config: ") + e.what());
  }
  return c;
}

inline void put_tensor(io::Writer& w, const std::string& name, const numerics::Shape& shape, std::span<const float> v) {
  w.uint(static_cast<std::uint64_t>(name.size()));
  w.bytes(name);
  w.uint(static_cast<std::uint64_t>(shape.size()));
  for (auto e : shape) w.uint(static_cast<std::uint64_t>(e));
  for (float x : v) w.f32(x);
}

struct RawTensor {
  numerics::Shape shape;
  std::vector<float> values;
};

}  // namespace detail

/// magic, u64 config length, "key=value\n" config text, u64 tensor count, then
/// per tensor: u64 name length, name, u64 rank, u64 extents, f32 values.
/// Optimizer moments are stored as "opt.m.<name>" and "opt.v.<name>".
inline std::vector<char> encode(const Checkpoint& ck) {
  Meta meta = detail::config_to_meta(ck.params.config);
  for (const auto& [k, v] : ck.meta) {
    if (meta.count(k)) throw ParameterError("checkpoint: meta key '" + k + "' shadows a config key");
    meta[k] = v;
  }
  const auto named = ck.params.named_parameters();
  if (ck.optimizer) {
    if (ck.optimizer->m.size() != named.size()) throw DimensionError("checkpoint: optimizer state does not match model");
    meta["opt_step"] = std::to_string(ck.optimizer->step);
  }
  std::string text;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ParameterError("checkpoint: meta entries may not contain '=' in keys or newlines");
    }
    text += k + "=" + v + "\n";
  }
  io::Writer w;
  w.bytes(kMagic);
  w.uint(static_cast<std::uint64_t>(text.size()));
  w.bytes(text);
  w.uint(static_cast<std::uint64_t>(named.size() * (ck.optimizer ? 3 : 1)));
  for (const auto& p : named) detail::put_tensor(w, p.name, p.tensor.shape(), p.tensor.data());
  if (ck.optimizer) {
    for (std::size_t i = 0; i < named.size(); ++i) {
      detail::put_tensor(w, "opt.m." + named[i].name, named[i].tensor.shape(), ck.optimizer->m[i]);
      detail::put_tensor(w, "opt.v." + named[i].name, named[i].tensor.shape(), ck.optimizer->v[i]);
    }
  }
  return w.buffer();
}

inline Checkpoint decode(const std::vector<char>& bytes, const std::string& what = "checkpoint") {
  io::Reader r(bytes, what);
  if (r.bytes(kMagic.size()) != kMagic) throw FormatError(what + ": bad magic");
  const auto text_len = r.uint<std::uint64_t>();
  if (text_len > r.remaining()) throw FormatError(what + ": truncated config block");
  Meta meta;
  std::istringstream text{std::string(r.bytes(text_len))};
  for (std::string line; std::getline(text, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(what + ": malformed config line '" + line + "'");
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = r.uint<std::uint64_t>();
  std::map<std::string, detail::RawTensor> tensors;
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto name_len = r.uint<std::uint64_t>();
    if (name_len > r.remaining()) throw FormatError(what + ": truncated tensor name");
    std::string name(r.bytes(name_len));
    const auto rank = r.uint<std::uint64_t>();
    if (rank > 8) throw FormatError(what + ": implausible rank for '" + name + "'");
    detail::RawTensor raw;
    std::uint64_t numel = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
      raw.shape.push_back(static_cast<std::size_t>(r.uint<std::uint64_t>()));
      numel *= raw.shape.back();
    }
    if (numel > r.remaining() / 4) throw FormatError(what + ": truncated values for '" + name + "'");
    raw.values.resize(numel);
    for (auto& v : raw.values) v = r.f32();
    if (!tensors.emplace(name, std::move(raw)).second) throw FormatError(what + ": duplicate tensor '" + name + "'");
  }
  if (r.remaining() != 0) throw FormatError(what + ": trailing bytes");

  Checkpoint ck;
  ck.params.config = detail::meta_to_config(meta);
  // Build the expected layout, then fill it by name.
  Rng unused(0);
  ck.params = model::init<float>(ck.params.config, unused);
  auto take = [&](const std::string& name, const numerics::Shape& shape) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError(what + ": tensor '" + name + "' missing");
    if (it->second.shape != shape) {
      throw FormatError(what + ": tensor '" + name + "' has shape " + numerics::shape_str(it->second.shape) +
                        ", expected " + numerics::shape_str(shape));
    }
    auto values = std::move(it->second.values);
    tensors.erase(it);
    return values;
  };
  const auto named = ck.params.named_parameters();
  auto slots = ck.params.named_parameters_mut();
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto t = numerics::Tensor<float>::from(named[i].tensor.shape(), take(named[i].name, named[i].tensor.shape()));
    t.set_requires_grad();
    *slots[i] = t;
  }
  if (auto it = meta.find("opt_step"); it != meta.end()) {
    optim::LambState<float> st;
    st.step = std::stoull(it->second);
    for (const auto& p : named) {
      st.m.push_back(take("opt.m." + p.name, p.tensor.shape()));
      st.v.push_back(take("opt.v." + p.name, p.tensor.shape()));
    }
    ck.optimizer = std::move(st);
    meta.erase(it);
  }
  if (!tensors.empty()) throw FormatError(what + ": unexpected tensor '" + tensors.begin()->first + "'");
  for (const char* k : detail::kConfigKeys) meta.erase(k);
  ck.meta = std::move(meta);
  return ck;
}

inline void save(const std::filesystem::path& path, const Checkpoint& ck) { io::write_file(path, encode(ck)); }
inline Checkpoint load(const std::filesystem::path& path) { return decode(io::read_file(path), path.string()); }

}  // namespace vitrain::checkpoint
