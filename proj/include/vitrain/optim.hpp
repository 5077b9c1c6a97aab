// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vitrain/errors.hpp"
#include "vitrain/numerics/tensor.hpp"

namespace vitrain::optim {

using numerics::Node;
using numerics::Tensor;

namespace detail {

template <std::floating_point T>
void check_loss_shapes(const char* op, const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.rank() != 2 || targets.shape() != logits.shape()) {
    throw DimensionError(std::string(op) + ": expected matching [B, K] logits and targets, got " +
                         numerics::shape_str(logits.shape()) + " and " + numerics::shape_str(targets.shape()));
  }
}

}  // namespace detail

/// Mean over all B*K entries of the stable binary cross-entropy
/// max(z, 0) - z*t + log1p(exp(-|z|)). Targets are constants.
template <std::floating_point T>
Tensor<T> bce_loss(const Tensor<T>& logits, const Tensor<T>& targets) {
  detail::check_loss_shapes("bce_loss", logits, targets);
  const auto z = logits.data();
  const auto t = targets.data();
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!(t[i] >= T(0) && t[i] <= T(1))) throw ContractError("bce_loss: target outside [0, 1]");
    const double zi = z[i];
    total += std::max(zi, 0.0) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
  }
  const double n = static_cast<double>(z.size());
  std::vector<T> tv(t.begin(), t.end());
  return numerics::make_result<T>("bce_loss", {}, {static_cast<T>(total / n)}, {logits},
                                  [tv = std::move(tv), n](Node<T>& self) {
                                    auto& in = *self.parents[0];
                                    auto& g = in.ensure_grad();
                                    const double up = self.grad[0] / n;
                                    for (std::size_t i = 0; i < g.size(); ++i) {
                                      const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(in.data[i])));
                                      g[i] += static_cast<T>(up * (s - tv[i]));
                                    }
                                  });
}

/// Mean over rows of -sum(t' * log_softmax(z)) with t' = (1 - eps) t + eps / K.
template <std::floating_point T>
Tensor<T> ce_smoothed_loss(const Tensor<T>& logits, const Tensor<T>& targets, double epsilon) {
  detail::check_loss_shapes("ce_smoothed_loss", logits, targets);
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ContractError("ce_smoothed_loss: epsilon must be in [0, 1)");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  const auto z = logits.data();
  const auto t = targets.data();
  std::vector<double> smoothed(b * k), probs(b * k), row_mass(b);
  double total = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    const std::size_t o = r * k;
    double mx = z[o];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(z[o + j]));
    double se = 0.0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(z[o + j] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t j = 0; j < k; ++j) {
      const double ts = (1.0 - epsilon) * t[o + j] + epsilon / static_cast<double>(k);
      smoothed[o + j] = ts;
      row_mass[r] += ts;
      probs[o + j] = std::exp(z[o + j] - lse);
      total -= ts * (z[o + j] - lse);
    }
  }
  const double nb = static_cast<double>(b);
  return numerics::make_result<T>(
      "ce_smoothed_loss", {}, {static_cast<T>(total / nb)}, {logits},
      [smoothed = std::move(smoothed), probs = std::move(probs), row_mass = std::move(row_mass), k, nb](Node<T>& self) {
        auto& g = self.parents[0]->ensure_grad();
        const double up = self.grad[0] / nb;
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += static_cast<T>(up * (probs[i] * row_mass[i / k] - smoothed[i]));
        }
      });
}

/// Scales every gradient by max_norm / ||g|| when the global norm exceeds
/// max_norm. Returns the pre-clip global norm.
template <std::floating_point T>
double grad_clip_global_norm(const std::vector<std::span<T>>& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ParameterError("grad_clip_global_norm: max_norm must be positive");
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& g : grads)
      for (T& v : g) v = static_cast<T>(v * s);
  }
  return norm;
}

struct LambConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
};

template <std::floating_point T>
struct LambState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;
  LambConfig config;
};

/// One parameter tensor. `adapt` false pins the trust ratio to 1.
template <std::floating_point T>
struct LambGroup {
  std::span<T> weight;
  std::span<const T> grad;
  double weight_decay = 0.0;
  bool adapt = true;
};

/// In-place LAMB update. Rejects the whole step if any gradient is non-finite.
template <std::floating_point T>
void lamb_step(std::span<const LambGroup<T>> groups, LambState<T>& state, double lr) {
  if (!(lr >= 0.0)) throw ParameterError("lamb_step: lr must be >= 0");
  if (state.m.empty() && state.step == 0) {
    for (const auto& g : groups) {
      state.m.emplace_back(g.weight.size(), T(0));
      state.v.emplace_back(g.weight.size(), T(0));
    }
  }
  if (state.m.size() != groups.size() || state.v.size() != groups.size()) {
    throw DimensionError("lamb_step: state holds " + std::to_string(state.m.size()) + " tensors, got " +
                         std::to_string(groups.size()));
  }
  for (std::size_t p = 0; p < groups.size(); ++p) {
    const auto& g = groups[p];
    if (g.grad.size() != g.weight.size() || state.m[p].size() != g.weight.size() ||
        state.v[p].size() != g.weight.size()) {
      throw DimensionError("lamb_step: size mismatch in tensor " + std::to_string(p));
    }
    for (T x : g.grad) {
      if (!std::isfinite(x)) throw NumericError("lamb_step: non-finite gradient in tensor " + std::to_string(p));
    }
  }
  const auto& c = state.config;
  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  std::vector<double> u;
  for (std::size_t p = 0; p < groups.size(); ++p) {
    const auto& g = groups[p];
    auto& m = state.m[p];
    auto& v = state.v[p];
    u.resize(g.weight.size());
    double wn = 0.0, un = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double gi = g.grad[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double w = g.weight[i];
      u[i] = (mi / bc1) / (std::sqrt(vi / bc2) + c.eps) + g.weight_decay * w;
      wn += w * w;
      un += u[i] * u[i];
    }
    wn = std::sqrt(wn);
    un = std::sqrt(un);
    const double phi = (g.adapt && wn > 0.0 && un > 0.0) ? wn / un : 1.0;
    for (std::size_t i = 0; i < u.size(); ++i) g.weight[i] = static_cast<T>(g.weight[i] - lr * phi * u[i]);
  }
  state.step = t;
}

/// Uniform weight decay, trust ratio on every tensor.
template <std::floating_point T>
void lamb_step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
               LambState<T>& state, double lr, double weight_decay) {
  if (params.size() != grads.size()) throw DimensionError("lamb_step: params and grads differ in count");
  std::vector<LambGroup<T>> groups;
  for (std::size_t i = 0; i < params.size(); ++i) groups.push_back({params[i], grads[i], weight_decay, true});
  lamb_step<T>(groups, state, lr);
}

struct ScheduleConfig {
  double base_lr = 3e-3;
  double min_lr = 1e-6;
  std::size_t warmup_epochs = 5;
  std::size_t total_epochs = 400;
  std::size_t steps_per_epoch = 1;
  double warmup_start_lr = 1e-6;

  std::size_t total_steps() const { return total_epochs * steps_per_epoch; }
  std::size_t warmup_steps() const { return warmup_epochs * steps_per_epoch; }

  void validate() const {
    if (total_epochs == 0 || steps_per_epoch == 0) throw ParameterError("ScheduleConfig: empty schedule");
    if (warmup_epochs >= total_epochs) throw ParameterError("ScheduleConfig: warmup_epochs must be < total_epochs");
    if (!(min_lr >= 0.0 && min_lr <= base_lr)) throw ParameterError("ScheduleConfig: need 0 <= min_lr <= base_lr");
    if (!(warmup_start_lr >= 0.0)) throw ParameterError("ScheduleConfig: warmup_start_lr must be >= 0");
  }
};

/// Linear warmup over [0, W), then cosine from base_lr at step W to min_lr at
/// the final step.
inline double cosine_lr(const ScheduleConfig& s, std::size_t step) {
  s.validate();
  const std::size_t total = s.total_steps(), warm = s.warmup_steps();
  if (step >= total) {
    throw ParameterError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + ")");
  }
  if (step < warm) {
    return s.warmup_start_lr + (s.base_lr - s.warmup_start_lr) * static_cast<double>(step) / static_cast<double>(warm);
  }
  const std::size_t span = total - warm - 1;
  const double progress = span == 0 ? 0.0 : static_cast<double>(step - warm) / static_cast<double>(span);
  const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return c * s.base_lr + (1.0 - c) * s.min_lr;
}

struct RegularizationSchedule {
  double base_drop_path = 0.0;
  double base_weight_decay = 0.02;
  std::size_t reference_epochs = 400;
};

struct Regularization {
  double drop_path;
  double weight_decay;
};

/// Beyond the reference length: +0.05 drop-path per full 200 extra epochs and
/// weight decay 0.05.
inline Regularization scale_regularization(const RegularizationSchedule& base, std::size_t epochs) {
  if (epochs < 1) throw ParameterError("scale_regularization: epochs must be >= 1");
  Regularization r{base.base_drop_path, base.base_weight_decay};
  if (epochs > base.reference_epochs) {
    r.drop_path += 0.05 * static_cast<double>((epochs - base.reference_epochs) / 200);
    r.weight_decay = 0.05;
  }
  if (!(r.drop_path < 1.0)) {
    throw ParameterError("scale_regularization: drop rate " + std::to_string(r.drop_path) + " is >= 1");
  }
  return r;
}

}  // namespace vitrain::optim
