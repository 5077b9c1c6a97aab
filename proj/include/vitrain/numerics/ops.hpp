// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "vitrain/errors.hpp"
#include "vitrain/numerics/kernels.hpp"
#include "vitrain/numerics/tensor.hpp"

// Differentiable ops. Broadcasting is limited to expanding a rank-1 tensor
// along the trailing axis (add_trailing / mul_trailing); everything else
// requires equal shapes.

namespace vitrain::numerics {

namespace detail {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_trailing(const char* op, const Tensor<T>& a, const Tensor<T>& v) {
  if (a.rank() == 0 || v.rank() != 1 || v.dim(0) != a.shape().back()) {
    throw DimensionError(std::string(op) + ": expected rank-1 of extent " +
                         (a.rank() ? std::to_string(a.shape().back()) : std::string("?")) +
                         ", got " + shape_str(v.shape()));
  }
}

}  // namespace detail

template <std::floating_point T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const T sign[2] = {T(1), T(-1)};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign[k] * self.grad[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(a.numel());
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    // Read both inputs before writing: a and b may be the same node.
    std::vector<T> ga, gb;
    if (pa->requires_grad) {
      ga.resize(self.grad.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      gb.resize(self.grad.size());
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = self.grad[i] * pa->data[i];
    }
    if (!ga.empty()) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += ga[i];
    }
    if (!gb.empty()) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gb[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return make_result<T>("scale", a.shape(), std::move(out), {a}, [s](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

/// a[..., d] + v[d]
template <std::floating_point T>
Tensor<T> add_trailing(const Tensor<T>& a, const Tensor<T>& v) {
  detail::require_trailing("add_trailing", a, v);
  const std::size_t d = v.dim(0);
  std::vector<T> out(a.data().begin(), a.data().end());
  auto vv = v.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vv[i % d];
  return make_result<T>("add_trailing", a.shape(), std::move(out), {a, v}, [d](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pv = self.parents[1];
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pv->requires_grad) {
      auto& g = pv->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); i += d) {
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i + j];
      }
    }
  });
}

/// a[..., d] * v[d]
template <std::floating_point T>
Tensor<T> mul_trailing(const Tensor<T>& a, const Tensor<T>& v) {
  detail::require_trailing("mul_trailing", a, v);
  const std::size_t d = v.dim(0);
  std::vector<T> out(a.data().begin(), a.data().end());
  auto vv = v.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= vv[i % d];
  return make_result<T>("mul_trailing", a.shape(), std::move(out), {a, v}, [d](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pv = self.parents[1];
    std::vector<T> gv;
    if (pv->requires_grad) {
      gv.assign(d, T(0));
      for (std::size_t i = 0; i < self.grad.size(); i += d) {
        for (std::size_t j = 0; j < d; ++j) gv[j] += self.grad[i + j] * pa->data[i + j];
      }
    }
    if (pa->requires_grad) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pv->data[i % d];
    }
    if (!gv.empty()) {
      auto& g = pv->ensure_grad();
      for (std::size_t j = 0; j < d; ++j) g[j] += gv[j];
    }
  });
}

/// [m x k] * [k x n], or batched [b x m x k] * [b x k x n].
template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3))) {
    throw DimensionError("matmul: expected rank 2x2 or 3x3, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb || (batched && b.dim(0) != batch)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(batch * m * n, T(0));
  for (std::size_t s = 0; s < batch; ++s) {
    kernels::gemm_nn(m, n, k, a.data().data() + s * m * k, b.data().data() + s * k * n,
                     out.data() + s * m * n);
  }
  Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return make_result<T>("matmul", std::move(shape), std::move(out), {a, b},
                        [batch, m, n, k](Node<T>& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    std::vector<T> ga, gb;
    if (pa->requires_grad) {
      ga.assign(batch * m * k, T(0));
      for (std::size_t s = 0; s < batch; ++s) {
        kernels::gemm_nt(m, k, n, self.grad.data() + s * m * n, pb->data.data() + s * k * n,
                         ga.data() + s * m * k);
      }
    }
    if (pb->requires_grad) {
      gb.assign(batch * k * n, T(0));
      for (std::size_t s = 0; s < batch; ++s) {
        kernels::gemm_tn(k, n, m, pa->data.data() + s * m * k, self.grad.data() + s * m * n,
                         gb.data() + s * k * n);
      }
    }
    if (!ga.empty()) {
      auto& g = pa->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += ga[i];
    }
    if (!gb.empty()) {
      auto& g = pb->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gb[i];
    }
  });
}

template <std::floating_point T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> st(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
  return st;
}

// For each output flat index, the input flat index it reads.
inline std::vector<std::size_t> permute_map(const Shape& in_shape, const std::vector<std::size_t>& axes,
                                            Shape& out_shape) {
  const std::size_t r = in_shape.size();
  const auto in_st = strides_of(in_shape);
  out_shape.resize(r);
  std::vector<std::size_t> st(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    st[i] = in_st[axes[i]];
  }
  const std::size_t total = shape_numel(in_shape);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < total; ++o) {
    map[o] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        src += st[ax];
        break;
      }
      src -= st[ax] * (out_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  return map;
}

}  // namespace detail

/// Reorders axes: output axis i is input axis axes[i].
template <std::floating_point T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
  if (axes.size() != a.rank()) throw DimensionError("permute: axis count mismatch");
  std::vector<bool> used(axes.size(), false);
  for (auto ax : axes) {
    if (ax >= axes.size() || used[ax]) throw DimensionError("permute: invalid axis list");
    used[ax] = true;
  }
  Shape out_shape;
  auto map = std::make_shared<std::vector<std::size_t>>(detail::permute_map(a.shape(), axes, out_shape));
  std::vector<T> out(a.numel());
  auto src = a.data();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = src[(*map)[o]];
  return make_result<T>("permute", std::move(out_shape), std::move(out), {a}, [map](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*map)[o]] += self.grad[o];
  });
}

/// Swaps the last two axes.
template <std::floating_point T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  if (a.rank() < 2) throw DimensionError("transpose_last2: rank < 2");
  std::vector<std::size_t> axes(a.rank());
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[a.rank() - 1], axes[a.rank() - 2]);
  return permute(a, axes);
}

/// x[..., index, ...] with `axis` removed.
template <std::floating_point T>
Tensor<T> select(const Tensor<T>& a, std::size_t axis, std::size_t index) {
  if (axis >= a.rank() || index >= a.dim(axis)) {
    throw DimensionError("select: axis/index out of range for " + shape_str(a.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t extent = a.dim(axis);
  Shape shape = a.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(outer * inner);
  auto src = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((o * extent + index) * inner), inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * inner));
  }
  return make_result<T>("select", std::move(shape), std::move(out), {a},
                        [outer, inner, extent, index](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < inner; ++j) g[(o * extent + index) * inner + j] += self.grad[o * inner + j];
    }
  });
}

/// x[B, N, D] with token[D] inserted at position 0 of every sample -> [B, N+1, D].
template <std::floating_point T>
Tensor<T> prepend_token(const Tensor<T>& x, const Tensor<T>& token) {
  if (x.rank() != 3 || token.rank() != 1 || token.dim(0) != x.dim(2)) {
    throw DimensionError("prepend_token: expected [B,N,D] and [D], got " + shape_str(x.shape()) +
                         " and " + shape_str(token.shape()));
  }
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  std::vector<T> out(b * (n + 1) * d);
  auto xs = x.data(), ts = token.data();
  for (std::size_t s = 0; s < b; ++s) {
    T* dst = out.data() + s * (n + 1) * d;
    std::copy(ts.begin(), ts.end(), dst);
    std::copy_n(xs.begin() + static_cast<std::ptrdiff_t>(s * n * d), n * d, dst + d);
  }
  return make_result<T>("prepend_token", Shape{b, n + 1, d}, std::move(out), {x, token},
                        [b, n, d](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pt = self.parents[1];
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      for (std::size_t s = 0; s < b; ++s) {
        const T* src = self.grad.data() + s * (n + 1) * d + d;
        for (std::size_t j = 0; j < n * d; ++j) g[s * n * d + j] += src[j];
      }
    }
    if (pt->requires_grad) {
      auto& g = pt->ensure_grad();
      for (std::size_t s = 0; s < b; ++s) {
        const T* src = self.grad.data() + s * (n + 1) * d;
        for (std::size_t j = 0; j < d; ++j) g[j] += src[j];
      }
    }
  });
}

/// Multiplies every element of sample i (leading axis) by the constant factors[i].
template <std::floating_point T>
Tensor<T> scale_samples(const Tensor<T>& x, std::span<const T> factors) {
  if (x.rank() == 0 || factors.size() != x.dim(0)) {
    throw DimensionError("scale_samples: need one factor per leading index of " + shape_str(x.shape()));
  }
  const std::size_t per = x.numel() / x.dim(0);
  auto f = std::make_shared<std::vector<T>>(factors.begin(), factors.end());
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*f)[i / per];
  return make_result<T>("scale_samples", x.shape(), std::move(out), {x}, [f, per](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*f)[i / per];
  });
}

template <std::floating_point T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (const T v : a.data()) acc += v;
  return make_result<T>("sum", Shape{}, std::vector<T>{acc}, {a}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T s = self.grad[0];
    for (auto& v : g) v += s;
  });
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

/// Normalizes over the last axis, then applies gamma/beta.
template <std::floating_point T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("layernorm: empty last axis");
  detail::require_trailing("layernorm", x, gamma);
  detail::require_trailing("layernorm", x, beta);
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  auto xs = x.data(), gs = gamma.data(), bs = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xs.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gs[j] + bs[j];
    }
  }
  return make_result<T>("layernorm", x.shape(), std::move(out), {x, gamma, beta},
                        [xhat, rstd, d, rows](Node<T>& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    const auto& dy = self.grad;
    if (pg->requires_grad || pb->requires_grad) {
      std::vector<T> dg(d, T(0)), db(d, T(0));
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          dg[j] += dy[r * d + j] * (*xhat)[r * d + j];
          db[j] += dy[r * d + j];
        }
      }
      if (pg->requires_grad) {
        auto& g = pg->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) g[j] += dg[j];
      }
      if (pb->requires_grad) {
        auto& g = pb->ensure_grad();
        for (std::size_t j = 0; j < d; ++j) g[j] += db[j];
      }
    }
    if (px->requires_grad) {
      auto& g = px->ensure_grad();
      const auto& gamma_v = pg->data;
      std::vector<T> dxh(d);
      for (std::size_t r = 0; r < rows; ++r) {
        T m1 = T(0), m2 = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          dxh[j] = dy[r * d + j] * gamma_v[j];
          m1 += dxh[j];
          m2 += dxh[j] * (*xhat)[r * d + j];
        }
        m1 /= static_cast<T>(d);
        m2 /= static_cast<T>(d);
        const T rs = (*rstd)[r];
        for (std::size_t j = 0; j < d; ++j) {
          g[r * d + j] += rs * (dxh[j] - m1 - (*xhat)[r * d + j] * m2);
        }
      }
    }
  });
}

/// Softmax along `axis`, max-subtracted.
template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw DimensionError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  std::vector<T> out(x.numel());
  auto xs = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xs[base + j * inner]);
      T z = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(xs[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= z;
    }
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {x}, [outer, inner, n](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = self.data;
    const auto& dy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += dy[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += y[idx] * (dy[idx] - dot);
        }
      }
    }
  });
}

template <std::floating_point T>
Tensor<T> softmax(const Tensor<T>& x) {
  return softmax(x, x.rank() - 1);
}

/// Exact GELU, x * Phi(x).
template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  std::vector<T> out(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = T(0.5) * xs[i] * (T(1) + std::erf(xs[i] * kInvSqrt2));
  }
  return make_result<T>("gelu", x.shape(), std::move(out), {x}, [](Node<T>& self) {
    constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p->data[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
      const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

/// x[..., in] * w[in, out] + b[out]
template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2 || x.rank() == 0 || x.shape().back() != w.dim(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  const std::size_t in = w.dim(0), out = w.dim(1);
  Shape out_shape = x.shape();
  out_shape.back() = out;
  auto flat = reshape(x, Shape{x.numel() / in, in});
  return reshape(add_trailing(matmul(flat, w), b), std::move(out_shape));
}

}  // namespace vitrain::numerics
