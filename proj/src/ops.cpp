/* Copyright 2026 The StructAttn Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "structattn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace structattn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void gemm(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
          std::int64_t n) {
  if (matmul_precision() == Precision::f32) {
    RowMatF af = Eigen::Map<const RowMat>(a, m, k).cast<float>();
    RowMatF bf = Eigen::Map<const RowMat>(b, k, n).cast<float>();
    RowMatF cf = af * bf;
    Eigen::Map<RowMat>(c, m, n) = cf.cast<double>();
  } else {
    Eigen::Map<RowMat>(c, m, n).noalias() =
        Eigen::Map<const RowMat>(a, m, k) * Eigen::Map<const RowMat>(b, k, n);
  }
  auto& tally = flop_tally();
  const auto mkn = static_cast<std::uint64_t>(m * k * n);
  tally.macs += mkn;
  tally.flops += 2 * mkn - static_cast<std::uint64_t>(m * n);
}

std::vector<std::int64_t> strides_of(const Shape& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = s[static_cast<std::size_t>(i) + 1] * shape[static_cast<std::size_t>(i) + 1];
  }
  return s;
}

// Strides of `in` aligned to the broadcast `out` shape; zero on broadcast axes.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::int64_t> s(out.size(), 0);
  const auto in_strides = strides_of(in);
  const std::size_t offset = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] != 1) s[offset + i] = in_strides[i];
  }
  return s;
}

// Visit every multi-index of `shape`, calling f(offset_a, offset_b, flat).
template <typename F>
void for_each_index2(const Shape& shape, const std::vector<std::int64_t>& sa,
                     const std::vector<std::int64_t>& sb, F&& f) {
  const std::int64_t total = shape_numel(shape);
  const std::size_t r = shape.size();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t oa = 0;
  std::int64_t ob = 0;
  for (std::int64_t flat = 0; flat < total; ++flat) {
    f(oa, ob, flat);
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < shape[ax]) break;
      oa -= sa[ax] * shape[ax];
      ob -= sb[ax] * shape[ax];
      idx[ax] = 0;
    }
  }
}

template <typename Op>
Tensor binary(const Tensor& a, const Tensor& b, Op op) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(static_cast<std::size_t>(a.size()));
    const auto da = a.data();
    const auto db = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(da[i], db[i]);
    return Tensor(a.shape(), std::move(out));
  }
  Shape shape = broadcast_shape(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), shape);
  const auto sb = broadcast_strides(b.shape(), shape);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(shape)));
  const auto da = a.data();
  const auto db = b.data();
  for_each_index2(shape, sa, sb, [&](std::int64_t oa, std::int64_t ob, std::int64_t flat) {
    out[static_cast<std::size_t>(flat)] = op(da[static_cast<std::size_t>(oa)], db[static_cast<std::size_t>(ob)]);
  });
  return Tensor(std::move(shape), std::move(out));
}

void require_rank(const Tensor& a, int r, const char* what) {
  if (a.rank() < r) {
    throw DimensionError(std::string(what) + " needs rank >= " + std::to_string(r) + ", got " +
                         shape_str(a.shape()));
  }
}

int norm_axis(int axis, int rank) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw DimensionError("axis " + std::to_string(axis) + " out of range");
  return a;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2 || a.dim(-1) != b.dim(-2)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(-2);
  const std::int64_t k = a.dim(-1);
  const std::int64_t n = b.dim(-1);
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shape(batch_a, batch_b);
  } catch (const DimensionError&) {
    throw DimensionError("matmul batch mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(out_shape)));

  if (batch_b.empty() || shape_numel(batch_b) == 1) {
    if (shape_numel(batch_a) == shape_numel(batch)) {
      // Fold a's batch into rows: one product.
      gemm(a.data().data(), b.data().data(), out.data(), shape_numel(batch) * m, k, n);
      return Tensor(std::move(out_shape), std::move(out));
    }
  }
  const auto sa = broadcast_strides(batch_a, batch);
  const auto sb = broadcast_strides(batch_b, batch);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = out.data();
  for_each_index2(batch, sa, sb, [&](std::int64_t oa, std::int64_t ob, std::int64_t flat) {
    gemm(pa + oa * m * k, pb + ob * k * n, pc + flat * m * n, m, k, n);
  });
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  std::vector<int> axes(static_cast<std::size_t>(a.rank()));
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(a, axes);
}

Tensor permute(const Tensor& a, std::initializer_list<int> axes) {
  return permute(a, std::span<const int>(axes.begin(), axes.size()));
}

Tensor permute(const Tensor& a, std::span<const int> axes) {
  const int r = a.rank();
  if (static_cast<int>(axes.size()) != r) {
    throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for " + shape_str(a.shape()));
  }
  std::vector<bool> seen(static_cast<std::size_t>(r), false);
  for (int ax : axes) {
    if (ax < 0 || ax >= r || seen[static_cast<std::size_t>(ax)]) throw DimensionError("permute: invalid axes");
    seen[static_cast<std::size_t>(ax)] = true;
  }
  const auto in_strides = strides_of(a.shape());
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<std::int64_t> s(static_cast<std::size_t>(r));
  bool identity = true;
  for (int i = 0; i < r; ++i) {
    out_shape[static_cast<std::size_t>(i)] = a.shape()[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    s[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];
    identity = identity && axes[static_cast<std::size_t>(i)] == i;
  }
  if (identity) return a;
  std::vector<double> out(static_cast<std::size_t>(a.size()));
  const auto src = a.data();
  if (r > 0 && axes.back() == r - 1) {
    // Contiguous rows: copy the last axis in blocks.
    const std::int64_t inner = out_shape.back();
    Shape outer_shape(out_shape.begin(), out_shape.end() - 1);
    std::vector<std::int64_t> so(s.begin(), s.end() - 1);
    std::vector<std::int64_t> zero(so.size(), 0);
    for_each_index2(outer_shape, so, zero, [&](std::int64_t off, std::int64_t, std::int64_t flat) {
      std::copy_n(src.begin() + off, inner, out.begin() + flat * inner);
    });
  } else {
    std::vector<std::int64_t> zero(s.size(), 0);
    for_each_index2(out_shape, s, zero, [&](std::int64_t off, std::int64_t, std::int64_t flat) {
      out[static_cast<std::size_t>(flat)] = src[static_cast<std::size_t>(off)];
    });
  }
  return Tensor(std::move(out_shape), std::move(out));
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x + y; });
}
Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x - y; });
}
Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return Tensor(a.shape(), std::move(out));
}

Tensor reduce_to_shape(const Tensor& grad, const Shape& target) {
  if (grad.shape() == target) return grad;
  if (target.size() > grad.shape().size()) {
    throw DimensionError("reduce_to_shape: " + shape_str(grad.shape()) + " -> " + shape_str(target));
  }
  // Validate compatibility.
  if (broadcast_shape(grad.shape(), target) != grad.shape()) {
    throw DimensionError("reduce_to_shape: " + shape_str(grad.shape()) + " -> " + shape_str(target));
  }
  const auto st = broadcast_strides(target, grad.shape());
  std::vector<double> out(static_cast<std::size_t>(shape_numel(target)), 0.0);
  std::vector<std::int64_t> zero(st.size(), 0);
  const auto g = grad.data();
  for_each_index2(grad.shape(), st, zero, [&](std::int64_t ot, std::int64_t, std::int64_t flat) {
    out[static_cast<std::size_t>(ot)] += g[static_cast<std::size_t>(flat)];
  });
  return Tensor(target, std::move(out));
}

Tensor broadcast_to(const Tensor& a, const Shape& target) {
  if (a.shape() == target) return a;
  if (broadcast_shape(a.shape(), target) != target) {
    throw DimensionError("broadcast_to: " + shape_str(a.shape()) + " -> " + shape_str(target));
  }
  const auto sa = broadcast_strides(a.shape(), target);
  std::vector<std::int64_t> zero(sa.size(), 0);
  std::vector<double> out(static_cast<std::size_t>(shape_numel(target)));
  const auto d = a.data();
  for_each_index2(target, sa, zero, [&](std::int64_t oa, std::int64_t, std::int64_t flat) {
    out[static_cast<std::size_t>(flat)] = d[static_cast<std::size_t>(oa)];
  });
  return Tensor(target, std::move(out));
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::scalar(s);
}

Tensor mean(const Tensor& a) { return Tensor::scalar(sum(a).item() / static_cast<double>(a.size())); }

Tensor sum_axis(const Tensor& a, int axis) {
  const int ax = norm_axis(axis, a.rank());
  Shape kept = a.shape();
  kept[static_cast<std::size_t>(ax)] = 1;
  Tensor reduced = reduce_to_shape(a, kept);
  Shape out = a.shape();
  out.erase(out.begin() + ax);
  return reduced.reshape(out);
}

Tensor repeat_axis(const Tensor& a, int axis, std::int64_t count) {
  const int ax = norm_axis(axis, a.rank() + 1);
  Shape with_one = a.shape();
  with_one.insert(with_one.begin() + ax, 1);
  Shape target = with_one;
  target[static_cast<std::size_t>(ax)] = count;
  return broadcast_to(a.reshape(with_one), target);
}

Tensor softmax_rows_masked(const Tensor& s, const MaskSpec& mask) {
  require_rank(s, 2, "softmax_rows_masked");
  const std::int64_t rows = s.dim(-2);
  const std::int64_t cols = s.dim(-1);
  if (mask.kind != MaskSpec::Kind::none && rows != cols) {
    throw DimensionError("masked softmax needs square scores, got " + shape_str(s.shape()));
  }
  if (mask.kind == MaskSpec::Kind::sliding_window && mask.window < 0) {
    throw ValidationError("sliding window must be >= 0");
  }
  const std::int64_t mats = s.size() / (rows * cols);
  const auto in = s.data();
  std::vector<double> out(static_cast<std::size_t>(s.size()), 0.0);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (std::int64_t b = 0; b < mats; ++b) {
    for (std::int64_t i = 0; i < rows; ++i) {
      const std::int64_t base = (b * rows + i) * cols;
      double mx = neg_inf;
      for (std::int64_t j = 0; j < cols; ++j) {
        const double v = in[static_cast<std::size_t>(base + j)];
        if (mask.admits(i, j) && v != neg_inf) mx = std::max(mx, v);
      }
      if (mx == neg_inf) {
        throw NumericalError("softmax row " + std::to_string(i) + " is fully masked");
      }
      double z = 0.0;
      for (std::int64_t j = 0; j < cols; ++j) {
        const double v = in[static_cast<std::size_t>(base + j)];
        if (mask.admits(i, j) && v != neg_inf) {
          const double e = std::exp(v - mx);
          out[static_cast<std::size_t>(base + j)] = e;
          z += e;
        }
      }
      for (std::int64_t j = 0; j < cols; ++j) out[static_cast<std::size_t>(base + j)] /= z;
    }
  }
  return Tensor(s.shape(), std::move(out));
}

Tensor softmax_rows_backward(const Tensor& probs, const Tensor& grad_out) {
  const std::int64_t cols = probs.dim(-1);
  const std::int64_t nrows = probs.size() / cols;
  const auto p = probs.data();
  const auto g = grad_out.data();
  std::vector<double> out(static_cast<std::size_t>(probs.size()));
  for (std::int64_t r = 0; r < nrows; ++r) {
    const std::int64_t base = r * cols;
    double dot = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) dot += p[static_cast<std::size_t>(base + j)] * g[static_cast<std::size_t>(base + j)];
    for (std::int64_t j = 0; j < cols; ++j) {
      const auto k = static_cast<std::size_t>(base + j);
      out[k] = p[k] * (g[k] - dot);
    }
  }
  return Tensor(probs.shape(), std::move(out));
}

Tensor rms_norm(const Tensor& x) {
  require_rank(x, 1, "rms_norm");
  const std::int64_t d = x.dim(-1);
  const std::int64_t rows = x.size() / d;
  const auto in = x.data();
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  for (std::int64_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::int64_t j = 0; j < d; ++j) ms += in[static_cast<std::size_t>(r * d + j)] * in[static_cast<std::size_t>(r * d + j)];
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + kRmsNormEps);
    for (std::int64_t j = 0; j < d; ++j) out[static_cast<std::size_t>(r * d + j)] = in[static_cast<std::size_t>(r * d + j)] * inv;
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor rms_norm_backward(const Tensor& x, const Tensor& grad_out) {
  const std::int64_t d = x.dim(-1);
  const std::int64_t rows = x.size() / d;
  const auto in = x.data();
  const auto g = grad_out.data();
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  const double dd = static_cast<double>(d);
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto base = static_cast<std::size_t>(r * d);
    double ms = 0.0;
    double xg = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      ms += in[base + j] * in[base + j];
      xg += in[base + j] * g[base + j];
    }
    const double s = ms / dd + kRmsNormEps;
    const double inv = 1.0 / std::sqrt(s);
    const double coef = xg * inv / (s * dd);
    for (std::int64_t j = 0; j < d; ++j) out[base + j] = g[base + j] * inv - in[base + j] * coef;
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor layer_norm(const Tensor& x) {
  require_rank(x, 1, "layer_norm");
  const std::int64_t d = x.dim(-1);
  const std::int64_t rows = x.size() / d;
  const auto in = x.data();
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  const double dd = static_cast<double>(d);
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto base = static_cast<std::size_t>(r * d);
    double mu = 0.0;
    for (std::int64_t j = 0; j < d; ++j) mu += in[base + j];
    mu /= dd;
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) var += (in[base + j] - mu) * (in[base + j] - mu);
    const double inv = 1.0 / std::sqrt(var / dd + kLayerNormEps);
    for (std::int64_t j = 0; j < d; ++j) out[base + j] = (in[base + j] - mu) * inv;
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor layer_norm_backward(const Tensor& x, const Tensor& grad_out) {
  const std::int64_t d = x.dim(-1);
  const std::int64_t rows = x.size() / d;
  const auto in = x.data();
  const auto g = grad_out.data();
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  const double dd = static_cast<double>(d);
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto base = static_cast<std::size_t>(r * d);
    double mu = 0.0;
    for (std::int64_t j = 0; j < d; ++j) mu += in[base + j];
    mu /= dd;
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) var += (in[base + j] - mu) * (in[base + j] - mu);
    const double inv = 1.0 / std::sqrt(var / dd + kLayerNormEps);
    double gsum = 0.0;
    double gy = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double y = (in[base + j] - mu) * inv;
      gsum += g[base + j];
      gy += g[base + j] * y;
    }
    for (std::int64_t j = 0; j < d; ++j) {
      const double y = (in[base + j] - mu) * inv;
      out[base + j] = inv * (g[base + j] - gsum / dd - y * gy / dd);
    }
  }
  return Tensor(x.shape(), std::move(out));
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  return Tensor(x.shape(), std::move(out));
}

Tensor gelu_backward(const Tensor& x, const Tensor& grad_out) {
  const auto in = x.data();
  const auto g = grad_out.data();
  std::vector<double> out(static_cast<std::size_t>(x.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = in[i];
    const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
    const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    out[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
  }
  return Tensor(x.shape(), std::move(out));
}

Tensor gather_last(const Tensor& a, std::span<const std::int64_t> index) {
  require_rank(a, 1, "gather_last");
  const std::int64_t w = a.dim(-1);
  const std::int64_t rows = a.size() / w;
  const auto n = static_cast<std::int64_t>(index.size());
  for (auto i : index) {
    if (i < 0 || i >= w) throw DimensionError("gather index out of range for " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  shape.back() = n;
  std::vector<double> out(static_cast<std::size_t>(rows * n));
  const auto d = a.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(r * n + j)] = d[static_cast<std::size_t>(r * w + index[static_cast<std::size_t>(j)])];
    }
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor scatter_last(const Tensor& g, std::span<const std::int64_t> index, std::int64_t width) {
  const std::int64_t n = g.dim(-1);
  const std::int64_t rows = g.size() / n;
  Shape shape = g.shape();
  shape.back() = width;
  std::vector<double> out(static_cast<std::size_t>(rows * width), 0.0);
  const auto d = g.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < n; ++j) {
      out[static_cast<std::size_t>(r * width + index[static_cast<std::size_t>(j)])] += d[static_cast<std::size_t>(r * n + j)];
    }
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor slice_axis(const Tensor& a, int axis, std::int64_t start, std::int64_t length) {
  const int ax = norm_axis(axis, a.rank());
  const std::int64_t ext = a.dim(ax);
  if (start < 0 || length < 1 || start + length > ext) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for axis " + std::to_string(ax) + " of " + shape_str(a.shape()));
  }
  std::int64_t outer = 1;
  for (int i = 0; i < ax; ++i) outer *= a.dim(i);
  const std::int64_t inner = a.size() / (outer * ext);
  Shape shape = a.shape();
  shape[static_cast<std::size_t>(ax)] = length;
  std::vector<double> out(static_cast<std::size_t>(outer * length * inner));
  const auto d = a.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(d.begin() + (o * ext + start) * inner, length * inner, out.begin() + o * length * inner);
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor pad_axis(const Tensor& a, int axis, std::int64_t start, std::int64_t width) {
  const int ax = norm_axis(axis, a.rank());
  const std::int64_t length = a.dim(ax);
  if (start < 0 || start + length > width) throw DimensionError("pad_axis out of range");
  std::int64_t outer = 1;
  for (int i = 0; i < ax; ++i) outer *= a.dim(i);
  const std::int64_t inner = a.size() / (outer * length);
  Shape shape = a.shape();
  shape[static_cast<std::size_t>(ax)] = width;
  std::vector<double> out(static_cast<std::size_t>(outer * width * inner), 0.0);
  const auto d = a.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(d.begin() + o * length * inner, length * inner, out.begin() + (o * width + start) * inner);
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor slice_last(const Tensor& a, std::int64_t start, std::int64_t length) {
  return slice_axis(a, -1, start, length);
}

Tensor pad_last(const Tensor& a, std::int64_t start, std::int64_t width) {
  return pad_axis(a, -1, start, width);
}

Tensor concat_last(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::int64_t width = 0;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin(), p.shape().end() - 1) != lead) {
      throw DimensionError("concat mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    width += p.dim(-1);
  }
  const std::int64_t rows = shape_numel(lead);
  std::vector<double> out(static_cast<std::size_t>(rows * width));
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.dim(-1);
    const auto d = p.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy_n(d.begin() + r * w, w, out.begin() + r * width + offset);
    }
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(width);
  return Tensor(std::move(shape), std::move(out));
}

Tensor block_diag(const Tensor& blocks) {
  require_rank(blocks, 3, "block_diag");
  const std::int64_t p = blocks.dim(-3);
  const std::int64_t m = blocks.dim(-2);
  const std::int64_t n = blocks.dim(-1);
  const std::int64_t batch = blocks.size() / (p * m * n);
  Shape shape(blocks.shape().begin(), blocks.shape().end() - 3);
  shape.push_back(p * m);
  shape.push_back(p * n);
  std::vector<double> out(static_cast<std::size_t>(batch * p * m * p * n), 0.0);
  const auto d = blocks.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t k = 0; k < p; ++k) {
      for (std::int64_t i = 0; i < m; ++i) {
        const std::int64_t src = ((b * p + k) * m + i) * n;
        const std::int64_t dst = (b * p * m + k * m + i) * (p * n) + k * n;
        std::copy_n(d.begin() + src, n, out.begin() + dst);
      }
    }
  }
  return Tensor(std::move(shape), std::move(out));
}

Tensor block_diag_extract(const Tensor& full, std::int64_t p) {
  require_rank(full, 2, "block_diag_extract");
  const std::int64_t rows = full.dim(-2);
  const std::int64_t cols = full.dim(-1);
  if (p < 1 || rows % p != 0 || cols % p != 0) {
    throw DimensionError("block_diag_extract: " + std::to_string(p) + " blocks do not divide " + shape_str(full.shape()));
  }
  const std::int64_t m = rows / p;
  const std::int64_t n = cols / p;
  const std::int64_t batch = full.size() / (rows * cols);
  Shape shape(full.shape().begin(), full.shape().end() - 2);
  shape.push_back(p);
  shape.push_back(m);
  shape.push_back(n);
  std::vector<double> out(static_cast<std::size_t>(batch * p * m * n));
  const auto d = full.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t k = 0; k < p; ++k) {
      for (std::int64_t i = 0; i < m; ++i) {
        const std::int64_t dst = ((b * p + k) * m + i) * n;
        const std::int64_t src = (b * rows + k * m + i) * cols + k * n;
        std::copy_n(d.begin() + src, n, out.begin() + dst);
      }
    }
  }
  return Tensor(std::move(shape), std::move(out));
}

double max_abs(const Tensor& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_finite(const Tensor& a) {
  return std::all_of(a.data().begin(), a.data().end(), [](double v) { return std::isfinite(v); });
}

}  // namespace structattn
