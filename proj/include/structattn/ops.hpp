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

// Value-level tensor kernels. The autodiff layer records these; oracle code
// calls them directly.

#ifndef STRUCTATTN_OPS_HPP_
#define STRUCTATTN_OPS_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "structattn/tensor.hpp"

namespace structattn {

/// Legality pattern for a square score matrix. Row j may look at column j'
/// when the pattern admits (j, j'). Entries that are -inf in the scores are
/// excluded as well, whatever the pattern.
struct MaskSpec {
  enum class Kind { none, causal, sliding_window };
  Kind kind = Kind::none;
  std::int64_t window = 0;  // T'; only for sliding_window

  static MaskSpec none() { return {}; }
  static MaskSpec causal() { return {Kind::causal, 0}; }
  static MaskSpec sliding_window(std::int64_t w) { return {Kind::sliding_window, w}; }

  bool admits(std::int64_t row, std::int64_t col) const {
    switch (kind) {
      case Kind::none:
        return true;
      case Kind::causal:
        return col <= row;
      case Kind::sliding_window:
        return col <= row && row - col <= window;
    }
    return false;
  }
};

/// Batched matrix product over the trailing two axes. Leading batch axes
/// broadcast numpy-style.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Swap the trailing two axes.
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, std::span<const int> axes);
Tensor permute(const Tensor& a, std::initializer_list<int> axes);

// Elementwise binary ops broadcast numpy-style.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

/// Shape the broadcast of `a` and `b` would take, or DimensionError.
Shape broadcast_shape(const Shape& a, const Shape& b);
/// Sum `grad` down to `target` by reducing broadcast axes.
Tensor reduce_to_shape(const Tensor& grad, const Shape& target);
/// Repeat `a` up to `target` along broadcast axes.
Tensor broadcast_to(const Tensor& a, const Shape& target);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis);
/// Insert a length-`count` axis at `axis` by repetition.
Tensor repeat_axis(const Tensor& a, int axis, std::int64_t count);

/// Row-wise softmax over the last axis of a [..., T, T] score tensor.
/// Masked entries get exactly zero weight and do not enter the max shift.
/// Throws NumericalError on a row with no admitted entry.
Tensor softmax_rows_masked(const Tensor& s, const MaskSpec& mask);
/// Backward of softmax_rows_masked given its output.
Tensor softmax_rows_backward(const Tensor& probs, const Tensor& grad_out);

inline constexpr double kRmsNormEps = 1e-8;
inline constexpr double kLayerNormEps = 1e-8;

/// x / sqrt(mean(x^2) + eps) along the last axis; no gain.
Tensor rms_norm(const Tensor& x);
Tensor rms_norm_backward(const Tensor& x, const Tensor& grad_out);
/// (x - mean) / sqrt(var + eps) along the last axis; no gain or bias.
Tensor layer_norm(const Tensor& x);
Tensor layer_norm_backward(const Tensor& x, const Tensor& grad_out);

/// tanh-approximated GELU.
Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& grad_out);

/// out[..., j] = a[..., index[j]]
Tensor gather_last(const Tensor& a, std::span<const std::int64_t> index);
/// out[..., index[j]] += g[..., j], with `width` output columns.
Tensor scatter_last(const Tensor& g, std::span<const std::int64_t> index, std::int64_t width);

Tensor slice_last(const Tensor& a, std::int64_t start, std::int64_t length);
/// Zero-pad the last axis so that `a` lands at [start, start + len).
Tensor pad_last(const Tensor& a, std::int64_t start, std::int64_t width);
Tensor concat_last(std::span<const Tensor> parts);

/// Slice along an arbitrary axis, and its adjoint.
Tensor slice_axis(const Tensor& a, int axis, std::int64_t start, std::int64_t length);
Tensor pad_axis(const Tensor& a, int axis, std::int64_t start, std::int64_t width);

/// [..., p, m, n] -> [..., p*m, p*n] with the p blocks on the diagonal.
Tensor block_diag(const Tensor& blocks);
/// Inverse of block_diag on the diagonal blocks: [..., p*m, p*n] -> [..., p, m, n].
Tensor block_diag_extract(const Tensor& full, std::int64_t p);

double max_abs(const Tensor& a);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& a);

}  // namespace structattn

#endif  // STRUCTATTN_OPS_HPP_
