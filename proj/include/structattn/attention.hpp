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

// Attention scoring and multi-head attention layers.
//
// Score kinds, per head, for token rows x_j of X:
//   standard       S = (X W_Q)(X W_K)^T
//   mlr_attention  S = sum_l (+)_k Q_{l,k} K_{l,k}^T, where Q = X W_Q is split
//                  by columns into levels r_1..r_L and level l into p_l = 2^(l-1)
//                  row blocks of consecutive tokens
//   bilinear_mlr   S = X M X^T with M an MLR matrix (equal blocks)
//   bilinear_btt   S = X M X^T with M a BTT matrix
//
// The score_* functions return raw scores: with qk_norm off they equal the
// bilinear form exactly. The layer multiplies raw scores by score_scale()
// before the masked softmax (1/r, or 1/feature width for bilinear kinds
// without qk_norm). With qk_norm on, the per-level (MLR) or per-structure
// (BTT) C/(r_l p_l) or C*/(ab) factor is part of the score itself.
//
// Batched tensors use [B, T, D] for activations and [B, H, T, T] for scores.

#ifndef STRUCTATTN_ATTENTION_HPP_
#define STRUCTATTN_ATTENTION_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "structattn/autodiff.hpp"
#include "structattn/rng.hpp"
#include "structattn/structured.hpp"

namespace structattn {

enum class ScoreKind { standard, mlr_attention, bilinear_mlr, bilinear_btt };

std::string kind_id(ScoreKind kind);
ScoreKind parse_score_kind(const std::string& id);

struct ScoreConfig {
  ScoreKind kind = ScoreKind::standard;
  std::int64_t heads = 1;
  /// Level ranks: r_1..r_L for mlr_attention (summing to D/H) and
  /// bilinear_mlr (any positive values).
  std::vector<std::int64_t> ranks;
  /// Per-head BTT shape for bilinear_btt; ab = cd = D.
  BTTSpec btt;
  bool qk_norm = false;
  double norm_constant = 1.0;  // C for MLR, C* for BTT
  /// Standard kind only: scale scores by 1/sqrt(r) instead of 1/r.
  bool sqrt_scaling = false;

  /// Defaults qk_norm on for the bilinear kinds.
  static ScoreConfig standard(std::int64_t heads);
  static ScoreConfig mlr_attention(std::int64_t heads, std::vector<std::int64_t> ranks);
  static ScoreConfig bilinear_mlr(std::int64_t heads, std::vector<std::int64_t> ranks);
  static ScoreConfig bilinear_btt(std::int64_t heads, BTTSpec btt);

  std::int64_t levels() const { return static_cast<std::int64_t>(ranks.size()); }
  /// D / H; head width of W_Q, W_K (standard, mlr_attention) and W_V, W_O (all kinds).
  std::int64_t head_dim(std::int64_t D) const { return D / heads; }
  /// Width of each head's query features: r, sum_l p_l r_l, or s b c.
  std::int64_t feature_dim(std::int64_t D) const;
  /// Multiplier applied to raw scores before the softmax.
  double score_scale(std::int64_t D) const;

  /// Checks the config against the model width; throws ValidationError.
  void validate(std::int64_t D) const;
  /// Sequence-length requirements (mlr_attention: 2^(L-1) | T and T > p_L).
  void validate_length(std::int64_t T) const;
};

/// Weights of one attention layer.
///   standard, mlr_attention: wq, wk [H, D, r]
///   bilinear_mlr: q_levels[l], k_levels[l] [H, p_l, D/p_l, r_l]
///   bilinear_btt: btt_left [H, b, a, c s], btt_right [H, c, d, b s]
///   all kinds: wv, wo [H, D, D/H]
template <class T>
struct AttentionWeightsT {
  T wq, wk;
  std::vector<T> q_levels, k_levels;
  T btt_left, btt_right;
  T wv, wo;
};
using AttentionWeights = AttentionWeightsT<Tensor>;
using AttentionVars = AttentionWeightsT<Var>;

/// Visit (name, weight) for every weight the kind uses, in a fixed order.
void for_each_weight(const ScoreConfig& cfg, AttentionWeights& w,
                     const std::function<void(const std::string&, Tensor&)>& fn);
void for_each_weight(const ScoreConfig& cfg, const AttentionWeights& w,
                     const std::function<void(const std::string&, const Tensor&)>& fn);

/// Shapes of every weight, in for_each_weight order.
std::vector<std::pair<std::string, Shape>> weight_shapes(const ScoreConfig& cfg, std::int64_t D);

/// Weights drawn N(0, 1/fan_in) along each weight's contracted axis.
AttentionWeights random_attention_weights(const ScoreConfig& cfg, std::int64_t D, Rng& rng);

AttentionVars bind(Tape& tape, const ScoreConfig& cfg, const AttentionWeights& w, bool requires_grad);

// Differentiable kernels. x is [B, T, D]; results are [B, H, T, T].
Var standard_scores(Var x, Var wq, Var wk);
Var mlr_attention_scores(Var x, Var wq, Var wk, const std::vector<std::int64_t>& ranks);
Var bilinear_mlr_scores(Var x, const std::vector<Var>& q_levels, const std::vector<Var>& k_levels, bool qk_norm,
                        double norm_constant);
Var bilinear_btt_scores(Var x, Var left, Var right, const BTTSpec& btt, bool qk_norm, double norm_constant);
Var raw_scores(Var x, const AttentionVars& w, const ScoreConfig& cfg);

/// sum_h softmax(mask(scale * S_h)) X W_V,h W_O,h^T; x is [B, T, D].
Var attention_forward(Var x, const AttentionVars& w, const ScoreConfig& cfg, const MaskSpec& mask);

// Single-sequence entry points on plain tensors (X is [T, D]).
Tensor score_matrix_standard(const Tensor& X, const Tensor& wq, const Tensor& wk);
/// `mat` is an MLR spec with equal power-of-two blocks or a BTT spec, D x D.
Tensor score_matrix_bilinear(const Tensor& X, const StructuredMatrix& mat, bool qk_norm = false,
                             double norm_constant = 1.0);
Tensor score_matrix_mlr_attention(const Tensor& X, const Tensor& wq, const Tensor& wk,
                                  const std::vector<std::int64_t>& ranks);
Tensor attention_layer_forward(const Tensor& X, const AttentionWeights& w, const ScoreConfig& cfg,
                               const MaskSpec& mask);

/// Number of levels at which tokens j and jp share a block.
std::int64_t shared_level_count(std::int64_t j, std::int64_t jp, std::int64_t T, std::int64_t levels);
/// One MLR attention score from its entrywise definition: the sum, over the
/// levels where j and jp share a block, of that level's query-key product.
double mlr_attention_score_entry(const Tensor& X, const Tensor& wq, const Tensor& wk,
                                 const std::vector<std::int64_t>& ranks, std::int64_t j, std::int64_t jp);

struct GradCheckEntry {
  std::string name;  // "x" or a weight name
  double relative_error = 0.0;
};
/// Compares reverse-mode gradients of <probe, attention_forward(x)> under a
/// causal mask with central differences, for a random [1, T, D] input and
/// every weight.
std::vector<GradCheckEntry> attention_grad_check(const ScoreConfig& cfg, std::int64_t D, std::int64_t T,
                                                 std::uint64_t seed);

/// S with -inf at every (j, j') where j' > j or j - j' > window.
Tensor sliding_window_scores(const Tensor& S, std::int64_t window);

/// Half-open token range [begin, end) of keys kept for decoding at one level.
struct KeyRange {
  std::int64_t level;  // 1-based
  std::int64_t begin, end;
};
/// Level l keeps only its last block [T (p_l - 1) / p_l, T).
std::vector<KeyRange> retained_key_indices(const std::vector<std::int64_t>& ranks, std::int64_t T);
/// sum_l r_l * (end_l - begin_l).
std::int64_t retained_key_elements(const std::vector<std::int64_t>& ranks, std::int64_t T);

/// Per-layer masks for a stack. `global_layers` (0-based) use plain causal
/// masking; the rest use a causal sliding window.
std::vector<MaskSpec> global_plus_swa_masks(std::int64_t depth, std::int64_t window,
                                            const std::vector<std::int64_t>& global_layers);
/// Every third layer starting at 0: {0, 3} at depth 6.
std::vector<std::int64_t> default_global_layers(std::int64_t depth);

}  // namespace structattn

#endif  // STRUCTATTN_ATTENTION_HPP_
