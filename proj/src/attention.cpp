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

#include "structattn/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "structattn/ops.hpp"

namespace structattn {
namespace {

std::int64_t pow2(std::int64_t k) { return std::int64_t{1} << k; }

std::int64_t sum_of(const std::vector<std::int64_t>& v) {
  return std::accumulate(v.begin(), v.end(), std::int64_t{0});
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

// Stack equally shaped tensors along a new leading axis.
Tensor stack(const std::vector<Tensor>& parts) {
  Shape shape = parts.at(0).shape();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(parts[0].size()) * parts.size());
  for (const auto& p : parts) {
    if (p.shape() != shape) throw DimensionError("stack: " + shape_str(shape) + " vs " + shape_str(p.shape()));
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  shape.insert(shape.begin(), static_cast<std::int64_t>(parts.size()));
  return Tensor(std::move(shape), std::move(data));
}

Tensor with_leading_one(const Tensor& t) {
  Shape s = t.shape();
  s.insert(s.begin(), 1);
  return t.reshape(std::move(s));
}

void require_rank(Var v, std::size_t rank, const char* what) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
  }
}

// [B, T, D] -> [B, 1, T, D] so head-batched weights broadcast over B.
Var head_axis(Var x) { return ad::reshape(x, {x.dim(0), 1, x.dim(1), x.dim(2)}); }

// [B, T, D] -> [B, 1, p, T, D/p]: token rows split into p column blocks.
Var column_blocks(Var x, std::int64_t p) {
  const auto B = x.dim(0), T = x.dim(1), D = x.dim(2);
  Var blocks = ad::permute(ad::reshape(x, {B, T, p, D / p}), {0, 2, 1, 3});
  return ad::reshape(blocks, {B, 1, p, T, D / p});
}

}  // namespace

std::string kind_id(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::standard: return "standard";
    case ScoreKind::mlr_attention: return "mlr-attention";
    case ScoreKind::bilinear_mlr: return "bilinear-mlr";
    case ScoreKind::bilinear_btt: return "bilinear-btt";
  }
  return "?";
}

ScoreKind parse_score_kind(const std::string& id) {
  for (auto k : {ScoreKind::standard, ScoreKind::mlr_attention, ScoreKind::bilinear_mlr, ScoreKind::bilinear_btt}) {
    if (kind_id(k) == id) return k;
  }
  throw ValidationError("unknown score kind '" + id + "' (standard, mlr-attention, bilinear-mlr, bilinear-btt)");
}

// ---------------------------------------------------------------------------
// ScoreConfig

ScoreConfig ScoreConfig::standard(std::int64_t heads) {
  ScoreConfig c;
  c.heads = heads;
  return c;
}

ScoreConfig ScoreConfig::mlr_attention(std::int64_t heads, std::vector<std::int64_t> ranks) {
  ScoreConfig c;
  c.kind = ScoreKind::mlr_attention;
  c.heads = heads;
  c.ranks = std::move(ranks);
  return c;
}

ScoreConfig ScoreConfig::bilinear_mlr(std::int64_t heads, std::vector<std::int64_t> ranks) {
  ScoreConfig c;
  c.kind = ScoreKind::bilinear_mlr;
  c.heads = heads;
  c.ranks = std::move(ranks);
  c.qk_norm = true;
  return c;
}

ScoreConfig ScoreConfig::bilinear_btt(std::int64_t heads, BTTSpec btt) {
  ScoreConfig c;
  c.kind = ScoreKind::bilinear_btt;
  c.heads = heads;
  c.btt = btt;
  c.qk_norm = true;
  return c;
}

std::int64_t ScoreConfig::feature_dim(std::int64_t D) const {
  switch (kind) {
    case ScoreKind::standard:
    case ScoreKind::mlr_attention:
      return head_dim(D);
    case ScoreKind::bilinear_mlr: {
      std::int64_t f = 0;
      for (std::size_t l = 0; l < ranks.size(); ++l) f += pow2(static_cast<std::int64_t>(l)) * ranks[l];
      return f;
    }
    case ScoreKind::bilinear_btt:
      return btt.s * btt.b * btt.c;
  }
  return 0;
}

double ScoreConfig::score_scale(std::int64_t D) const {
  const auto f = static_cast<double>(feature_dim(D));
  switch (kind) {
    case ScoreKind::standard:
      return sqrt_scaling ? 1.0 / std::sqrt(f) : 1.0 / f;
    case ScoreKind::mlr_attention:
      return 1.0 / f;
    case ScoreKind::bilinear_mlr:
    case ScoreKind::bilinear_btt:
      return qk_norm ? 1.0 : 1.0 / f;
  }
  return 1.0;
}

void ScoreConfig::validate(std::int64_t D) const {
  const std::string tag = kind_id(kind) + ": ";
  require(D >= 1, tag + "D must be >= 1");
  require(heads >= 1, tag + "heads must be >= 1");
  require(D % heads == 0, tag + "D = " + std::to_string(D) + " is not divisible by H = " + std::to_string(heads));
  require(norm_constant > 0.0 && std::isfinite(norm_constant), tag + "norm_constant must be a positive number");
  require(!sqrt_scaling || kind == ScoreKind::standard, tag + "sqrt_scaling applies to the standard kind only");
  switch (kind) {
    case ScoreKind::standard:
      require(ranks.empty(), tag + "standard scoring takes no level ranks");
      require(!qk_norm, tag + "qk_norm is defined for the bilinear kinds");
      break;
    case ScoreKind::mlr_attention:
    case ScoreKind::bilinear_mlr: {
      require(!ranks.empty(), tag + "needs at least one level");
      require(ranks.size() < 32, tag + "too many levels");
      for (auto r : ranks) require(r >= 1, tag + "level ranks must be >= 1");
      if (kind == ScoreKind::mlr_attention) {
        require(!qk_norm, tag + "qk_norm is defined for the bilinear kinds");
        require(sum_of(ranks) == head_dim(D), tag + "level ranks sum to " + std::to_string(sum_of(ranks)) +
                                                  ", expected the head dimension D/H = " +
                                                  std::to_string(head_dim(D)));
      } else {
        const auto finest = pow2(levels() - 1);
        require(D % finest == 0, tag + "2^(L-1) = " + std::to_string(finest) + " must divide D = " + std::to_string(D));
      }
      break;
    }
    case ScoreKind::bilinear_btt:
      require(ranks.empty(), tag + "BTT scoring takes no level ranks");
      structattn::validate(btt);
      require(btt.m() == D && btt.n() == D, tag + "needs ab = cd = D = " + std::to_string(D) + ", got ab = " +
                                                std::to_string(btt.m()) + ", cd = " + std::to_string(btt.n()));
      require(feature_dim(D) >= head_dim(D), tag + "feature width s b c = " + std::to_string(feature_dim(D)) +
                                                 " is below the head dimension " + std::to_string(head_dim(D)));
      break;
  }
}

void ScoreConfig::validate_length(std::int64_t T) const {
  require(T >= 1, "sequence length must be >= 1");
  if (kind != ScoreKind::mlr_attention || levels() == 1) return;
  const auto finest = pow2(levels() - 1);
  require(T % finest == 0, "mlr-attention: 2^(L-1) = " + std::to_string(finest) + " must divide T = " +
                               std::to_string(T));
  require(T > finest, "mlr-attention: T = " + std::to_string(T) + " must exceed p_L = " + std::to_string(finest));
}

// ---------------------------------------------------------------------------
// Weights

std::vector<std::pair<std::string, Shape>> weight_shapes(const ScoreConfig& cfg, std::int64_t D) {
  cfg.validate(D);
  const auto H = cfg.heads;
  const auto r = cfg.head_dim(D);
  std::vector<std::pair<std::string, Shape>> out;
  switch (cfg.kind) {
    case ScoreKind::standard:
    case ScoreKind::mlr_attention:
      out.push_back({"wq", {H, D, r}});
      out.push_back({"wk", {H, D, r}});
      break;
    case ScoreKind::bilinear_mlr:
      for (std::int64_t l = 0; l < cfg.levels(); ++l) {
        const auto p = pow2(l);
        out.push_back({"wq_level" + std::to_string(l + 1), {H, p, D / p, cfg.ranks[static_cast<std::size_t>(l)]}});
      }
      for (std::int64_t l = 0; l < cfg.levels(); ++l) {
        const auto p = pow2(l);
        out.push_back({"wk_level" + std::to_string(l + 1), {H, p, D / p, cfg.ranks[static_cast<std::size_t>(l)]}});
      }
      break;
    case ScoreKind::bilinear_btt: {
      const auto& b = cfg.btt;
      out.push_back({"btt_left", {H, b.b, b.a, b.c * b.s}});
      out.push_back({"btt_right", {H, b.c, b.d, b.b * b.s}});
      break;
    }
  }
  out.push_back({"wv", {H, D, r}});
  out.push_back({"wo", {H, D, r}});
  return out;
}

namespace {

template <class W, class Fn>
void visit_weights(const ScoreConfig& cfg, W& w, Fn&& fn) {
  switch (cfg.kind) {
    case ScoreKind::standard:
    case ScoreKind::mlr_attention:
      fn("wq", w.wq);
      fn("wk", w.wk);
      break;
    case ScoreKind::bilinear_mlr:
      for (std::size_t l = 0; l < w.q_levels.size(); ++l) fn("wq_level" + std::to_string(l + 1), w.q_levels[l]);
      for (std::size_t l = 0; l < w.k_levels.size(); ++l) fn("wk_level" + std::to_string(l + 1), w.k_levels[l]);
      break;
    case ScoreKind::bilinear_btt:
      fn("btt_left", w.btt_left);
      fn("btt_right", w.btt_right);
      break;
  }
  fn("wv", w.wv);
  fn("wo", w.wo);
}

}  // namespace

void for_each_weight(const ScoreConfig& cfg, AttentionWeights& w,
                     const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_weights(cfg, w, fn);
}

void for_each_weight(const ScoreConfig& cfg, const AttentionWeights& w,
                     const std::function<void(const std::string&, const Tensor&)>& fn) {
  visit_weights(cfg, w, fn);
}

AttentionWeights random_attention_weights(const ScoreConfig& cfg, std::int64_t D, Rng& rng) {
  AttentionWeights w;
  for (const auto& [name, shape] : weight_shapes(cfg, D)) {
    // Contracted axis: D for wq/wk/wv, D/p for MLR levels, cs for the BTT
    // left bank, d for the right bank, r for wo (it is applied transposed).
    std::int64_t fan_in = shape[1];
    if (name.rfind("wq_level", 0) == 0 || name.rfind("wk_level", 0) == 0) fan_in = shape[2];
    if (name == "btt_left") fan_in = shape[3];
    if (name == "btt_right") fan_in = shape[2];
    if (name == "wo") fan_in = shape[2];
    Tensor t = rng.normal_tensor(shape, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    if (name == "wq") w.wq = t;
    else if (name == "wk") w.wk = t;
    else if (name.rfind("wq_level", 0) == 0) w.q_levels.push_back(t);
    else if (name.rfind("wk_level", 0) == 0) w.k_levels.push_back(t);
    else if (name == "btt_left") w.btt_left = t;
    else if (name == "btt_right") w.btt_right = t;
    else if (name == "wv") w.wv = t;
    else if (name == "wo") w.wo = t;
  }
  return w;
}

AttentionVars bind(Tape& tape, const ScoreConfig& cfg, const AttentionWeights& w, bool requires_grad) {
  AttentionVars v;
  v.q_levels.resize(w.q_levels.size());
  v.k_levels.resize(w.k_levels.size());
  std::size_t qi = 0, ki = 0;
  for_each_weight(cfg, w, [&](const std::string& name, const Tensor& t) {
    const Var var = tape.leaf(t, requires_grad);
    if (name == "wq") v.wq = var;
    else if (name == "wk") v.wk = var;
    else if (name.rfind("wq_level", 0) == 0) v.q_levels[qi++] = var;
    else if (name.rfind("wk_level", 0) == 0) v.k_levels[ki++] = var;
    else if (name == "btt_left") v.btt_left = var;
    else if (name == "btt_right") v.btt_right = var;
    else if (name == "wv") v.wv = var;
    else if (name == "wo") v.wo = var;
  });
  return v;
}

// ---------------------------------------------------------------------------
// Kernels

Var standard_scores(Var x, Var wq, Var wk) {
  require_rank(x, 3, "standard_scores input");
  const Var xh = head_axis(x);
  const Var q = ad::matmul(xh, wq);
  const Var k = ad::matmul(xh, wk);
  return ad::matmul(q, ad::transpose(k));
}

Var mlr_attention_scores(Var x, Var wq, Var wk, const std::vector<std::int64_t>& ranks) {
  require_rank(x, 3, "mlr_attention_scores input");
  const auto B = x.dim(0), T = x.dim(1);
  const Var xh = head_axis(x);
  const Var q = ad::matmul(xh, wq);  // [B, H, T, r]
  const Var k = ad::matmul(xh, wk);
  const auto H = q.dim(1);
  if (sum_of(ranks) != q.dim(3)) {
    throw DimensionError("mlr_attention_scores: level ranks sum to " + std::to_string(sum_of(ranks)) +
                         " but the projections have width " + std::to_string(q.dim(3)));
  }
  std::optional<Var> total;
  std::int64_t off = 0;
  for (std::size_t l = 0; l < ranks.size(); ++l) {
    const auto p = pow2(static_cast<std::int64_t>(l));
    const auto r = ranks[l];
    if (T % p != 0) {
      throw ValidationError("mlr_attention_scores: 2^(l-1) = " + std::to_string(p) + " does not divide T = " +
                            std::to_string(T));
    }
    // Level l splits tokens into p consecutive blocks; only same-block pairs
    // receive a level-l term.
    const Var ql = ad::reshape(ad::slice_last(q, off, r), {B, H, p, T / p, r});
    const Var kl = ad::reshape(ad::slice_last(k, off, r), {B, H, p, T / p, r});
    const Var sl = ad::block_diag(ad::matmul(ql, ad::transpose(kl)));
    total = total ? ad::add(*total, sl) : sl;
    off += r;
  }
  return *total;
}

Var bilinear_mlr_scores(Var x, const std::vector<Var>& q_levels, const std::vector<Var>& k_levels, bool qk_norm,
                        double norm_constant) {
  require_rank(x, 3, "bilinear_mlr_scores input");
  if (q_levels.empty() || q_levels.size() != k_levels.size()) {
    throw DimensionError("bilinear_mlr_scores: need matching non-empty query and key level lists");
  }
  const auto B = x.dim(0), T = x.dim(1);
  std::optional<Var> total;
  for (std::size_t l = 0; l < q_levels.size(); ++l) {
    const Var wq = q_levels[l];
    const Var wk = k_levels[l];
    require_rank(wq, 4, "bilinear_mlr_scores level weight");
    const auto H = wq.dim(0), p = wq.dim(1), r = wq.dim(3);
    if (p * wq.dim(2) != x.dim(2) || wk.shape() != wq.shape()) {
      throw DimensionError("bilinear_mlr_scores: level " + std::to_string(l + 1) + " weights " +
                           shape_str(wq.shape()) + " / " + shape_str(wk.shape()) + " do not fit input " +
                           shape_str(x.shape()));
    }
    // (X (+)_k W_Q) as [B, H, T, p r]: each token's p column blocks
    // projected by their own W_Q block.
    const Var xb = column_blocks(x, p);
    auto features = [&](Var w) {
      const Var f = ad::permute(ad::matmul(xb, w), {0, 1, 3, 2, 4});  // [B, H, T, p, r]
      return ad::reshape(f, {B, H, T, p * r});
    };
    Var fq = features(wq);
    Var fk = features(wk);
    Var sl;
    if (qk_norm) {
      fq = ad::layer_norm(fq);
      fk = ad::layer_norm(fk);
      sl = ad::scale(ad::matmul(fq, ad::transpose(fk)), norm_constant / static_cast<double>(r * p));
    } else {
      sl = ad::matmul(fq, ad::transpose(fk));
    }
    total = total ? ad::add(*total, sl) : sl;
  }
  return *total;
}

Var bilinear_btt_scores(Var x, Var left, Var right, const BTTSpec& btt, bool qk_norm, double norm_constant) {
  require_rank(x, 3, "bilinear_btt_scores input");
  const auto B = x.dim(0), T = x.dim(1), D = x.dim(2);
  const auto a = btt.a, b = btt.b, c = btt.c, d = btt.d, s = btt.s;
  require_rank(left, 4, "bilinear_btt_scores left bank");
  require_rank(right, 4, "bilinear_btt_scores right bank");
  const auto H = left.dim(0);
  if (a * b != D || c * d != D || left.shape() != Shape{H, b, a, c * s} || right.shape() != Shape{H, c, d, b * s}) {
    throw DimensionError("bilinear_btt_scores: banks " + shape_str(left.shape()) + " / " + shape_str(right.shape()) +
                         " do not match a,b,c,d,s = " + std::to_string(a) + "," + std::to_string(b) + "," +
                         std::to_string(c) + "," + std::to_string(d) + "," + std::to_string(s) + " at D = " +
                         std::to_string(D));
  }
  // Rows of Z^T: z_t = P_L (+) W_Q P_R (+) W_K^T x_t for every token.
  Var y = ad::matmul(column_blocks(x, c), right);                      // [B, H, c, T, b s]
  y = ad::reshape(ad::permute(y, {0, 1, 3, 2, 4}), {B, H, T, c, b, s});
  y = ad::permute(y, {0, 1, 2, 4, 3, 5});                              // P_R: (c, b, s) -> (b, c, s)
  y = ad::permute(ad::reshape(y, {B, H, T, b, c * s}), {0, 1, 3, 2, 4});  // [B, H, b, T, c s]
  Var z = ad::matmul(y, ad::transpose(left));                          // [B, H, b, T, a]
  z = ad::reshape(ad::permute(z, {0, 1, 3, 4, 2}), {B, H, T, D});      // P_L: (b, a) -> (a, b)
  Var xh = head_axis(x);
  if (!qk_norm) return ad::matmul(xh, ad::transpose(z));
  xh = ad::layer_norm(xh);
  z = ad::layer_norm(z);
  return ad::scale(ad::matmul(xh, ad::transpose(z)), norm_constant / static_cast<double>(a * b));
}

Var raw_scores(Var x, const AttentionVars& w, const ScoreConfig& cfg) {
  switch (cfg.kind) {
    case ScoreKind::standard:
      return standard_scores(x, w.wq, w.wk);
    case ScoreKind::mlr_attention:
      return mlr_attention_scores(x, w.wq, w.wk, cfg.ranks);
    case ScoreKind::bilinear_mlr:
      return bilinear_mlr_scores(x, w.q_levels, w.k_levels, cfg.qk_norm, cfg.norm_constant);
    case ScoreKind::bilinear_btt:
      return bilinear_btt_scores(x, w.btt_left, w.btt_right, cfg.btt, cfg.qk_norm, cfg.norm_constant);
  }
  throw ValidationError("unknown score kind");
}

Var attention_forward(Var x, const AttentionVars& w, const ScoreConfig& cfg, const MaskSpec& mask) {
  require_rank(x, 3, "attention_forward input");
  const auto D = x.dim(2);
  cfg.validate(D);
  cfg.validate_length(x.dim(1));
  const Var logits = ad::scale(raw_scores(x, w, cfg), cfg.score_scale(D));
  const Var probs = ad::softmax_rows_masked(logits, mask);      // [B, H, T, T]
  const Var values = ad::matmul(head_axis(x), w.wv);             // [B, H, T, r]
  const Var heads = ad::matmul(ad::matmul(probs, values), ad::transpose(w.wo));  // [B, H, T, D]
  return ad::sum_axis(heads, 1);
}

// ---------------------------------------------------------------------------
// Tensor entry points

Tensor score_matrix_standard(const Tensor& X, const Tensor& wq, const Tensor& wk) {
  if (X.rank() != 2 || wq.rank() != 2 || wk.shape() != wq.shape() || wq.dim(0) != X.dim(1)) {
    throw DimensionError("score_matrix_standard: X " + shape_str(X.shape()) + ", W_Q " + shape_str(wq.shape()) +
                         ", W_K " + shape_str(wk.shape()));
  }
  Tape tape;
  const Var s = standard_scores(tape.constant(with_leading_one(X)), tape.constant(with_leading_one(wq)),
                                tape.constant(with_leading_one(wk)));
  return s.value().reshape({X.dim(0), X.dim(0)});
}

Tensor score_matrix_bilinear(const Tensor& X, const StructuredMatrix& mat, bool qk_norm, double norm_constant) {
  if (X.rank() != 2) throw DimensionError("score_matrix_bilinear: X must be [T, D], got " + shape_str(X.shape()));
  const auto T = X.dim(0), D = X.dim(1);
  if (mat.rows() != D || mat.cols() != D) {
    throw ValidationError("score_matrix_bilinear: structured matrix is " + std::to_string(mat.rows()) + "x" +
                          std::to_string(mat.cols()) + " but D = " + std::to_string(D));
  }
  Tape tape;
  const Var x = tape.constant(with_leading_one(X));
  const auto& f = mat.factors();
  Var s;
  if (const auto* mlr = std::get_if<MLRSpec>(&mat.spec())) {
    std::vector<Var> ql, kl;
    std::size_t pos = 0;
    for (std::size_t l = 0; l < mlr->levels.size(); ++l) {
      const auto& lv = mlr->levels[l];
      const auto p = pow2(static_cast<std::int64_t>(l));
      const std::vector<std::int64_t> equal(static_cast<std::size_t>(p), D / p);
      if (D % p != 0 || lv.row_blocks != equal || lv.col_blocks != equal) {
        throw ValidationError("score_matrix_bilinear: MLR level " + std::to_string(l + 1) +
                              " must have 2^(l-1) equal blocks");
      }
      const std::vector<Tensor> qs(f.begin() + static_cast<std::ptrdiff_t>(pos),
                                   f.begin() + static_cast<std::ptrdiff_t>(pos + p));
      const std::vector<Tensor> ks(f.begin() + static_cast<std::ptrdiff_t>(pos + p),
                                   f.begin() + static_cast<std::ptrdiff_t>(pos + 2 * p));
      ql.push_back(tape.constant(with_leading_one(stack(qs))));
      kl.push_back(tape.constant(with_leading_one(stack(ks))));
      pos += static_cast<std::size_t>(2 * p);
    }
    s = bilinear_mlr_scores(x, ql, kl, qk_norm, norm_constant);
  } else if (const auto* btt = std::get_if<BTTSpec>(&mat.spec())) {
    const auto b = static_cast<std::size_t>(btt->b);
    const std::vector<Tensor> left(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(b));
    const std::vector<Tensor> right(f.begin() + static_cast<std::ptrdiff_t>(b), f.end());
    s = bilinear_btt_scores(x, tape.constant(with_leading_one(stack(left))),
                            tape.constant(with_leading_one(stack(right))), *btt, qk_norm, norm_constant);
  } else {
    throw ValidationError("score_matrix_bilinear supports mlr and btt, got " + family_name(mat.spec()));
  }
  return s.value().reshape({T, T});
}

Tensor score_matrix_mlr_attention(const Tensor& X, const Tensor& wq, const Tensor& wk,
                                  const std::vector<std::int64_t>& ranks) {
  if (X.rank() != 2 || wq.rank() != 2 || wk.shape() != wq.shape() || wq.dim(0) != X.dim(1)) {
    throw DimensionError("score_matrix_mlr_attention: X " + shape_str(X.shape()) + ", W_Q " +
                         shape_str(wq.shape()) + ", W_K " + shape_str(wk.shape()));
  }
  const ScoreConfig cfg = ScoreConfig::mlr_attention(1, ranks);
  cfg.validate(wq.dim(1));
  cfg.validate_length(X.dim(0));
  Tape tape;
  const Var s = mlr_attention_scores(tape.constant(with_leading_one(X)), tape.constant(with_leading_one(wq)),
                                     tape.constant(with_leading_one(wk)), ranks);
  return s.value().reshape({X.dim(0), X.dim(0)});
}

Tensor attention_layer_forward(const Tensor& X, const AttentionWeights& w, const ScoreConfig& cfg,
                               const MaskSpec& mask) {
  if (X.rank() != 2) throw DimensionError("attention_layer_forward: X must be [T, D], got " + shape_str(X.shape()));
  Tape tape;
  const AttentionVars v = bind(tape, cfg, w, false);
  return attention_forward(tape.constant(with_leading_one(X)), v, cfg, mask).value().reshape(X.shape());
}

std::int64_t shared_level_count(std::int64_t j, std::int64_t jp, std::int64_t T, std::int64_t levels) {
  std::int64_t shared = 0;
  for (std::int64_t l = 0; l < levels; ++l) {
    const std::int64_t block = T / pow2(l);
    if (j / block != jp / block) break;
    shared = l + 1;
  }
  return shared;
}

double mlr_attention_score_entry(const Tensor& X, const Tensor& wq, const Tensor& wk,
                                 const std::vector<std::int64_t>& ranks, std::int64_t j, std::int64_t jp) {
  const auto T = X.dim(0), D = X.dim(1);
  const auto shared = shared_level_count(j, jp, T, static_cast<std::int64_t>(ranks.size()));
  double s = 0.0;
  std::int64_t col = 0;
  for (std::int64_t l = 0; l < shared; ++l) {
    for (std::int64_t t = col; t < col + ranks[static_cast<std::size_t>(l)]; ++t) {
      double q = 0.0, k = 0.0;
      for (std::int64_t i = 0; i < D; ++i) {
        q += X(j, i) * wq(i, t);
        k += X(jp, i) * wk(i, t);
      }
      s += q * k;
    }
    col += ranks[static_cast<std::size_t>(l)];
  }
  return s;
}

std::vector<GradCheckEntry> attention_grad_check(const ScoreConfig& cfg, std::int64_t D, std::int64_t T,
                                                 std::uint64_t seed) {
  cfg.validate(D);
  cfg.validate_length(T);
  Rng rng(seed);
  const Tensor x0 = rng.normal_tensor({1, T, D});
  const AttentionWeights w0 = random_attention_weights(cfg, D, rng);
  const Tensor probe = rng.normal_tensor({1, T, D});

  const auto loss_of = [&](Tape& tape, Var x, const AttentionVars& w) {
    return ad::sum(ad::mul(attention_forward(x, w, cfg, MaskSpec::causal()), tape.constant(probe)));
  };

  Tape tape;
  const Var x = tape.leaf(x0);
  AttentionVars vars = bind(tape, cfg, w0, true);
  const Gradients grads = backward(tape, loss_of(tape, x, vars));

  std::vector<GradCheckEntry> out;
  const Tensor fd_x = finite_diff_grad_scaled(
      [&](const Tensor& moved) {
        Tape t;
        return loss_of(t, t.constant(moved), bind(t, cfg, w0, false)).value().item();
      },
      x0);
  out.push_back({"x", relative_error(grads[x], fd_x)});

  std::vector<std::pair<std::string, Var>> named;
  visit_weights(cfg, vars, [&](const std::string& name, Var v) { named.emplace_back(name, v); });
  std::size_t index = 0;
  for_each_weight(cfg, w0, [&](const std::string& name, const Tensor& value) {
    const std::size_t target = index++;
    const Tensor numeric = finite_diff_grad_scaled(
        [&](const Tensor& moved) {
          AttentionWeights w = w0;
          std::size_t k = 0;
          for_each_weight(cfg, w, [&](const std::string&, Tensor& t) {
            if (k++ == target) t = moved;
          });
          Tape t;
          return loss_of(t, t.constant(x0), bind(t, cfg, w, false)).value().item();
        },
        value);
    out.push_back({name, relative_error(grads[named[target].second], numeric)});
  });
  return out;
}

Tensor sliding_window_scores(const Tensor& S, std::int64_t window) {
  if (S.rank() < 2 || S.dim(-1) != S.dim(-2)) {
    throw DimensionError("sliding_window_scores expects square scores, got " + shape_str(S.shape()));
  }
  if (window < 0) throw ValidationError("sliding window must be >= 0");
  const MaskSpec mask = MaskSpec::sliding_window(window);
  const auto T = S.dim(-1);
  std::vector<double> out(S.data().begin(), S.data().end());
  for (std::size_t base = 0; base < out.size(); base += static_cast<std::size_t>(T * T)) {
    for (std::int64_t j = 0; j < T; ++j) {
      for (std::int64_t k = 0; k < T; ++k) {
        if (!mask.admits(j, k)) out[base + static_cast<std::size_t>(j * T + k)] = -std::numeric_limits<double>::infinity();
      }
    }
  }
  return Tensor(S.shape(), std::move(out));
}

std::vector<KeyRange> retained_key_indices(const std::vector<std::int64_t>& ranks, std::int64_t T) {
  if (ranks.empty()) throw ValidationError("retained_key_indices: no levels");
  const auto finest = pow2(static_cast<std::int64_t>(ranks.size()) - 1);
  if (T < 1 || T % finest != 0) {
    throw ValidationError("retained_key_indices: 2^(L-1) = " + std::to_string(finest) + " must divide T = " +
                          std::to_string(T));
  }
  std::vector<KeyRange> out;
  for (std::size_t l = 0; l < ranks.size(); ++l) {
    const auto p = pow2(static_cast<std::int64_t>(l));
    out.push_back({static_cast<std::int64_t>(l + 1), T * (p - 1) / p, T});
  }
  return out;
}

std::int64_t retained_key_elements(const std::vector<std::int64_t>& ranks, std::int64_t T) {
  std::int64_t total = 0;
  const auto ranges = retained_key_indices(ranks, T);
  for (std::size_t l = 0; l < ranges.size(); ++l) total += ranks[l] * (ranges[l].end - ranges[l].begin);
  return total;
}

std::vector<std::int64_t> default_global_layers(std::int64_t depth) {
  std::vector<std::int64_t> out;
  for (std::int64_t l = 0; l < depth; l += 3) out.push_back(l);
  return out;
}

std::vector<MaskSpec> global_plus_swa_masks(std::int64_t depth, std::int64_t window,
                                            const std::vector<std::int64_t>& global_layers) {
  if (depth < 1) throw ValidationError("depth must be >= 1");
  if (window < 0) throw ValidationError("sliding window must be >= 0");
  for (auto g : global_layers) {
    if (g < 0 || g >= depth) {
      throw ValidationError("global layer index " + std::to_string(g) + " outside [0, " + std::to_string(depth) + ")");
    }
  }
  std::vector<MaskSpec> out;
  for (std::int64_t l = 0; l < depth; ++l) {
    const bool global = std::find(global_layers.begin(), global_layers.end(), l) != global_layers.end();
    out.push_back(global ? MaskSpec::causal() : MaskSpec::sliding_window(window));
  }
  return out;
}

}  // namespace structattn
