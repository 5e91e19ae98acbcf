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

// Closed-form operation counts for every scoring configuration.
//
// Counts are multiply-accumulates: a [m, k] x [k, n] product costs m*k*n.
// This is the convention of the contraction-order tables (2TDr for the two
// projections X W_Q and X W_K), and it is what FlopTally::macs records at
// runtime.

#ifndef STRUCTATTN_COST_MODEL_HPP_
#define STRUCTATTN_COST_MODEL_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "structattn/structured.hpp"

namespace structattn {

/// Contraction orders for Bilinear MLR, one per table row.
enum class MlrOrder {
  low_rank,          // X W_Q W_K^T X^T
  merged,            // X (sum_l (+)_k W_Q W_K^T) X^T
  per_level_merged,  // sum_l X ((+)_k W_Q W_K^T) X^T
  optimal,           // sum_l (X (+)_k W_Q) ((+)_k W_K^T X^T)
  per_level_nested,  // sum_l X ((+)_k W_Q (+)_k W_K^T X^T)
  summed_nested,     // X sum_l ((+)_k W_Q (+)_k W_K^T X^T)
};

/// Contraction orders for Bilinear BTT.
enum class BttOrder {
  factored,  // (X P_L (+) W_Q) (P_R (+) W_K^T X^T)
  optimal,   // X (P_L (+) W_Q P_R (+) W_K^T X^T)
};

const std::vector<MlrOrder>& all_mlr_orders();
std::string order_id(MlrOrder order);
std::string order_id(BttOrder order);
MlrOrder parse_mlr_order(const std::string& id);
BttOrder parse_btt_order(const std::string& id);
/// Rows whose printed formula carries lower-order terms that are evaluated
/// as printed rather than re-derived.
bool is_verbatim_formula(MlrOrder order);

/// p_l = 2^(l-1); the low-rank row uses r = sum_l r_l.
std::int64_t bilinear_mlr_flops(std::int64_t T, std::int64_t D, const std::vector<std::int64_t>& ranks, MlrOrder order);

/// a = b = c = d = sqrt(D); D must be a perfect square.
std::int64_t bilinear_btt_flops(std::int64_t T, std::int64_t D, std::int64_t s, BttOrder order);
/// Any a, b, c, d with ab = cd = D:
///   factored: s T^2 b c + s T D (b + c)
///   optimal:  T^2 D     + s T D (b + c)
std::int64_t bilinear_btt_flops(std::int64_t T, const BTTSpec& spec, BttOrder order);

/// T^2 r.
std::int64_t standard_score_flops(std::int64_t T, std::int64_t r);
/// T^2 sum_l r_l / 2^(l-1); 2^(L-1) must divide T.
std::int64_t mlr_attention_score_flops(std::int64_t T, const std::vector<std::int64_t>& ranks);
/// T sum_l r_l / 2^(l-1); 2^(L-1) must divide T.
std::int64_t kv_cache_size(std::int64_t T, const std::vector<std::int64_t>& ranks);

struct CostReport {
  std::int64_t score_flops = 0;       // terms quadratic in T
  std::int64_t projection_flops = 0;  // remaining terms: projections, weight merges
  std::int64_t params = 0;
  std::int64_t rank_bound = 0;
  std::int64_t kv_cache_elements = 0;
  std::string contraction_order;
  bool verbatim_formula = false;

  std::int64_t total_flops() const { return score_flops + projection_flops; }
};

CostReport standard_attention_cost(std::int64_t T, std::int64_t D, std::int64_t r);
CostReport mlr_attention_cost(std::int64_t T, std::int64_t D, const std::vector<std::int64_t>& ranks);
CostReport bilinear_mlr_cost(std::int64_t T, std::int64_t D, const std::vector<std::int64_t>& ranks, MlrOrder order);
CostReport bilinear_btt_cost(std::int64_t T, const BTTSpec& spec, BttOrder order);

/// Parameter count and rank bound for a square Dense, LowRank, MLR or BTT
/// spec. score_flops holds the factor-application cost of x^T M y.
CostReport table1_summary(const StructuredSpec& spec);

struct CostRow {
  std::string config_id;
  std::string family;
  CostReport report;
};

/// Columns: config_id, family, order, score_flops, projection_flops, params,
/// rank_bound, kv_cache.
std::string render_cost_csv(const std::vector<CostRow>& rows);
std::string render_cost_markdown(const std::vector<CostRow>& rows);

}  // namespace structattn

#endif  // STRUCTATTN_COST_MODEL_HPP_
