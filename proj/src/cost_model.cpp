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

#include "structattn/cost_model.hpp"

#include <boost/rational.hpp>
#include <cmath>
#include <iostream>
#include <numeric>
#include <sstream>

namespace structattn {
namespace {

using Rational = boost::rational<std::int64_t>;

std::int64_t to_count(const Rational& value, const char* what) {
  if (value.denominator() == 1) return value.numerator();
  const auto rounded = static_cast<std::int64_t>(std::llround(boost::rational_cast<long double>(value)));
  std::clog << "warning: " << what << " is non-integral (" << value << "), rounded to " << rounded << "\n";
  return rounded;
}

std::int64_t pow2(std::size_t k) { return std::int64_t{1} << k; }

void check_dims(std::int64_t T, std::int64_t D) {
  if (T < 1 || D < 1) throw ValidationError("T and D must be >= 1");
}

void check_ranks(const std::vector<std::int64_t>& ranks) {
  if (ranks.empty()) throw ValidationError("rank list is empty");
  if (ranks.size() >= 62) throw ValidationError("too many levels");
  for (auto r : ranks) {
    if (r < 0) throw ValidationError("level ranks must be >= 0");
  }
}

void check_level_divides(std::int64_t T, const std::vector<std::int64_t>& ranks) {
  const auto finest = pow2(ranks.size() - 1);
  if (T % finest != 0) {
    throw ValidationError("2^(L-1) = " + std::to_string(finest) + " must divide T = " + std::to_string(T));
  }
}

std::int64_t rank_sum(const std::vector<std::int64_t>& ranks) {
  return std::accumulate(ranks.begin(), ranks.end(), std::int64_t{0});
}

// sum_l r_l / 2^(l-1)
Rational halving_sum(const std::vector<std::int64_t>& ranks) {
  Rational s(0);
  for (std::size_t l = 0; l < ranks.size(); ++l) s += Rational(ranks[l], pow2(l));
  return s;
}

// sum_l 2^(l-1) r_l
std::int64_t doubling_sum(const std::vector<std::int64_t>& ranks) {
  std::int64_t s = 0;
  for (std::size_t l = 0; l < ranks.size(); ++l) s += pow2(l) * ranks[l];
  return s;
}

std::int64_t exact_sqrt(std::int64_t D) {
  auto root = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(D))));
  while (root * root > D) --root;
  while ((root + 1) * (root + 1) <= D) ++root;
  if (root * root != D) throw ValidationError("D = " + std::to_string(D) + " is not a perfect square");
  return root;
}

// Score (T^2) and remaining terms of each table row.
std::pair<std::int64_t, std::int64_t> mlr_split(std::int64_t T, std::int64_t D, const std::vector<std::int64_t>& ranks,
                                                MlrOrder order) {
  check_dims(T, D);
  check_ranks(ranks);
  const std::int64_t r = rank_sum(ranks);
  const std::int64_t L = static_cast<std::int64_t>(ranks.size());
  const std::int64_t proj = 2 * T * D * r;
  switch (order) {
    case MlrOrder::low_rank:
      return {T * T * r, proj};
    case MlrOrder::merged: {
      Rational tail = halving_sum(ranks) - Rational(1, 2);
      for (std::size_t l = 1; l <= ranks.size(); ++l) tail += Rational(1, pow2(l));
      return {T * T * D, T * D * D + to_count(tail * (D * D), "merged-order weight term")};
    }
    case MlrOrder::per_level_merged: {
      Rational tail(0);
      for (std::size_t l = 0; l < ranks.size(); ++l) {
        tail += Rational(D * D * ranks[l], pow2(l)) + Rational(T * D * D, pow2(l));
      }
      return {T * T * L * D, to_count(tail, "per-level merged-order term")};
    }
    case MlrOrder::optimal:
      return {T * T * doubling_sum(ranks), proj};
    case MlrOrder::per_level_nested:
      return {L * T * T * D, proj};
    case MlrOrder::summed_nested:
      return {T * T * D, proj};
  }
  throw ValidationError("unknown contraction order");
}

}  // namespace

const std::vector<MlrOrder>& all_mlr_orders() {
  static const std::vector<MlrOrder> orders = {MlrOrder::low_rank,        MlrOrder::merged,
                                               MlrOrder::per_level_merged, MlrOrder::optimal,
                                               MlrOrder::per_level_nested, MlrOrder::summed_nested};
  return orders;
}

std::string order_id(MlrOrder order) {
  switch (order) {
    case MlrOrder::low_rank: return "low_rank";
    case MlrOrder::merged: return "merged";
    case MlrOrder::per_level_merged: return "per_level_merged";
    case MlrOrder::optimal: return "optimal";
    case MlrOrder::per_level_nested: return "per_level_nested";
    case MlrOrder::summed_nested: return "summed_nested";
  }
  return "?";
}

std::string order_id(BttOrder order) { return order == BttOrder::factored ? "factored" : "optimal"; }

MlrOrder parse_mlr_order(const std::string& id) {
  for (auto o : all_mlr_orders()) {
    if (order_id(o) == id) return o;
  }
  throw ValidationError("unknown Bilinear MLR contraction order '" + id + "'");
}

BttOrder parse_btt_order(const std::string& id) {
  if (id == "factored") return BttOrder::factored;
  if (id == "optimal") return BttOrder::optimal;
  throw ValidationError("unknown Bilinear BTT contraction order '" + id + "'");
}

bool is_verbatim_formula(MlrOrder order) {
  return order == MlrOrder::merged || order == MlrOrder::per_level_merged;
}

std::int64_t bilinear_mlr_flops(std::int64_t T, std::int64_t D, const std::vector<std::int64_t>& ranks, MlrOrder order) {
  const auto [score, rest] = mlr_split(T, D, ranks, order);
  return score + rest;
}

std::int64_t bilinear_btt_flops(std::int64_t T, std::int64_t D, std::int64_t s, BttOrder order) {
  const auto root = exact_sqrt(D);
  return bilinear_btt_flops(T, BTTSpec{root, root, root, root, s}, order);
}

std::int64_t bilinear_btt_flops(std::int64_t T, const BTTSpec& spec, BttOrder order) {
  return bilinear_btt_cost(T, spec, order).total_flops();
}

std::int64_t standard_score_flops(std::int64_t T, std::int64_t r) { return T * T * r; }

std::int64_t mlr_attention_score_flops(std::int64_t T, const std::vector<std::int64_t>& ranks) {
  check_ranks(ranks);
  check_level_divides(T, ranks);
  return to_count(halving_sum(ranks) * (T * T), "MLR attention score count");
}

std::int64_t kv_cache_size(std::int64_t T, const std::vector<std::int64_t>& ranks) {
  check_ranks(ranks);
  check_level_divides(T, ranks);
  return to_count(halving_sum(ranks) * T, "KV cache size");
}

CostReport standard_attention_cost(std::int64_t T, std::int64_t D, std::int64_t r) {
  check_dims(T, D);
  CostReport c;
  c.score_flops = standard_score_flops(T, r);
  c.projection_flops = 2 * T * D * r;
  c.params = 2 * D * r;
  c.rank_bound = std::min({T, D, r});
  c.kv_cache_elements = T * r;
  c.contraction_order = "standard";
  return c;
}

CostReport mlr_attention_cost(std::int64_t T, std::int64_t D, const std::vector<std::int64_t>& ranks) {
  check_dims(T, D);
  CostReport c;
  c.score_flops = mlr_attention_score_flops(T, ranks);
  c.projection_flops = 2 * T * D * rank_sum(ranks);
  c.params = 2 * D * rank_sum(ranks);
  c.rank_bound = std::min(T, doubling_sum(ranks));
  c.kv_cache_elements = kv_cache_size(T, ranks);
  c.contraction_order = "mlr_attention";
  return c;
}

CostReport bilinear_mlr_cost(std::int64_t T, std::int64_t D, const std::vector<std::int64_t>& ranks, MlrOrder order) {
  const auto [score, rest] = mlr_split(T, D, ranks, order);
  CostReport c;
  c.score_flops = score;
  c.projection_flops = rest;
  c.params = 2 * D * rank_sum(ranks);
  c.rank_bound = order == MlrOrder::low_rank ? std::min(D, rank_sum(ranks)) : std::min(D, doubling_sum(ranks));
  // Orders that project keys before the score product cache key features;
  // the merged orders have to keep X.
  if (order == MlrOrder::low_rank) {
    c.kv_cache_elements = T * rank_sum(ranks);
  } else if (is_verbatim_formula(order)) {
    c.kv_cache_elements = T * D;
  } else {
    c.kv_cache_elements = T * doubling_sum(ranks);
  }
  c.contraction_order = order_id(order);
  c.verbatim_formula = is_verbatim_formula(order);
  return c;
}

CostReport bilinear_btt_cost(std::int64_t T, const BTTSpec& spec, BttOrder order) {
  validate(spec);
  if (spec.m() != spec.n()) {
    throw ValidationError("Bilinear BTT needs ab = cd, got " + std::to_string(spec.m()) + " and " +
                          std::to_string(spec.n()));
  }
  const std::int64_t D = spec.m();
  check_dims(T, D);
  CostReport c;
  c.projection_flops = spec.s * T * D * (spec.b + spec.c);
  c.score_flops = order == BttOrder::optimal ? T * T * D : spec.s * T * T * spec.b * spec.c;
  c.params = param_count(spec);
  c.rank_bound = rank_upper_bound(spec);
  c.kv_cache_elements = order == BttOrder::optimal ? T * D : T * spec.b * spec.c * spec.s;
  c.contraction_order = order_id(order);
  return c;
}

CostReport table1_summary(const StructuredSpec& spec) {
  const bool supported = std::holds_alternative<DenseSpec>(spec) || std::holds_alternative<LowRankSpec>(spec) ||
                         std::holds_alternative<MLRSpec>(spec) || std::holds_alternative<BTTSpec>(spec);
  if (!supported) throw ValidationError("table1_summary supports dense, low_rank, mlr and btt");
  if (rows(spec) != cols(spec)) {
    throw ValidationError("table1_summary needs a square spec, got " + std::to_string(rows(spec)) + "x" +
                          std::to_string(cols(spec)));
  }
  CostReport c;
  c.params = param_count(spec);
  c.rank_bound = rank_upper_bound(spec);
  c.score_flops = c.params;
  c.contraction_order = "factor_application";
  return c;
}

std::string render_cost_csv(const std::vector<CostRow>& rows) {
  std::ostringstream os;
  os << "config_id,family,order,score_flops,projection_flops,params,rank_bound,kv_cache\n";
  for (const auto& row : rows) {
    const auto& c = row.report;
    os << row.config_id << ',' << row.family << ',' << c.contraction_order << ',' << c.score_flops << ','
       << c.projection_flops << ',' << c.params << ',' << c.rank_bound << ',' << c.kv_cache_elements << '\n';
  }
  return os.str();
}

std::string render_cost_markdown(const std::vector<CostRow>& rows) {
  std::ostringstream os;
  os << "| config | family | order | score FLOPs | other FLOPs | total | params | rank | KV cache |\n"
     << "|---|---|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& row : rows) {
    const auto& c = row.report;
    os << "| " << row.config_id << " | " << row.family << " | " << c.contraction_order
       << (c.verbatim_formula ? " (verbatim-formula)" : "") << " | " << c.score_flops << " | " << c.projection_flops
       << " | " << c.total_flops() << " | " << c.params << " | " << c.rank_bound << " | " << c.kv_cache_elements
       << " |\n";
  }
  return os.str();
}

}  // namespace structattn
