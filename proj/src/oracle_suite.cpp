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
#include "structattn/oracle_suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "structattn/attention.hpp"
#include "structattn/ops.hpp"
#include "structattn/random_specs.hpp"

namespace structattn {
namespace {

// Apply and bilinear against loops over the materialized matrix.
double structured_error(const StructuredMatrix& mat, Rng& rng) {
  const Tensor dense = materialize(mat);
  const auto m = mat.rows(), n = mat.cols();
  const Tensor x = rng.normal_tensor({m});
  const Tensor y = rng.normal_tensor({n});
  const Tensor my = apply(mat, y);
  double worst = 0.0, xmy = 0.0;
  for (std::int64_t i = 0; i < m; ++i) {
    double row = 0.0;
    for (std::int64_t j = 0; j < n; ++j) row += dense(i, j) * y[j];
    worst = std::max(worst, std::abs(row - my[i]));
    xmy += x[i] * row;
  }
  return std::max(worst, std::abs(xmy - bilinear(mat, x, y)));
}

OracleCheck family_check(const std::string& name, std::int64_t configs, Rng& rng,
                         const std::function<StructuredSpec(Rng&)>& gen) {
  OracleCheck c{name, configs, 0.0, 1e-10};
  for (std::int64_t i = 0; i < configs; ++i) {
    const auto mat = StructuredMatrix::random(gen(rng), rng);
    c.max_error = std::max(c.max_error, structured_error(mat, rng));
  }
  return c;
}

OracleCheck mlr_entry_check(Rng& rng) {
  OracleCheck c{"mlr-attention-entrywise", 0, 0.0, 1e-12};
  for (std::int64_t T = 1; T <= 16; ++T) {
    for (std::int64_t L = 1; L <= 4; ++L) {
      std::vector<std::int64_t> ranks;
      for (std::int64_t l = 0; l < L; ++l) ranks.push_back(rng.uniform_int(1, 3));
      const auto cfg = ScoreConfig::mlr_attention(1, ranks);
      try {
        cfg.validate_length(T);
      } catch (const ValidationError&) {
        continue;
      }
      std::int64_t r = 0;
      for (auto v : ranks) r += v;
      const auto D = rng.uniform_int(1, 6);
      const Tensor X = rng.normal_tensor({T, D});
      const Tensor wq = rng.normal_tensor({D, r});
      const Tensor wk = rng.normal_tensor({D, r});
      const Tensor S = score_matrix_mlr_attention(X, wq, wk, ranks);
      for (std::int64_t j = 0; j < T; ++j) {
        for (std::int64_t jp = 0; jp < T; ++jp) {
          c.max_error = std::max(c.max_error, std::abs(S(j, jp) - mlr_attention_score_entry(X, wq, wk, ranks, j, jp)));
        }
      }
      ++c.cases;
    }
  }
  return c;
}

// Bilinear MLR with one level, standard scoring and one-level MLR attention
// on the same factors.
OracleCheck single_level_check(std::int64_t configs, Rng& rng) {
  OracleCheck c{"single-level-score-kinds", configs, 0.0, 1e-12};
  for (std::int64_t i = 0; i < configs; ++i) {
    const auto T = rng.uniform_int(1, 12);
    const auto D = rng.uniform_int(1, 8);
    const auto r = rng.uniform_int(1, D);
    const auto mat = StructuredMatrix::random(MLRSpec::equal_blocks(D, D, {r}), rng);
    const Tensor X = rng.normal_tensor({T, D});
    const Tensor& wq = mat.factors()[0];
    const Tensor& wk = mat.factors()[1];
    const Tensor standard = score_matrix_standard(X, wq, wk);
    c.max_error = std::max({c.max_error, max_abs_diff(score_matrix_bilinear(X, mat), standard),
                            max_abs_diff(score_matrix_mlr_attention(X, wq, wk, {r}), standard)});
  }
  return c;
}

OracleCheck mlbtc_check(std::int64_t configs, Rng& rng) {
  OracleCheck c{"mlbtc-reductions", 2 * configs, 0.0, 1e-12};
  for (std::int64_t i = 0; i < configs; ++i) {
    const auto mlr_spec = random_mlr(rng, i % 2 == 0);
    const auto mlr = StructuredMatrix::random(mlr_spec, rng);
    const StructuredMatrix as_mlbtc(MLBTCSpec::from_mlr(mlr_spec), mlr.factors());
    c.max_error = std::max(c.max_error, max_abs_diff(materialize(as_mlbtc), materialize(mlr)));

    const auto btt_spec = random_btt(rng);
    const auto btt = StructuredMatrix::random(btt_spec, rng);
    const StructuredMatrix btt_mlbtc(MLBTCSpec::from_btt(btt_spec), btt.factors());
    c.max_error = std::max(c.max_error, max_abs_diff(materialize(btt_mlbtc), materialize(btt)));
  }
  return c;
}

}  // namespace

std::vector<OracleCheck> run_oracle_suite(std::uint64_t seed, std::int64_t configs) {
  Rng rng(seed);
  std::vector<OracleCheck> out;
  out.push_back(family_check("low_rank", configs, rng, [](Rng& r) { return StructuredSpec{random_low_rank(r)}; }));
  out.push_back(family_check("block_diag", configs, rng, [](Rng& r) { return StructuredSpec{random_block_diag(r)}; }));
  out.push_back(family_check("mlr", configs, rng, [](Rng& r) { return StructuredSpec{random_mlr(r, r.uniform() < 0.5)}; }));
  out.push_back(family_check("btt", configs, rng, [](Rng& r) { return StructuredSpec{random_btt(r)}; }));
  out.push_back(family_check("mlbtc", configs, rng, [](Rng& r) { return StructuredSpec{random_mlbtc(r)}; }));
  out.push_back(mlr_entry_check(rng));
  out.push_back(single_level_check(configs, rng));
  out.push_back(mlbtc_check(configs, rng));
  return out;
}

std::string render_oracle_csv(const std::vector<OracleCheck>& checks) {
  std::string out = "check,cases,max_error,tolerance,status\n";
  char buf[256];
  for (const auto& c : checks) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%.3e,%.0e,%s\n", c.name.c_str(), static_cast<long long>(c.cases),
                  c.max_error, c.tolerance, c.passed() ? "ok" : "FAIL");
    out += buf;
  }
  return out;
}

}  // namespace structattn
