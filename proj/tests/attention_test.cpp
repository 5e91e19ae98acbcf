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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "attention_oracles.hpp"
#include "structattn/cost_model.hpp"
#include "structattn/ops.hpp"

namespace structattn {
namespace {

using testing::dense_score_oracle;
using testing::mlr_score_entry_oracle;
using testing::naive_matmul;
using testing::naive_transpose;

/// r split into L positive parts.
std::vector<std::int64_t> random_ranks(Rng& rng, std::int64_t r, std::int64_t L) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(L), 1);
  for (std::int64_t extra = r - L; extra > 0; --extra) out[static_cast<std::size_t>(rng.uniform_int(0, L - 1))]++;
  return out;
}

Tensor head0(const Tensor& w) { return w.reshape({w.dim(1), w.dim(2)}); }

TEST(StandardScores, IdentityWeightsOnOrthonormalRowsGiveIdentity) {
  const Tensor I = Tensor::identity(3);
  EXPECT_LT(max_abs_diff(score_matrix_standard(I, I, I), I), 1e-15);
}

TEST(StandardScores, SingleTokenIsTheBilinearForm) {
  Rng rng(1);
  const Tensor x = rng.normal_tensor({1, 5});
  const Tensor wq = rng.normal_tensor({5, 2});
  const Tensor wk = rng.normal_tensor({5, 2});
  const Tensor s = score_matrix_standard(x, wq, wk);
  ASSERT_EQ(s.shape(), (Shape{1, 1}));
  const Tensor M = naive_matmul(wq, naive_transpose(wk));
  EXPECT_NEAR(s(0, 0), testing::naive_bilinear(testing::row(x, 0), M, testing::row(x, 0)), 1e-12);
}

TEST(StandardScores, MatchesEntrywiseBilinearForm) {
  Rng rng(2);
  const Tensor X = rng.normal_tensor({4, 6});
  const Tensor wq = rng.normal_tensor({6, 2});
  const Tensor wk = rng.normal_tensor({6, 2});
  const Tensor M = naive_matmul(wq, naive_transpose(wk));
  EXPECT_LT(max_abs_diff(score_matrix_standard(X, wq, wk), dense_score_oracle(X, M)), 1e-12);
}

TEST(StandardScores, ShapeMismatchThrows) {
  EXPECT_THROW(score_matrix_standard(Tensor::zeros({3, 4}), Tensor::zeros({5, 2}), Tensor::zeros({5, 2})),
               DimensionError);
  EXPECT_THROW(score_matrix_standard(Tensor::zeros({3, 4}), Tensor::zeros({4, 2}), Tensor::zeros({4, 3})),
               DimensionError);
}

TEST(MlrAttention, EntriesUseOnlySharedLevels) {
  Rng rng(3);
  const Tensor X = rng.normal_tensor({4, 4});
  const Tensor wq = rng.normal_tensor({4, 2});
  const Tensor wk = rng.normal_tensor({4, 2});
  const Tensor s = score_matrix_mlr_attention(X, wq, wk, {1, 1});
  auto term = [&](std::int64_t j, std::int64_t jp, std::int64_t col) {
    double q = 0.0, k = 0.0;
    for (std::int64_t i = 0; i < 4; ++i) {
      q += X(j, i) * wq(i, col);
      k += X(jp, i) * wk(i, col);
    }
    return q * k;
  };
  EXPECT_NEAR(s(0, 3), term(0, 3, 0), 1e-14);
  EXPECT_NEAR(s(0, 1), term(0, 1, 0) + term(0, 1, 1), 1e-14);
  EXPECT_NEAR(s(2, 3), term(2, 3, 0) + term(2, 3, 1), 1e-14);
  EXPECT_NEAR(s(1, 2), term(1, 2, 0), 1e-14);
}

TEST(MlrAttention, ThreeLevelsAtEightTokensMatchEntrywiseOracle) {
  Rng rng(4);
  const std::vector<std::int64_t> ranks{2, 1, 1};
  const Tensor X = rng.normal_tensor({8, 6});
  const Tensor wq = rng.normal_tensor({6, 4});
  const Tensor wk = rng.normal_tensor({6, 4});
  const Tensor s = score_matrix_mlr_attention(X, wq, wk, ranks);
  const Tensor oracle = mlr_score_entry_oracle(X, wq, wk, ranks);
  for (std::int64_t j = 0; j < 8; ++j) {
    for (std::int64_t jp = 0; jp < 8; ++jp) EXPECT_NEAR(s(j, jp), oracle(j, jp), 1e-12) << j << "," << jp;
  }
  // Tokens 0 and 3 sit in different quarters but the same half.
  EXPECT_EQ(testing::shared_levels(0, 3, 8, 3), 2);
  EXPECT_EQ(testing::shared_levels(0, 1, 8, 3), 3);
  EXPECT_EQ(testing::shared_levels(0, 4, 8, 3), 1);
}

TEST(MlrAttention, BlockBuiltScoresMatchEntrywiseFormulaForAllSmallConfigs) {
  Rng rng(5);
  int checked = 0;
  for (std::int64_t L = 1; L <= 4; ++L) {
    const std::int64_t finest = std::int64_t{1} << (L - 1);
    for (std::int64_t T = finest; T <= 16; T += finest) {
      if (L > 1 && T <= finest) continue;
      for (int trial = 0; trial < 3; ++trial) {
        const auto r = rng.uniform_int(L, L + 5);
        const auto D = rng.uniform_int(1, 8);
        const auto ranks = random_ranks(rng, r, L);
        const Tensor X = rng.normal_tensor({T, D});
        const Tensor wq = rng.normal_tensor({D, r});
        const Tensor wk = rng.normal_tensor({D, r});
        EXPECT_LT(max_abs_diff(score_matrix_mlr_attention(X, wq, wk, ranks), mlr_score_entry_oracle(X, wq, wk, ranks)),
                  1e-12)
            << "L=" << L << " T=" << T;
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(MlrAttention, LengthRequirementsAreEnforced) {
  const Tensor w = Tensor::zeros({4, 4});
  EXPECT_THROW(score_matrix_mlr_attention(Tensor::zeros({6, 4}), w, w, {1, 1, 2}), ValidationError);
  EXPECT_THROW(score_matrix_mlr_attention(Tensor::zeros({4, 4}), w, w, {1, 1, 2}), ValidationError);
  EXPECT_THROW(score_matrix_mlr_attention(Tensor::zeros({8, 4}), w, w, {1, 1, 1}), ValidationError);
  EXPECT_NO_THROW(score_matrix_mlr_attention(Tensor::zeros({8, 4}), w, w, {1, 1, 2}));
  EXPECT_NO_THROW(score_matrix_mlr_attention(Tensor::zeros({3, 4}), w, w, {4}));
}

TEST(MlrAttention, SoftmaxedRowsSumToOneWithZeroFutureWeight) {
  Rng rng(6);
  for (std::int64_t L = 1; L <= 4; ++L) {
    const std::int64_t finest = std::int64_t{1} << (L - 1);
    for (std::int64_t T : {2 * finest, 4 * finest}) {
      const auto ranks = random_ranks(rng, 6, L);
      const Tensor X = rng.normal_tensor({T, 5}, 2.0);
      const Tensor s = score_matrix_mlr_attention(X, rng.normal_tensor({5, 6}), rng.normal_tensor({5, 6}), ranks);
      const Tensor p = softmax_rows_masked(s, MaskSpec::causal());
      for (std::int64_t j = 0; j < T; ++j) {
        double total = 0.0;
        for (std::int64_t k = 0; k < T; ++k) {
          if (k > j) EXPECT_EQ(p(j, k), 0.0);
          total += p(j, k);
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
    }
  }
}

TEST(Reduction, SingleLevelBilinearMlrEqualsStandardEqualsMlrAttention) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto D = rng.uniform_int(1, 12);
    const auto r = rng.uniform_int(1, 12);
    const auto T = rng.uniform_int(1, 9);
    const Tensor X = rng.normal_tensor({T, D});
    const StructuredMatrix mlr = StructuredMatrix::random(MLRSpec::equal_blocks(D, D, {r}), rng);
    const Tensor& L = mlr.factors()[0];
    const Tensor& R = mlr.factors()[1];
    const Tensor standard = score_matrix_standard(X, L, R);
    EXPECT_LT(max_abs_diff(score_matrix_bilinear(X, mlr), standard), 1e-12);
    EXPECT_LT(max_abs_diff(score_matrix_mlr_attention(X, L, R, {r}), standard), 1e-12);
  }
}

TEST(BilinearScores, BttMatchesMaterializedOracle) {
  Rng rng(8);
  const StructuredMatrix btt = StructuredMatrix::random(BTTSpec{2, 2, 2, 2, 1}, rng);
  const Tensor X = rng.normal_tensor({3, 4});
  EXPECT_LT(max_abs_diff(score_matrix_bilinear(X, btt), dense_score_oracle(X, materialize(btt))), 1e-10);
}

TEST(BilinearScores, TwoLevelMlrMatchesMaterializedOracle) {
  Rng rng(9);
  const StructuredMatrix mlr = StructuredMatrix::random(MLRSpec::equal_blocks(8, 8, {2, 1}), rng);
  const Tensor X = rng.normal_tensor({4, 8});
  EXPECT_LT(max_abs_diff(score_matrix_bilinear(X, mlr), dense_score_oracle(X, materialize(mlr))), 1e-10);
}

TEST(BilinearScores, RandomConfigsMatchMaterializedOracle) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const auto T = rng.uniform_int(1, 8);
    {
      const auto L = rng.uniform_int(1, 4);
      const std::int64_t finest = std::int64_t{1} << (L - 1);
      const auto D = finest * rng.uniform_int(1, 16 / finest);
      std::vector<std::int64_t> ranks;
      for (std::int64_t l = 0; l < L; ++l) ranks.push_back(rng.uniform_int(1, 4));
      const StructuredMatrix mlr = StructuredMatrix::random(MLRSpec::equal_blocks(D, D, ranks), rng);
      const Tensor X = rng.normal_tensor({T, D});
      EXPECT_LT(max_abs_diff(score_matrix_bilinear(X, mlr), dense_score_oracle(X, materialize(mlr))), 1e-10);
    }
    {
      // ab = cd = D <= 16
      const std::int64_t Ds[] = {1, 2, 4, 6, 8, 9, 12, 16};
      const auto D = Ds[rng.uniform_int(0, 7)];
      std::vector<std::int64_t> divisors;
      for (std::int64_t k = 1; k <= D; ++k) {
        if (D % k == 0) divisors.push_back(k);
      }
      const auto a = divisors[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(divisors.size()) - 1))];
      const auto c = divisors[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(divisors.size()) - 1))];
      const BTTSpec spec{a, D / a, c, D / c, rng.uniform_int(1, 3)};
      const StructuredMatrix btt = StructuredMatrix::random(spec, rng);
      const Tensor X = rng.normal_tensor({T, D});
      EXPECT_LT(max_abs_diff(score_matrix_bilinear(X, btt), dense_score_oracle(X, materialize(btt))), 1e-10);
    }
  }
}

TEST(BilinearScores, QkNormScalesNormalizedFeatures) {
  // Single level, one block: S = LN(X L) LN(X R)^T C / r.
  Rng rng(11);
  const StructuredMatrix mlr = StructuredMatrix::random(MLRSpec::equal_blocks(6, 6, {3}), rng);
  const Tensor X = rng.normal_tensor({5, 6});
  const double C = 2.5;
  const Tensor fq = layer_norm(naive_matmul(X, mlr.factors()[0]));
  const Tensor fk = layer_norm(naive_matmul(X, mlr.factors()[1]));
  const Tensor expect = naive_matmul(fq, naive_transpose(fk));
  const Tensor got = score_matrix_bilinear(X, mlr, true, C);
  for (std::int64_t j = 0; j < 5; ++j) {
    for (std::int64_t k = 0; k < 5; ++k) EXPECT_NEAR(got(j, k), expect(j, k) * C / 3.0, 1e-12);
  }
}

TEST(BilinearScores, RejectsMismatchedOrUnsupportedSpecs) {
  Rng rng(12);
  const StructuredMatrix mlr = StructuredMatrix::random(MLRSpec::equal_blocks(8, 8, {1, 1}), rng);
  EXPECT_THROW(score_matrix_bilinear(Tensor::zeros({2, 6}), mlr), ValidationError);
  const StructuredMatrix lr = StructuredMatrix::random(LowRankSpec{4, 4, 2}, rng);
  EXPECT_THROW(score_matrix_bilinear(Tensor::zeros({2, 4}), lr), ValidationError);
  MLRLevel l1{1, {8}, {8}};
  MLRLevel l2{1, {3, 5}, {3, 5}};
  const StructuredMatrix uneven = StructuredMatrix::random(MLRSpec::uneven(8, 8, {l1, l2}), rng);
  EXPECT_THROW(score_matrix_bilinear(Tensor::zeros({2, 8}), uneven), ValidationError);
}

TEST(SlidingWindow, FullWindowEqualsCausalMasking) {
  Rng rng(13);
  const Tensor S = rng.normal_tensor({5, 5});
  const Tensor masked = sliding_window_scores(S, 5);
  EXPECT_EQ(max_abs_diff(softmax_rows_masked(masked, MaskSpec::none()), softmax_rows_masked(S, MaskSpec::causal())),
            0.0);
}

TEST(SlidingWindow, ZeroWindowLeavesOnlyTheDiagonal) {
  Rng rng(14);
  const Tensor p = softmax_rows_masked(sliding_window_scores(rng.normal_tensor({4, 4}), 0), MaskSpec::none());
  for (std::int64_t j = 0; j < 4; ++j) {
    for (std::int64_t k = 0; k < 4; ++k) EXPECT_EQ(p(j, k), j == k ? 1.0 : 0.0);
  }
}

TEST(SlidingWindow, AdmitsExactlyTheWindowBehindEachToken) {
  const Tensor masked = sliding_window_scores(Tensor::zeros({6, 6}), 2);
  for (std::int64_t j = 0; j < 6; ++j) {
    for (std::int64_t k = 0; k < 6; ++k) {
      const bool admitted = k <= j && j - k <= 2;
      EXPECT_EQ(std::isfinite(masked(j, k)), admitted) << j << "," << k;
    }
  }
  EXPECT_TRUE(std::isinf(masked(5, 2)));
  EXPECT_EQ(masked(5, 3), 0.0);
}

TEST(SlidingWindow, LayerStackPlacesGlobalLayers) {
  EXPECT_EQ(default_global_layers(6), (std::vector<std::int64_t>{0, 3}));
  const auto masks = global_plus_swa_masks(6, 4, default_global_layers(6));
  ASSERT_EQ(masks.size(), 6u);
  EXPECT_TRUE(masks[0].admits(10, 0));
  EXPECT_FALSE(masks[1].admits(10, 0));
  EXPECT_TRUE(masks[1].admits(10, 6));
  EXPECT_TRUE(masks[3].admits(10, 0));
  EXPECT_THROW(global_plus_swa_masks(6, 4, {6}), ValidationError);
}

TEST(KeyCache, SingleLevelKeepsEveryKey) {
  const auto ranges = retained_key_indices({64}, 100);
  ASSERT_EQ(ranges.size(), 1u);
  EXPECT_EQ(ranges[0].begin, 0);
  EXPECT_EQ(ranges[0].end, 100);
}

TEST(KeyCache, TwoLevelsKeepTheLastHalfAtLevelTwo) {
  const auto ranges = retained_key_indices({2, 2}, 8);
  ASSERT_EQ(ranges.size(), 2u);
  EXPECT_EQ(ranges[0].begin, 0);
  EXPECT_EQ(ranges[0].end, 8);
  EXPECT_EQ(ranges[1].level, 2);
  EXPECT_EQ(ranges[1].begin, 4);
  EXPECT_EQ(ranges[1].end, 8);
}

TEST(KeyCache, EightUniformLevelsGiveFourfoldSavings) {
  const std::vector<std::int64_t> ranks(8, 8);
  EXPECT_EQ(retained_key_elements(ranks, 1024), 16320);
  EXPECT_EQ(retained_key_elements(ranks, 1024), kv_cache_size(1024, ranks));
  EXPECT_THROW(retained_key_indices(ranks, 1000), ValidationError);
}

TEST(KeyCache, MatchesCostModelForRandomAllocations) {
  Rng rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    const auto L = rng.uniform_int(1, 6);
    const auto T = (std::int64_t{1} << (L - 1)) * rng.uniform_int(2, 20);
    const auto ranks = random_ranks(rng, rng.uniform_int(L, 40), L);
    EXPECT_EQ(retained_key_elements(ranks, T), kv_cache_size(T, ranks));
  }
}

TEST(Layer, SingleTokenOutputIsTheSummedValueOutputMap) {
  Rng rng(16);
  const ScoreConfig cfg = ScoreConfig::standard(2);
  const AttentionWeights w = random_attention_weights(cfg, 6, rng);
  const Tensor X = rng.normal_tensor({1, 6});
  Tensor expect = Tensor::zeros({1, 6});
  for (std::int64_t h = 0; h < 2; ++h) {
    const Tensor o = naive_matmul(naive_matmul(X, testing::head_slice(w.wv, h)),
                                  naive_transpose(testing::head_slice(w.wo, h)));
    expect = add(expect, o);
  }
  EXPECT_LT(max_abs_diff(attention_layer_forward(X, w, cfg, MaskSpec::causal()), expect), 1e-12);
}

TEST(Layer, ZeroScoresAverageThePrefix) {
  Rng rng(17);
  const ScoreConfig cfg = ScoreConfig::standard(1);
  AttentionWeights w = random_attention_weights(cfg, 4, rng);
  w.wq = Tensor::zeros(w.wq.shape());
  w.wk = Tensor::zeros(w.wk.shape());
  const Tensor X = rng.normal_tensor({5, 4});
  const Tensor values = naive_matmul(naive_matmul(X, head0(w.wv)), naive_transpose(head0(w.wo)));
  const Tensor out = attention_layer_forward(X, w, cfg, MaskSpec::causal());
  for (std::int64_t j = 0; j < 5; ++j) {
    for (std::int64_t i = 0; i < 4; ++i) {
      double mean = 0.0;
      for (std::int64_t k = 0; k <= j; ++k) mean += values(k, i);
      EXPECT_NEAR(out(j, i), mean / static_cast<double>(j + 1), 1e-12);
    }
  }
}

TEST(Layer, StandardKindMatchesPerHeadOracle) {
  Rng rng(18);
  for (bool sqrt_scaling : {false, true}) {
    ScoreConfig cfg = ScoreConfig::standard(2);
    cfg.sqrt_scaling = sqrt_scaling;
    const AttentionWeights w = random_attention_weights(cfg, 8, rng);
    const Tensor X = rng.normal_tensor({4, 8});
    const double scale = sqrt_scaling ? 1.0 / std::sqrt(4.0) : 1.0 / 4.0;
    EXPECT_LT(max_abs_diff(attention_layer_forward(X, w, cfg, MaskSpec::causal()),
                           testing::naive_standard_layer(X, w, scale)),
              1e-10);
  }
}

TEST(Layer, BilinearKindsReduceToStandardWithMatchingWeights) {
  // One level with p = 1 and qk_norm off: scores are X L R^T X^T scaled by
  // 1/r, the standard layer's convention.
  Rng rng(19);
  const ScoreConfig standard = ScoreConfig::standard(2);
  const AttentionWeights w = random_attention_weights(standard, 8, rng);
  ScoreConfig bilinear = ScoreConfig::bilinear_mlr(2, {4});
  bilinear.qk_norm = false;
  AttentionWeights wb = w;
  wb.q_levels = {w.wq.reshape({2, 1, 8, 4})};
  wb.k_levels = {w.wk.reshape({2, 1, 8, 4})};
  const Tensor X = rng.normal_tensor({5, 8});
  EXPECT_LT(max_abs_diff(attention_layer_forward(X, wb, bilinear, MaskSpec::causal()),
                         attention_layer_forward(X, w, standard, MaskSpec::causal())),
            1e-12);
}

Tensor permute_heads(const Tensor& w, const std::vector<std::int64_t>& order) {
  const auto block = w.size() / w.dim(0);
  std::vector<double> out;
  for (auto h : order) out.insert(out.end(), w.data().begin() + h * block, w.data().begin() + (h + 1) * block);
  return Tensor(w.shape(), std::move(out));
}

TEST(Layer, HeadOrderDoesNotMatter) {
  Rng rng(20);
  const std::int64_t D = 8;
  const std::vector<ScoreConfig> configs{ScoreConfig::standard(4), ScoreConfig::mlr_attention(2, {2, 1, 1}),
                                         ScoreConfig::bilinear_mlr(4, {2, 1}),
                                         ScoreConfig::bilinear_btt(4, BTTSpec{2, 4, 4, 2, 1})};
  const std::vector<std::int64_t> order4{2, 0, 3, 1};
  for (const auto& cfg : configs) {
    const AttentionWeights w = random_attention_weights(cfg, D, rng);
    std::vector<std::int64_t> order = cfg.heads == 4 ? order4 : std::vector<std::int64_t>{1, 0};
    AttentionWeights p = w;
    for_each_weight(cfg, p, [&](const std::string&, Tensor& t) { t = permute_heads(t, order); });
    const Tensor X = rng.normal_tensor({8, D});
    EXPECT_LT(max_abs_diff(attention_layer_forward(X, w, cfg, MaskSpec::causal()),
                           attention_layer_forward(X, p, cfg, MaskSpec::causal())),
              1e-12)
        << kind_id(cfg.kind);
  }
}

TEST(Layer, WeightShapesFollowTheKind) {
  const auto mlr = weight_shapes(ScoreConfig::bilinear_mlr(2, {3, 1}), 8);
  ASSERT_EQ(mlr.size(), 6u);
  EXPECT_EQ(mlr[0].first, "wq_level1");
  EXPECT_EQ(mlr[1].second, (Shape{2, 2, 4, 1}));
  EXPECT_EQ(mlr[5].second, (Shape{2, 8, 4}));
  const auto btt = weight_shapes(ScoreConfig::bilinear_btt(1, BTTSpec{4, 2, 2, 4, 3}), 8);
  EXPECT_EQ(btt[0].second, (Shape{1, 2, 4, 6}));
  EXPECT_EQ(btt[1].second, (Shape{1, 2, 4, 6}));
}

TEST(Config, ValidationNamesTheBrokenInvariant) {
  auto message = [](const ScoreConfig& cfg, std::int64_t D) -> std::string {
    try {
      cfg.validate(D);
    } catch (const ValidationError& e) {
      return e.what();
    }
    return "";
  };
  EXPECT_NE(message(ScoreConfig::standard(3), 8).find("divisible"), std::string::npos);
  EXPECT_NE(message(ScoreConfig::mlr_attention(2, {2, 1}), 8).find("head dimension"), std::string::npos);
  EXPECT_NE(message(ScoreConfig::bilinear_mlr(1, {1, 1, 1, 1}), 12).find("must divide"), std::string::npos);
  EXPECT_NE(message(ScoreConfig::bilinear_btt(1, BTTSpec{2, 2, 2, 2, 1}), 8).find("ab = cd"), std::string::npos);
  EXPECT_NE(message(ScoreConfig::bilinear_btt(1, BTTSpec{4, 1, 1, 4, 1}), 4).find("feature width"),
            std::string::npos);
  EXPECT_EQ(message(ScoreConfig::bilinear_btt(8, BTTSpec{8, 8, 8, 8, 1}), 64), "");
  EXPECT_EQ(parse_score_kind("bilinear-btt"), ScoreKind::bilinear_btt);
  EXPECT_THROW(parse_score_kind("flash"), ValidationError);
}

TEST(Config, ScoreScalesUseTheFeatureWidth) {
  EXPECT_DOUBLE_EQ(ScoreConfig::standard(2).score_scale(8), 0.25);
  EXPECT_DOUBLE_EQ(ScoreConfig::mlr_attention(1, {2, 2}).score_scale(4), 0.25);
  ScoreConfig mlr = ScoreConfig::bilinear_mlr(1, {3, 1});
  EXPECT_DOUBLE_EQ(mlr.score_scale(8), 1.0);
  mlr.qk_norm = false;
  EXPECT_DOUBLE_EQ(mlr.score_scale(8), 1.0 / 5.0);
  ScoreConfig btt = ScoreConfig::bilinear_btt(1, BTTSpec{2, 2, 2, 2, 3});
  btt.qk_norm = false;
  EXPECT_DOUBLE_EQ(btt.score_scale(4), 1.0 / 12.0);
}

// Layer norm over a two-entry feature row saturates to +-1, leaving near-zero
// gradients that finite differences cannot resolve; normalized levels here
// have at least three features.
TEST(Gradients, EveryKindMatchesFiniteDifferences) {
  struct Case {
    ScoreConfig cfg;
    std::int64_t D, T;
  };
  ScoreConfig mlr_raw = ScoreConfig::bilinear_mlr(2, {2, 1});
  mlr_raw.qk_norm = false;
  ScoreConfig btt_raw = ScoreConfig::bilinear_btt(1, BTTSpec{2, 2, 2, 2, 1});
  btt_raw.qk_norm = false;
  const Case cases[] = {
      {ScoreConfig::standard(2), 8, 4},
      {ScoreConfig::mlr_attention(1, {2, 2}), 4, 4},
      {ScoreConfig::mlr_attention(2, {3, 1}), 8, 4},
      {ScoreConfig::bilinear_mlr(2, {3, 2}), 8, 4},
      {mlr_raw, 8, 3},
      {ScoreConfig::bilinear_btt(2, BTTSpec{2, 4, 4, 2, 1}), 8, 4},
      {btt_raw, 4, 3},
  };
  std::uint64_t seed = 21;
  for (const auto& c : cases) {
    EXPECT_LT(testing::attention_gradient_error(c.cfg, c.D, c.T, seed++), 1e-5) << kind_id(c.cfg.kind);
  }
}

TEST(RuntimeCost, MatmulCountMatchesCostModel) {
  Rng rng(30);
  const std::int64_t T = 256, D = 128;
  const std::vector<std::int64_t> ranks{64, 32, 16, 16};
  struct Case {
    ScoreConfig cfg;
    CostReport report;
  };
  const std::vector<Case> cases{
      {ScoreConfig::standard(1), standard_attention_cost(T, D, D)},
      {ScoreConfig::mlr_attention(1, ranks), mlr_attention_cost(T, D, ranks)},
      {ScoreConfig::bilinear_mlr(1, ranks), bilinear_mlr_cost(T, D, ranks, MlrOrder::optimal)},
      {ScoreConfig::bilinear_btt(1, BTTSpec{16, 8, 8, 16, 2}), bilinear_btt_cost(T, BTTSpec{16, 8, 8, 16, 2},
                                                                                 BttOrder::optimal)},
  };
  for (const auto& c : cases) {
    const AttentionWeights w = random_attention_weights(c.cfg, D, rng);
    Tape tape;
    const AttentionVars v = bind(tape, c.cfg, w, false);
    const Var x = tape.constant(rng.normal_tensor({1, T, D}));
    FlopScope scope;
    raw_scores(x, v, c.cfg);
    const auto macs = static_cast<double>(scope.elapsed().macs);
    const auto expect = static_cast<double>(c.report.total_flops());
    EXPECT_NEAR(macs / expect, 1.0, 0.1) << kind_id(c.cfg.kind);
  }
}

}  // namespace
}  // namespace structattn
