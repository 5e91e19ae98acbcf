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
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Criterion 9 trains nine models for STRUCTATTN_C9_STEPS
// steps each (default 120, about seven minutes on one core).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "attention_oracles.hpp"
#include "structattn/attention.hpp"
#include "structattn/cost_model.hpp"
#include "structattn/icl.hpp"
#include "structattn/mup.hpp"
#include "structattn/ops.hpp"
#include "structattn/random_specs.hpp"
#include "structattn/structured.hpp"
#include "test_util.hpp"

namespace structattn {
namespace {

using Clock = std::chrono::steady_clock;
using testing::naive_bilinear;
using testing::row;

struct Outcome {
  bool pass = true;
  std::string detail;
};

void report(int id, const char* title, const std::function<Outcome()>& body, int& failures) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::printf("criterion %d: %s  %s (%s; %.1fs)\n", id, o.pass ? "PASS" : "FAIL", title, o.detail.c_str(), secs);
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

std::string fmt(const char* spec, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, spec, a, b, c);
  return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// ---------------------------------------------------------------------------
// 1. Structured apply and bilinear against dense materialization.

Outcome oracle_equivalence() {
  const auto start = Clock::now();
  Rng rng(1001);
  const std::vector<std::pair<const char*, std::function<StructuredSpec(Rng&)>>> families{
      {"low_rank", [](Rng& r) { return StructuredSpec{random_low_rank(r)}; }},
      {"mlr", [](Rng& r) { return StructuredSpec{random_mlr(r, r.uniform() < 0.5)}; }},
      {"btt", [](Rng& r) { return StructuredSpec{random_btt(r)}; }},
      {"mlbtc", [](Rng& r) { return StructuredSpec{random_mlbtc(r)}; }},
  };
  constexpr int kConfigs = 60;
  double worst = 0.0;
  for (const auto& [name, gen] : families) {
    for (int i = 0; i < kConfigs; ++i) {
      const auto mat = StructuredMatrix::random(gen(rng), rng);
      const Tensor dense = materialize(mat);
      const Tensor x = rng.normal_tensor({mat.rows()});
      const Tensor y = rng.normal_tensor({mat.cols()});
      const Tensor my = apply(mat, y);
      for (std::int64_t r = 0; r < mat.rows(); ++r) {
        double s = 0.0;
        for (std::int64_t c = 0; c < mat.cols(); ++c) s += dense(r, c) * y[c];
        worst = std::max(worst, std::abs(s - my[r]));
      }
      worst = std::max(worst, std::abs(bilinear(mat, x, y) - naive_bilinear(x, dense, y)));
    }
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-10 && secs < 60.0,
          fmt("%.0f configs per family, max |err| %.2e <= 1e-10, %.1fs < 60s", kConfigs, worst, secs)};
}

// 2. Block-built MLR attention scores against the entrywise formula.

Outcome entrywise_identity() {
  Rng rng(1002);
  double worst = 0.0;
  int configs = 0;
  for (std::int64_t T = 1; T <= 16; ++T) {
    for (std::int64_t L = 1; L <= 4; ++L) {
      const std::int64_t finest = std::int64_t{1} << (L - 1);
      if (T % finest != 0 || (L > 1 && T <= finest)) continue;
      for (int draw = 0; draw < 3; ++draw) {
        std::vector<std::int64_t> ranks;
        for (std::int64_t l = 0; l < L; ++l) ranks.push_back(rng.uniform_int(1, 4));
        const std::int64_t r = std::accumulate(ranks.begin(), ranks.end(), std::int64_t{0});
        const auto D = rng.uniform_int(1, 8);
        const Tensor X = rng.normal_tensor({T, D});
        const Tensor wq = rng.normal_tensor({D, r});
        const Tensor wk = rng.normal_tensor({D, r});
        worst = std::max(worst, max_abs_diff(score_matrix_mlr_attention(X, wq, wk, ranks),
                                             testing::mlr_score_entry_oracle(X, wq, wk, ranks)));
        ++configs;
      }
    }
  }
  return {worst <= 1e-12, fmt("%.0f configurations with T <= 16, L <= 4, max |err| %.2e <= 1e-12", configs, worst)};
}

// 3. Parameter counts, rank bounds and generic numeric rank.

Outcome param_and_rank_counts() {
  int mismatches = 0, rank_failures = 0, checked = 0;
  for (std::int64_t D : {4, 8, 16, 32}) {
    const std::int64_t root = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(D))));
    std::vector<std::pair<StructuredSpec, std::pair<std::int64_t, std::int64_t>>> cases;
    cases.push_back({DenseSpec{D, D}, {D * D, D}});
    for (std::int64_t r : {std::int64_t{1}, std::int64_t{2}, D / 2}) cases.push_back({LowRankSpec{D, D, r}, {2 * D * r, r}});
    for (const auto& ranks : std::vector<std::vector<std::int64_t>>{{1, 1}, {2, 1, 1}, {D / 4, 1}, {3, 2, 1}}) {
      std::int64_t params = 0, rank = 0;
      for (std::size_t l = 0; l < ranks.size(); ++l) {
        params += 2 * D * ranks[l];
        rank += ranks[l] * (std::int64_t{1} << l);
      }
      cases.push_back({MLRSpec::equal_blocks(D, D, ranks), {params, std::min(rank, D)}});
    }
    if (root * root == D) {
      for (std::int64_t s : {1, 2}) cases.push_back({BTTSpec{root, root, root, root, s}, {2 * D * root * s, D}});
    }
    for (const auto& [spec, expect] : cases) {
      if (param_count(spec) != expect.first || rank_upper_bound(spec) != expect.second) ++mismatches;
      for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(5000 + seed);
        if (numeric_rank(materialize(StructuredMatrix::random(spec, rng))) != expect.second) ++rank_failures;
        ++checked;
      }
    }
  }
  return {mismatches == 0 && rank_failures == 0,
          fmt("%.0f closed-form mismatches, %.0f of %.0f random draws below the rank bound", mismatches, rank_failures,
              checked)};
}

// 4. Closed forms and the runtime counter at T = 1024, D = 512.

Outcome flop_formulas() {
  const std::int64_t T = 1024, D = 512;
  std::string detail;
  bool ok = true;
  const std::vector<std::int64_t> ranks{32, 8, 6, 4, 4, 4, 4, 2};
  // Bilinear MLR, optimal order: 2TDr + T^2 sum_l 2^(l-1) r_l.
  std::int64_t r = 0, doubled = 0, halved_num = 0;
  for (std::size_t l = 0; l < ranks.size(); ++l) {
    r += ranks[l];
    doubled += ranks[l] << l;
    halved_num += ranks[l] << (ranks.size() - 1 - l);  // r_l / 2^(l-1) scaled by 2^(L-1)
  }
  ok &= bilinear_mlr_flops(T, D, ranks, MlrOrder::optimal) == 2 * T * D * r + T * T * doubled;
  // Bilinear BTT, chosen order: T^2 D + 2 s T D^(3/2).
  for (std::int64_t s : {1, 2, 4}) {
    const std::int64_t Dsq = 256, root = 16;
    ok &= bilinear_btt_flops(T, Dsq, s, BttOrder::optimal) == T * T * Dsq + 2 * s * T * Dsq * root;
  }
  // MLR attention scores: T^2 sum_l r_l / 2^(l-1).
  ok &= mlr_attention_score_flops(T, ranks) * (std::int64_t{1} << (ranks.size() - 1)) == T * T * halved_num;
  detail += ok ? "closed forms exact" : "closed-form mismatch";

  Rng rng(1004);
  const Tensor X = rng.normal_tensor({1, T, D});
  struct Case {
    ScoreConfig cfg;
    CostReport report;
  };
  const std::vector<Case> cases{
      {ScoreConfig::standard(8), standard_attention_cost(T, D, D / 8)},
      {ScoreConfig::mlr_attention(8, ranks), mlr_attention_cost(T, D, ranks)},
      {ScoreConfig::bilinear_mlr(1, ranks), bilinear_mlr_cost(T, D, ranks, MlrOrder::optimal)},
      {ScoreConfig::bilinear_btt(2, BTTSpec{32, 16, 16, 32, 1}),
       bilinear_btt_cost(T, BTTSpec{32, 16, 16, 32, 1}, BttOrder::optimal)},
  };
  double worst = 0.0;
  for (const auto& c : cases) {
    const AttentionWeights w = random_attention_weights(c.cfg, D, rng);
    Tape tape;
    const AttentionVars v = bind(tape, c.cfg, w, false);
    FlopScope scope;
    raw_scores(tape.constant(X), v, c.cfg);
    // The standard and MLR attention costs are per head of width D/H.
    const double heads = static_cast<double>(c.cfg.heads);
    const double ratio = static_cast<double>(scope.elapsed().macs) / (heads * static_cast<double>(c.report.total_flops()));
    worst = std::max(worst, std::abs(ratio - 1.0));
  }
  ok &= worst <= 0.10;
  detail += fmt(", runtime counter within %.1f%% of the model (<= 10%%)", 100.0 * worst);
  return {ok, detail};
}

// 5. Key cache for r = 64, L = 8, r_l = 8, T = 1024.

Outcome kv_cache() {
  const std::vector<std::int64_t> ranks(8, 8);
  const std::int64_t T = 1024;
  std::int64_t expected = 0;
  for (std::int64_t l = 0; l < 8; ++l) expected += 8 * (T >> l);  // last block of level l has T / 2^(l-1) keys
  const std::int64_t kept = retained_key_elements(ranks, T);
  const std::int64_t baseline = 64 * T;
  const double ratio = static_cast<double>(baseline) / static_cast<double>(kept);
  return {kept == 16320 && expected == kept && standard_attention_cost(T, 512, 64).kv_cache_elements == baseline &&
              ratio >= 4.0 && ratio <= 4.05,
          fmt("retained %.0f vs %.0f, ratio %.4f in [4.0, 4.05]", static_cast<double>(kept),
              static_cast<double>(baseline), ratio)};
}

// 6. End-to-end gradients of every score kind.

Outcome gradients() {
  const auto start = Clock::now();
  struct Case {
    ScoreConfig cfg;
    std::int64_t D, T;
  };
  auto no_norm = [](ScoreConfig c) {
    c.qk_norm = false;
    return c;
  };
  const std::vector<Case> cases{
      {ScoreConfig::standard(2), 8, 4},
      {ScoreConfig::standard(1), 4, 3},
      {ScoreConfig::mlr_attention(2, {3, 1}), 8, 4},
      {ScoreConfig::mlr_attention(1, {2, 2}), 4, 4},
      {ScoreConfig::bilinear_mlr(2, {3, 2}), 8, 4},
      {no_norm(ScoreConfig::bilinear_mlr(2, {2, 1, 1})), 8, 4},
      {ScoreConfig::bilinear_btt(2, BTTSpec{2, 4, 4, 2, 1}), 8, 4},
      {ScoreConfig::bilinear_btt(1, BTTSpec{2, 2, 2, 2, 1}), 4, 3},
      {no_norm(ScoreConfig::bilinear_btt(1, BTTSpec{2, 4, 2, 4, 2})), 8, 4},
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    worst = std::max(worst, testing::attention_gradient_error(cases[i].cfg, cases[i].D, cases[i].T, 600 + i));
  }
  const double secs = seconds_since(start);
  return {worst < 1e-5 && secs < 60.0,
          fmt("%.0f layers over four kinds, D <= 8, T <= 4, max relative error %.2e < 1e-5", cases.size(), worst)};
}

// 7. Reduction identities.

Outcome reductions() {
  Rng rng(1007);
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const auto T = rng.uniform_int(1, 12);
    const auto D = rng.uniform_int(1, 10);
    const auto r = rng.uniform_int(1, D);
    const auto mat = StructuredMatrix::random(MLRSpec::equal_blocks(D, D, {r}), rng);
    const Tensor X = rng.normal_tensor({T, D});
    const Tensor& wq = mat.factors()[0];
    const Tensor& wk = mat.factors()[1];
    const Tensor standard = score_matrix_standard(X, wq, wk);
    worst = std::max({worst, max_abs_diff(score_matrix_bilinear(X, mat), standard),
                      max_abs_diff(score_matrix_mlr_attention(X, wq, wk, {r}), standard),
                      max_abs_diff(standard, testing::dense_score_oracle(X, testing::naive_matmul(wq, testing::naive_transpose(wk))))});

    const auto mlr_spec = random_mlr(rng, trial % 2 == 0);
    const auto mlr = StructuredMatrix::random(mlr_spec, rng);
    worst = std::max(worst, max_abs_diff(materialize(StructuredMatrix(MLBTCSpec::from_mlr(mlr_spec), mlr.factors())),
                                         materialize(mlr)));
    // The BTT level inside MLBTC, with inactive levels around it.
    const auto btt_spec = random_btt(rng);
    const auto btt = StructuredMatrix::random(btt_spec, rng);
    MLBTCSpec spec = MLBTCSpec::from_btt(btt_spec);
    const MLBTCLevel idle{0.0, 1, 1, {btt_spec.m()}, {btt_spec.n()}};
    spec.levels = {idle, spec.levels[0], idle};
    std::vector<Tensor> factors{rng.normal_tensor({btt_spec.m(), 1}), rng.normal_tensor({btt_spec.n(), 1})};
    for (const auto& f : btt.factors()) factors.push_back(f);
    factors.push_back(rng.normal_tensor({btt_spec.m(), 1}));
    factors.push_back(rng.normal_tensor({btt_spec.n(), 1}));
    worst = std::max(worst, max_abs_diff(materialize(StructuredMatrix(spec, factors)), materialize(btt)));
  }
  return {worst <= 1e-12, fmt("30 draws of each identity, max |err| %.2e <= 1e-12", worst)};
}

// 8. Zero-initialized readout gives loss 1 at init.

IclTaskConfig task_of(std::int64_t d) {
  IclTaskConfig t;
  t.d_input = d;
  return t;
}

Outcome init_loss() {
  const IclTaskConfig task = task_of(8);
  struct Arch {
    const char* name;
    ScoreConfig attention;
    std::int64_t window;
  };
  const std::vector<Arch> grid{
      {"standard H=1", ScoreConfig::standard(1), -1},
      {"standard H=8", ScoreConfig::standard(8), -1},
      {"mlr-attention L=1", ScoreConfig::mlr_attention(8, {8}), -1},
      {"bilinear-mlr", ScoreConfig::bilinear_mlr(8, {8, 4, 4}), -1},
      {"bilinear-btt", ScoreConfig::bilinear_btt(8, BTTSpec{8, 8, 8, 8, 1}), -1},
      {"standard H=8 + SWA", ScoreConfig::standard(8), 4},
      {"bilinear-mlr + SWA", ScoreConfig::bilinear_mlr(8, {8, 4, 4}), 4},
  };
  const PromptBatch batch = sample_batch(task, 2048, Rng(1008), 0);
  double worst = 0.0;
  std::string values;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ModelConfig mc;
    mc.d_input = task.d_input;
    mc.D = 64;
    mc.layers = 2;
    mc.max_len = task.length();
    mc.attention = grid[i].attention;
    mc.window = grid[i].window;
    if (mc.window >= 0) mc.global_layers = default_global_layers(mc.layers);
    Rng rng(2000 + i);
    const IclModel model = IclModel::init(mc, rng);
    // Mean squared error over all positions, in chunks to bound memory.
    double total = 0.0;
    constexpr std::int64_t kChunk = 256;
    for (std::int64_t b = 0; b < 2048; b += kChunk) {
      const Tensor pred = model.predict(slice_axis(batch.tokens, 0, b, kChunk));
      const Tensor target = slice_axis(batch.targets, 0, b, kChunk);
      for (std::int64_t k = 0; k < pred.size(); ++k) {
        const double e = pred.data()[k] - target.data()[k];
        total += e * e;
      }
    }
    const double loss = total / static_cast<double>(batch.targets.size());
    worst = std::max(worst, std::abs(loss - 1.0));
    values += fmt("%.3f ", loss);
  }
  values.pop_back();
  return {worst <= 0.1, fmt("%.0f architectures over 2048 prompts, losses ", grid.size()) + values + " within 1 +- 0.1"};
}

// 9. Rank bottleneck at desk scale.

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

Outcome rank_bottleneck() {
  const long steps = std::getenv("STRUCTATTN_C9_STEPS") ? std::atol(std::getenv("STRUCTATTN_C9_STEPS")) : 120;
  const IclTaskConfig task = task_of(16);
  struct Arch {
    const char* name;
    ScoreConfig attention;
  };
  const std::vector<Arch> archs{
      {"standard H=8", ScoreConfig::standard(8)},
      {"standard H=1", ScoreConfig::standard(1)},
      {"bilinear-btt H=8", ScoreConfig::bilinear_btt(8, BTTSpec{8, 8, 8, 8, 1})},
  };
  std::vector<double> medians;
  std::string detail;
  for (const auto& arch : archs) {
    std::vector<double> errors;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      ModelConfig mc;
      mc.d_input = task.d_input;
      mc.D = 64;
      mc.layers = 2;
      mc.max_len = task.length();
      mc.attention = arch.attention;
      Rng init = Rng(seed).split(0);
      IclModel model = IclModel::init(mc, init);
      TrainConfig tc;
      tc.base_lr = 1e-3;
      tc.steps = steps;
      tc.batch_size = 32;
      tc.eval_every = steps;
      tc.eval_prompts = 64;
      tc.seed = seed;
      train(model, task, tc);
      errors.push_back(eval_error_at_N([&](const Tensor& t) { return model.predict(t); }, task, 2048,
                                       Rng(seed).split(3)));
    }
    medians.push_back(median3(errors));
    detail += std::string(arch.name) + fmt(" %.3f, ", medians.back());
  }
  const double best_full = std::min(medians[1], medians[2]);
  return {best_full <= 0.5 * medians[0],
          detail + fmt("%.0f steps; need min(full rank) <= 0.5 x H=8", static_cast<double>(steps))};
}

// 10. mup closed forms and the init coordinate band.

Fraction reduced(std::int64_t num, std::int64_t den) {
  const auto g = std::gcd(num, den);
  return {num / g, den / g};
}

Outcome mup_tables() {
  int mismatches = 0, checked = 0;
  auto rule = [](MupRole role, std::int64_t fin, std::int64_t fout, std::int64_t d1, std::int64_t d2) {
    MupRule r;
    r.role = role;
    r.fan_in = fin;
    r.fan_out = fout;
    r.base_width = d1;
    r.target_width = d2;
    r.base_lr = 1e-3;
    return r;
  };
  auto expect = [&](bool ok) {
    mismatches += !ok;
    ++checked;
  };
  for (std::int64_t d1 : {32, 64, 128}) {
    for (std::int64_t d2 : {64, 128, 256, 512}) {
      for (double base : base_lr_grid()) {
        // Dense hidden: sigma^2 = 1/D, lr = base * D1 / D2.
        MupRule h = rule(MupRole::hidden_dense, d2, d2, d1, d2);
        h.base_lr = base;
        expect(init_variance(h) == reduced(1, d2));
        // sqrt(1/D) and 1/sqrt(D) can differ in the last bit.
        expect(std::abs(init_std(h) * std::sqrt(static_cast<double>(d2)) - 1.0) <= 4e-16);
        expect(adam_lr(h) == base * static_cast<double>(d1) / static_cast<double>(d2));
        // Embedding: lr unchanged.
        MupRule e = rule(MupRole::embedding, 16, d2, d1, d2);
        e.base_lr = base;
        expect(adam_lr(e) == base);
        // Output: zero init.
        expect(init_variance(rule(MupRole::output, d2, 1, d1, d2)) == Fraction{0, 1});
        // MLR level with p blocks: sigma^2 = p / D, lr = base * D1 p / D2.
        for (std::int64_t p : {1, 2, 4, 8, 16}) {
          MupRule m = rule(MupRole::mlr_factor, d2 / p, 8, d1, d2);
          m.blocks = p;
          m.base_lr = base;
          expect(init_variance(m) == reduced(p, d2));
          expect(adam_lr(m) == base * static_cast<double>(reduced(d1 * p, d2).num) /
                                   static_cast<double>(reduced(d1 * p, d2).den));
        }
        // BTT: left fan-in cs, right fan-in d, lr D1/(cs) and D1/a.
        for (std::int64_t a : {4, 8, 16}) {
          const std::int64_t cs = d2 / a;
          MupRule l = rule(MupRole::btt_left, cs, a, d1, d2);
          l.base_lr = base;
          expect(init_variance(l) == reduced(1, cs));
          expect(lr_multiplier(l) == reduced(d1, cs));
          MupRule r = rule(MupRole::btt_right, a, cs, d1, d2);
          r.btt_a = a;
          r.base_lr = base;
          expect(init_variance(r) == reduced(1, a));
          expect(lr_multiplier(r) == reduced(d1, a));
        }
      }
    }
  }

  double lo = 1e300, hi = 0.0;
  const IclTaskConfig task = task_of(8);
  const PromptBatch batch = sample_batch(task, 8, Rng(1010), 0);
  for (std::int64_t D : {64, 128, 256, 512}) {
    for (const auto& attention : {ScoreConfig::standard(8), ScoreConfig::bilinear_mlr(8, {8, 4, 4})}) {
      ModelConfig mc;
      mc.d_input = 8;
      mc.D = D;
      mc.max_len = task.length();
      mc.attention = attention;
      Rng rng(static_cast<std::uint64_t>(D));
      for (double v : IclModel::init(mc, rng).residual_rms(batch.tokens)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  return {mismatches == 0 && lo >= 0.3 && hi <= 3.0,
          fmt("%.0f closed-form mismatches of %.0f; residual RMS in [%.3f, ", mismatches, checked, lo) +
              fmt("%.3f] within [0.3, 3.0] for D in {64, 128, 256, 512}", hi)};
}

}  // namespace
}  // namespace structattn

int main() {
  using namespace structattn;
  int failures = 0;
  report(1, "structured oracle equivalence", oracle_equivalence, failures);
  report(2, "MLR attention entrywise identity", entrywise_identity, failures);
  report(3, "parameter counts and ranks", param_and_rank_counts, failures);
  report(4, "FLOP formulas and runtime counter", flop_formulas, failures);
  report(5, "key-cache savings", kv_cache, failures);
  report(6, "gradient suite", gradients, failures);
  report(7, "reduction identities", reductions, failures);
  report(8, "loss at initialization", init_loss, failures);
  report(9, "rank bottleneck at desk scale", rank_bottleneck, failures);
  report(10, "mup tables and coordinate band", mup_tables, failures);
  return failures == 0 ? 0 : 1;
}
