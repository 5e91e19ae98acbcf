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

#include "structattn/icl.hpp"
#include "structattn/mup.hpp"
#include "structattn/ops.hpp"

namespace structattn {
namespace {

MupRule make(MupRole role, std::int64_t fan_in, std::int64_t fan_out, std::int64_t d1 = 1, std::int64_t d2 = 1) {
  MupRule r;
  r.role = role;
  r.fan_in = fan_in;
  r.fan_out = fan_out;
  r.base_width = d1;
  r.target_width = d2;
  return r;
}

Fraction reduced(std::int64_t num, std::int64_t den) {
  const auto g = std::gcd(num, den);
  return {num / g, den / g};
}

TEST(InitStd, SquareHiddenIsInverseSqrtWidth) {
  for (std::int64_t D : {16, 64, 512}) {
    EXPECT_EQ(init_variance(make(MupRole::hidden_dense, D, D)), (Fraction{1, D}));
    EXPECT_DOUBLE_EQ(init_std(make(MupRole::hidden_dense, D, D)), 1.0 / std::sqrt(static_cast<double>(D)));
  }
}

TEST(InitStd, MlrFactorUsesBlockFanIn) {
  MupRule r = make(MupRole::mlr_factor, 128, 8, 64, 512);
  r.blocks = 4;
  EXPECT_EQ(init_variance(r), (Fraction{1, 128}));
  EXPECT_DOUBLE_EQ(init_std(r), 1.0 / std::sqrt(128.0));
}

TEST(InitStd, BttLeftUsesCS) {
  // c = 16, s = 2
  EXPECT_DOUBLE_EQ(init_std(make(MupRole::btt_left, 32, 16)), 1.0 / std::sqrt(32.0));
  EXPECT_DOUBLE_EQ(init_std(make(MupRole::btt_right, 16, 32)), 0.25);
}

TEST(InitStd, NarrowingLayersShrinkByTheAspectRatio) {
  // d_out < d_in: 1/d_in * d_out/d_in
  EXPECT_EQ(init_variance(make(MupRole::hidden_dense, 256, 64)), (Fraction{1, 1024}));
  EXPECT_EQ(init_variance(make(MupRole::hidden_dense, 64, 256)), (Fraction{1, 64}));
  EXPECT_EQ(init_variance(make(MupRole::output, 64, 1)), (Fraction{0, 1}));
}

TEST(InitStd, VarianceGridMatchesClosedForms) {
  for (std::int64_t fin : {1, 3, 8, 64, 100, 512}) {
    for (std::int64_t fout : {1, 5, 8, 64, 512, 2048}) {
      const Fraction expect = fout >= fin ? reduced(1, fin) : reduced(fout, fin * fin);
      EXPECT_EQ(init_variance(make(MupRole::hidden_dense, fin, fout)), expect) << fin << "x" << fout;
      EXPECT_EQ(init_variance(make(MupRole::embedding, fin, fout)), expect);
      EXPECT_EQ(init_variance(make(MupRole::btt_left, fin, fout)), reduced(1, fin));
    }
  }
  for (std::int64_t D : {64, 96, 512}) {
    for (std::int64_t p : {1, 2, 4, 8, 16, 32}) {
      MupRule r = make(MupRole::mlr_factor, D / p, 4, 64, D);
      r.blocks = p;
      EXPECT_EQ(init_variance(r), reduced(p, D));
    }
  }
}

TEST(AdamLr, HiddenScalesWithWidthRatio) {
  MupRule r = make(MupRole::hidden_dense, 512, 512, 256, 512);
  r.base_lr = 1e-3;
  EXPECT_DOUBLE_EQ(adam_lr(r), 5e-4);
}

TEST(AdamLr, FirstMlrLevelIsTheDenseRule) {
  MupRule dense = make(MupRole::hidden_dense, 512, 512, 256, 512);
  MupRule level = make(MupRole::mlr_factor, 512, 32, 256, 512);
  level.blocks = 1;
  EXPECT_EQ(lr_multiplier(level), lr_multiplier(dense));
  EXPECT_EQ(adam_lr(level), adam_lr(dense));
}

TEST(AdamLr, BttRightUsesA) {
  MupRule r = make(MupRole::btt_right, 16, 64, 256, 512);
  r.btt_a = 16;
  r.base_lr = 1e-3;
  EXPECT_EQ(lr_multiplier(r), (Fraction{16, 1}));
  EXPECT_NEAR(adam_lr(r), 1.6e-2, 1e-17);
}

TEST(AdamLr, MultiplierGridMatchesClosedForms) {
  for (std::int64_t d1 : {32, 64, 100, 256}) {
    for (std::int64_t d2 : {64, 128, 384, 512, 1024}) {
      EXPECT_EQ(lr_multiplier(make(MupRole::hidden_dense, d2, d2, d1, d2)), reduced(d1, d2));
      EXPECT_EQ(lr_multiplier(make(MupRole::output, d2, 1, d1, d2)), reduced(d1, d2));
      EXPECT_EQ(lr_multiplier(make(MupRole::embedding, 16, d2, d1, d2)), (Fraction{1, 1}));
      for (std::int64_t p : {1, 2, 4, 8, 16, 32, 64}) {
        if (d2 % p != 0) continue;
        MupRule r = make(MupRole::mlr_factor, d2 / p, 8, d1, d2);
        r.blocks = p;
        // D1 / (D2 / p)
        EXPECT_EQ(lr_multiplier(r), reduced(d1 * p, d2));
        r.base_lr = 5e-4;
        EXPECT_NEAR(adam_lr(r), 5e-4 * static_cast<double>(d1 * p) / static_cast<double>(d2), 1e-18);
      }
      for (std::int64_t cs : {1, 4, 24, 64}) {
        EXPECT_EQ(lr_multiplier(make(MupRole::btt_left, cs, 8, d1, d2)), reduced(d1, cs));
      }
      for (std::int64_t a : {1, 2, 16, 48}) {
        MupRule r = make(MupRole::btt_right, 8, 8, d1, d2);
        r.btt_a = a;
        EXPECT_EQ(lr_multiplier(r), reduced(d1, a));
      }
    }
  }
}

TEST(AdamLr, SweepGridIsTheFiveBaseRates) {
  EXPECT_EQ(base_lr_grid(), (std::vector<double>{1e-3, 5e-4, 1e-4, 5e-5, 1e-5}));
}

TEST(MupRule, InvalidRulesAreRejected) {
  EXPECT_THROW(init_std(make(MupRole::hidden_dense, 0, 4)), ValidationError);
  MupRule r = make(MupRole::hidden_dense, 4, 4);
  r.base_lr = 0.0;
  EXPECT_THROW(adam_lr(r), ValidationError);
  MupRule level = make(MupRole::mlr_factor, 4, 4, 8, 12);
  level.blocks = 8;
  EXPECT_THROW(init_std(level), ValidationError);
  EXPECT_EQ(parse_role("btt-left"), MupRole::btt_left);
  EXPECT_THROW(parse_role("bias"), ValidationError);
}

TEST(ZeroInit, OutputIsAllZero) {
  Rng rng(1);
  for (const Shape& s : {Shape{64, 1}, Shape{3, 5}, Shape{7}}) {
    EXPECT_EQ(max_abs(zero_init_output(s)), 0.0);
    EXPECT_EQ(max_abs(mup_init(make(MupRole::output, 8, 1), s, rng)), 0.0);
  }
}

TEST(ZeroInit, FreshModelPredictsExactlyZero) {
  Rng rng(2);
  ModelConfig mc;
  mc.d_input = 4;
  mc.D = 16;
  mc.max_len = 15;
  mc.attention = ScoreConfig::standard(2);
  const IclModel model = IclModel::init(mc, rng);
  IclTaskConfig task;
  task.d_input = 4;
  const PromptBatch batch = sample_batch(task, 8, Rng(3), 0);
  EXPECT_EQ(max_abs(model.predict(batch.tokens)), 0.0);
}

TEST(MupTable, CsvListsEveryParameter) {
  Rng rng(4);
  ModelConfig mc;
  mc.d_input = 4;
  mc.D = 16;
  mc.max_len = 15;
  mc.base_width = 8;
  mc.attention = ScoreConfig::bilinear_mlr(2, {2, 1});
  const IclModel model = IclModel::init(mc, rng);
  const std::string csv = render_mup_csv(model.mup_table(1e-3));
  EXPECT_EQ(csv.rfind("path,role,fan_in,fan_out,sigma,lr\n", 0), 0u);
  const auto lines = std::count(csv.begin(), csv.end(), '\n');
  EXPECT_EQ(lines, static_cast<long>(model.params().size()) + 1);
  // Level 2 of layer 0: p = 2, fan-in 8, sigma^2 = 2/16, lr = 1e-3 * 8 / (16 / 2).
  EXPECT_NE(csv.find("layers.0.attn.wq_level2,mlr-factor,8,2,0.35355339059327379,0.001\n"), std::string::npos);
  EXPECT_NE(csv.find("readout,output,16,1,0,0.00050000000000000001\n"), std::string::npos);
}

// Residual-stream RMS after the embedding and each block, at init.
std::vector<double> coordinate_rms(std::int64_t D, const ScoreConfig& attention) {
  Rng rng(static_cast<std::uint64_t>(D));
  ModelConfig mc;
  mc.d_input = 8;
  mc.D = D;
  mc.max_len = 31;
  mc.attention = attention;
  const IclModel model = IclModel::init(mc, rng);
  IclTaskConfig task;
  task.d_input = 8;
  return model.residual_rms(sample_batch(task, 8, Rng(5), 0).tokens);
}

TEST(CoordinateCheck, ResidualScaleStaysInBandAcrossWidths) {
  for (std::int64_t D : {64, 128, 256, 512}) {
    for (const auto& attention : {ScoreConfig::standard(8), ScoreConfig::bilinear_mlr(8, {8, 4, 4})}) {
      for (double v : coordinate_rms(D, attention)) {
        EXPECT_GE(v, 0.3) << "D=" << D << " " << kind_id(attention.kind);
        EXPECT_LE(v, 3.0) << "D=" << D << " " << kind_id(attention.kind);
      }
    }
  }
}

double rms(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s / static_cast<double>(t.size()));
}

struct StepChanges {
  double output = 0.0;    // RMS of the prediction change over step 1 (predictions start at 0)
  double residual = 0.0;  // RMS(dH) / RMS(H) of the final residual stream over step 2
};

// The zero readout blocks gradients into the body on the first step, so the
// body only starts moving on the second.
StepChanges adam_step_changes(std::int64_t D) {
  Rng rng(6);
  ModelConfig mc;
  mc.d_input = 8;
  mc.D = D;
  mc.max_len = 31;
  mc.base_width = 64;
  mc.attention = ScoreConfig::standard(8);
  IclModel model = IclModel::init(mc, rng);
  IclTaskConfig task;
  task.d_input = 8;
  const PromptBatch batch = sample_batch(task, 16, Rng(7), 0);
  auto final_residual = [&] {
    Tape tape;
    std::vector<Tensor> residuals;
    model.forward(tape.constant(batch.tokens), model.bind(tape, false), &residuals);
    return residuals.back();
  };
  TrainConfig tc;
  tc.base_lr = 1e-2;
  AdamW opt(model, tc);
  auto step = [&] {
    Tape tape;
    const auto vars = model.bind(tape, true);
    const Var loss = icl_loss(model.predictions(tape.constant(batch.tokens), vars), tape.constant(batch.targets));
    const Gradients grads = backward(tape, loss);
    std::vector<Tensor> g;
    for (const auto& v : vars) g.push_back(grads[v]);
    opt.step(model, g);
  };
  StepChanges out;
  const Tensor pred0 = model.predict(batch.tokens);
  const Tensor h0 = final_residual();
  step();
  out.output = rms(sub(model.predict(batch.tokens), pred0));
  EXPECT_EQ(max_abs_diff(final_residual(), h0), 0.0);
  const Tensor h1 = final_residual();
  step();
  out.residual = rms(sub(final_residual(), h1)) / rms(h1);
  return out;
}

TEST(CoordinateCheck, AdamStepChangesAreWidthIndependent) {
  std::vector<double> output, residual;
  for (std::int64_t D : {64, 128, 256}) {
    const StepChanges c = adam_step_changes(D);
    output.push_back(c.output);
    residual.push_back(c.residual);
  }
  for (const auto* series : {&output, &residual}) {
    const auto [lo, hi] = std::minmax_element(series->begin(), series->end());
    EXPECT_GT(*lo, 0.0);
    EXPECT_LE(*hi / *lo, 2.0) << (*series)[0] << " " << (*series)[1] << " " << (*series)[2];
  }
}

}  // namespace
}  // namespace structattn
