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

// In-context linear regression: prompts x_1, f(x_1), ..., x_N with
// f(x) = w^T x, a small pre-norm transformer that reads predictions at the
// x positions, the causal squared-error loss and an AdamW trainer whose
// per-matrix learning rates come from the mup rules.

#ifndef STRUCTATTN_ICL_HPP_
#define STRUCTATTN_ICL_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "structattn/attention.hpp"
#include "structattn/mup.hpp"

namespace structattn {

struct IclTaskConfig {
  std::int64_t d_input = 8;
  std::int64_t n_points = 0;  // 0 means 2 * d_input

  std::int64_t points() const { return n_points > 0 ? n_points : 2 * d_input; }
  /// Tokens per prompt, 2N - 1.
  std::int64_t length() const { return 2 * points() - 1; }
  void validate() const;
};

struct Prompt {
  Tensor tokens;   // [2N-1, d]; label token i holds f(x_i) in coordinate 0
  Tensor xs;       // [N, d]
  Tensor w;        // [d]
  Tensor targets;  // [N]
};

/// x_i ~ N(0, I/d), w ~ N(0, I).
Prompt sample_prompt(const IclTaskConfig& cfg, Rng& rng);
/// Prompt for given inputs and weights; xs is [N, d].
Prompt make_prompt(const Tensor& xs, const Tensor& w);

struct PromptBatch {
  Tensor tokens;   // [B, 2N-1, d]
  Tensor targets;  // [B, N]
};

/// Prompt i is drawn from base.split(first_index + i), so any slice of a
/// batch can be regenerated independently.
PromptBatch sample_batch(const IclTaskConfig& cfg, std::int64_t count, const Rng& base, std::uint64_t first_index);

struct ModelConfig {
  std::int64_t d_input = 8;
  std::int64_t D = 64;
  std::int64_t layers = 2;
  std::int64_t max_len = 64;
  std::int64_t mlp_ratio = 4;
  ScoreConfig attention = ScoreConfig::standard(1);
  /// Sliding window T' for non-global layers; -1 disables windowing.
  std::int64_t window = -1;
  std::vector<std::int64_t> global_layers;  // used only with a window
  std::int64_t base_width = 64;             // D1 for the mup learning rates

  void validate() const;
  std::vector<MaskSpec> masks() const;
};

struct Param {
  std::string path;
  Tensor value;
  MupRule rule;
};

class IclModel {
 public:
  /// Fresh model with mup initialization and a zero readout.
  static IclModel init(const ModelConfig& cfg, Rng& rng);
  /// Model from stored parameter values, in params() order.
  static IclModel from_values(const ModelConfig& cfg, const std::vector<Tensor>& values);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<Param>& params() { return params_; }

  /// Scalar readout at every position, [B, T]. `vars` are the parameters
  /// bound on the same tape, in params() order. When `residuals` is given it
  /// receives the residual stream after the embedding and after each block.
  Var forward(Var tokens, const std::vector<Var>& vars, std::vector<Tensor>* residuals = nullptr) const;
  /// Readout at the x positions 0, 2, ..., 2N-2: [B, N].
  Var predictions(Var tokens, const std::vector<Var>& vars) const;

  Tensor readout(const Tensor& tokens) const;
  Tensor predict(const Tensor& tokens) const;
  /// RMS of the residual stream after the embedding and after each block.
  std::vector<double> residual_rms(const Tensor& tokens) const;

  std::vector<Var> bind(Tape& tape, bool requires_grad) const;
  std::vector<MupEntry> mup_table(double base_lr) const;

 private:
  ModelConfig cfg_;
  std::vector<Param> params_;
  std::vector<std::size_t> layer_offsets_;
};

/// Mean over batch and positions of (prediction - target)^2.
Var icl_loss(Var predictions, Var targets);

/// Maps tokens [B, T, d] to predictions [B, N].
using Predictor = std::function<Tensor(const Tensor& tokens)>;

/// Mean squared error of the prediction at x_N over `count` fresh prompts
/// drawn from base.split(first_index + i).
double eval_error_at_N(const Predictor& predictor, const IclTaskConfig& cfg, std::int64_t count, const Rng& base,
                       std::uint64_t first_index = 0);

/// Least-squares fit of w on the labelled pairs preceding each x position;
/// positions with fewer than d pairs get the minimum-norm solution.
Tensor least_squares_predictions(const Tensor& tokens);

struct TrainConfig {
  double base_lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;
  std::int64_t steps = 1000;
  std::int64_t batch_size = 32;
  std::int64_t eval_every = 100;
  std::int64_t eval_prompts = 256;
  std::uint64_t seed = 0;
  Precision precision = Precision::f64;
  bool record_wall_time = false;

  void validate() const;
};

struct MetricRow {
  std::int64_t step = 0;
  double loss = 0.0;
  double eval_error = 0.0;
  std::uint64_t flops_cumulative = 0;
  double wall_seconds = 0.0;
};

/// Header: step,loss,eval_error,flops_cumulative,wall_seconds
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricRow& row);

class AdamW {
 public:
  AdamW(const IclModel& model, const TrainConfig& cfg);
  void step(IclModel& model, const std::vector<Tensor>& grads);
  std::int64_t steps_taken() const { return t_; }
  const std::vector<double>& learning_rates() const { return lr_; }

 private:
  TrainConfig cfg_;
  std::vector<double> lr_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

/// Runs training from `model`. Rows are emitted at step 0, every eval_every
/// steps and at the last step; `on_row` sees each row with the current model.
/// Non-finite or >1e3 loss throws NumericalError naming step, lr and the
/// largest activation.
std::vector<MetricRow> train(IclModel& model, const IclTaskConfig& task, const TrainConfig& cfg,
                             const std::function<void(const MetricRow&, const IclModel&)>& on_row = {});

/// Writes weights.bin (params in order) and manifest.json (paths, shapes,
/// roles) into `dir`.
void save_checkpoint(const std::filesystem::path& dir, const IclModel& model);
/// Loads weights.bin and checks it against the manifest and `cfg`.
IclModel load_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg);

}  // namespace structattn

#endif  // STRUCTATTN_ICL_HPP_
