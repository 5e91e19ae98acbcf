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

#include "structattn/icl.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "structattn/ops.hpp"
#include "structattn/serialize.hpp"

namespace structattn {
namespace {

constexpr double kDivergenceLoss = 1e3;

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

MupRule rule(MupRole role, std::int64_t fan_in, std::int64_t fan_out, const ModelConfig& cfg) {
  MupRule r;
  r.role = role;
  r.fan_in = fan_in;
  r.fan_out = fan_out;
  r.base_width = cfg.base_width;
  r.target_width = cfg.D;
  return r;
}

// Rules for one layer's attention weights, in for_each_weight order.
std::vector<MupRule> attention_rules(const ModelConfig& cfg) {
  const auto D = cfg.D;
  const auto& a = cfg.attention;
  const auto H = a.heads;
  std::vector<MupRule> out;
  for (const auto& [name, shape] : weight_shapes(a, D)) {
    if (name == "wq" || name == "wk" || name == "wv") {
      out.push_back(rule(MupRole::hidden_dense, D, H * shape[2], cfg));
    } else if (name == "wo") {
      out.push_back(rule(MupRole::hidden_dense, H * shape[2], D, cfg));
    } else if (name.rfind("wq_level", 0) == 0 || name.rfind("wk_level", 0) == 0) {
      MupRule r = rule(MupRole::mlr_factor, shape[2], H * shape[3], cfg);
      r.blocks = shape[1];
      out.push_back(r);
    } else if (name == "btt_left") {
      out.push_back(rule(MupRole::btt_left, a.btt.c * a.btt.s, H * a.btt.a, cfg));
    } else if (name == "btt_right") {
      MupRule r = rule(MupRole::btt_right, a.btt.d, H * a.btt.b * a.btt.s, cfg);
      r.btt_a = a.btt.a;
      out.push_back(r);
    }
  }
  return out;
}

AttentionVars attention_vars(const ScoreConfig& cfg, const AttentionWeights& shapes, const std::vector<Var>& vars,
                             std::size_t offset) {
  AttentionVars w;
  std::size_t i = offset;
  for_each_weight(cfg, shapes, [&](const std::string& name, const Tensor&) {
    const Var v = vars.at(i++);
    if (name == "wq") w.wq = v;
    else if (name == "wk") w.wk = v;
    else if (name.rfind("wq_level", 0) == 0) w.q_levels.push_back(v);
    else if (name.rfind("wk_level", 0) == 0) w.k_levels.push_back(v);
    else if (name == "btt_left") w.btt_left = v;
    else if (name == "btt_right") w.btt_right = v;
    else if (name == "wv") w.wv = v;
    else if (name == "wo") w.wo = v;
  });
  return w;
}

std::vector<std::int64_t> x_positions(std::int64_t T) {
  std::vector<std::int64_t> idx;
  for (std::int64_t t = 0; t < T; t += 2) idx.push_back(t);
  return idx;
}

double rms(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s / static_cast<double>(t.size()));
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Task

void IclTaskConfig::validate() const {
  require(d_input >= 1, "task.d_input must be >= 1");
  require(n_points == 0 || n_points >= 2, "task.n_points must be >= 2 (or 0 for 2 * d_input)");
}

Prompt make_prompt(const Tensor& xs, const Tensor& w) {
  if (xs.rank() != 2 || w.rank() != 1 || xs.dim(1) != w.dim(0)) {
    throw DimensionError("make_prompt: xs " + shape_str(xs.shape()) + " and w " + shape_str(w.shape()));
  }
  const auto N = xs.dim(0), d = xs.dim(1), T = 2 * N - 1;
  std::vector<double> tokens(static_cast<std::size_t>(T * d), 0.0);
  std::vector<double> targets(static_cast<std::size_t>(N));
  for (std::int64_t i = 0; i < N; ++i) {
    double f = 0.0;
    for (std::int64_t k = 0; k < d; ++k) {
      tokens[static_cast<std::size_t>(2 * i * d + k)] = xs(i, k);
      f += w[k] * xs(i, k);
    }
    targets[static_cast<std::size_t>(i)] = f;
    if (i + 1 < N) tokens[static_cast<std::size_t>((2 * i + 1) * d)] = f;
  }
  return {Tensor({T, d}, std::move(tokens)), xs, w, Tensor({N}, std::move(targets))};
}

Prompt sample_prompt(const IclTaskConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto d = cfg.d_input;
  const Tensor w = rng.normal_tensor({d});
  const Tensor xs = rng.normal_tensor({cfg.points(), d}, 1.0 / std::sqrt(static_cast<double>(d)));
  return make_prompt(xs, w);
}

PromptBatch sample_batch(const IclTaskConfig& cfg, std::int64_t count, const Rng& base, std::uint64_t first_index) {
  require(count >= 1, "batch size must be >= 1");
  const auto T = cfg.length(), N = cfg.points(), d = cfg.d_input;
  std::vector<double> tokens, targets;
  tokens.reserve(static_cast<std::size_t>(count * T * d));
  targets.reserve(static_cast<std::size_t>(count * N));
  for (std::int64_t i = 0; i < count; ++i) {
    Rng rng = base.split(first_index + static_cast<std::uint64_t>(i));
    const Prompt p = sample_prompt(cfg, rng);
    tokens.insert(tokens.end(), p.tokens.data().begin(), p.tokens.data().end());
    targets.insert(targets.end(), p.targets.data().begin(), p.targets.data().end());
  }
  return {Tensor({count, T, d}, std::move(tokens)), Tensor({count, N}, std::move(targets))};
}

// ---------------------------------------------------------------------------
// Model

void ModelConfig::validate() const {
  require(d_input >= 1, "model.d_input must be >= 1");
  require(D >= 1, "model.D must be >= 1");
  require(layers >= 1, "model.layers must be >= 1");
  require(max_len >= 1, "model.max_len must be >= 1");
  require(mlp_ratio >= 1, "model.mlp_ratio must be >= 1");
  require(base_width >= 1, "model.base_width must be >= 1");
  require(window >= -1, "model.window must be >= 0 (or -1 for none)");
  attention.validate(D);
  if (window >= 0) masks();
}

std::vector<MaskSpec> ModelConfig::masks() const {
  if (window < 0) return std::vector<MaskSpec>(static_cast<std::size_t>(layers), MaskSpec::causal());
  return global_plus_swa_masks(layers, window, global_layers);
}

IclModel IclModel::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  IclModel m;
  m.cfg_ = cfg;
  const auto D = cfg.D, hidden = cfg.mlp_ratio * cfg.D;
  auto add = [&](std::string path, const Shape& shape, const MupRule& r) {
    m.params_.push_back({std::move(path), mup_init(r, shape, rng), r});
  };
  add("embed.w_in", {cfg.d_input, D}, rule(MupRole::embedding, cfg.d_input, D, cfg));
  // One-hot position input: fan-in 1.
  add("embed.pos", {cfg.max_len, D}, rule(MupRole::embedding, 1, D, cfg));
  const auto shapes = weight_shapes(cfg.attention, D);
  const auto rules = attention_rules(cfg);
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    m.layer_offsets_.push_back(m.params_.size());
    for (std::size_t k = 0; k < shapes.size(); ++k) add(prefix + "attn." + shapes[k].first, shapes[k].second, rules[k]);
    add(prefix + "mlp.w1", {D, hidden}, rule(MupRole::hidden_dense, D, hidden, cfg));
    add(prefix + "mlp.w2", {hidden, D}, rule(MupRole::hidden_dense, hidden, D, cfg));
  }
  add("readout", {D, 1}, rule(MupRole::output, D, 1, cfg));
  return m;
}

IclModel IclModel::from_values(const ModelConfig& cfg, const std::vector<Tensor>& values) {
  Rng rng(0);
  IclModel m = init(cfg, rng);
  if (values.size() != m.params_.size()) {
    throw ValidationError("expected " + std::to_string(m.params_.size()) + " parameter tensors, got " +
                          std::to_string(values.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != m.params_[i].value.shape()) {
      throw DimensionError(m.params_[i].path + ": stored " + shape_str(values[i].shape()) + ", config expects " +
                           shape_str(m.params_[i].value.shape()));
    }
    m.params_[i].value = values[i];
  }
  return m;
}

std::vector<Var> IclModel::bind(Tape& tape, bool requires_grad) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.leaf(p.value, requires_grad));
  return vars;
}

Var IclModel::forward(Var tokens, const std::vector<Var>& vars, std::vector<Tensor>* residuals) const {
  if (tokens.shape().size() != 3 || tokens.dim(2) != cfg_.d_input) {
    throw DimensionError("model input must be [B, T, " + std::to_string(cfg_.d_input) + "], got " +
                         shape_str(tokens.shape()));
  }
  const auto T = tokens.dim(1);
  require(T <= cfg_.max_len, "sequence length " + std::to_string(T) + " exceeds model.max_len " +
                                 std::to_string(cfg_.max_len));
  cfg_.attention.validate_length(T);
  Var h = ad::add(ad::matmul(tokens, vars.at(0)), ad::slice_axis(vars.at(1), 0, 0, T));
  if (residuals) residuals->push_back(h.value());
  const auto masks = cfg_.masks();
  AttentionWeights shapes;
  const auto names = weight_shapes(cfg_.attention, cfg_.D);
  for (const auto& [name, shape] : names) {
    if (name.rfind("wq_level", 0) == 0) shapes.q_levels.emplace_back();
    if (name.rfind("wk_level", 0) == 0) shapes.k_levels.emplace_back();
  }
  for (std::int64_t l = 0; l < cfg_.layers; ++l) {
    const std::size_t off = layer_offsets_[static_cast<std::size_t>(l)];
    const AttentionVars att = attention_vars(cfg_.attention, shapes, vars, off);
    h = ad::add(h, attention_forward(ad::rms_norm(h), att, cfg_.attention, masks[static_cast<std::size_t>(l)]));
    const Var w1 = vars.at(off + names.size());
    const Var w2 = vars.at(off + names.size() + 1);
    h = ad::add(h, ad::matmul(ad::gelu(ad::matmul(ad::rms_norm(h), w1)), w2));
    if (residuals) residuals->push_back(h.value());
  }
  const Var out = ad::matmul(ad::rms_norm(h), vars.back());
  return ad::reshape(out, {tokens.dim(0), T});
}

Var IclModel::predictions(Var tokens, const std::vector<Var>& vars) const {
  return ad::gather_last(forward(tokens, vars), x_positions(tokens.dim(1)));
}

Tensor IclModel::readout(const Tensor& tokens) const {
  Tape tape;
  return forward(tape.constant(tokens), bind(tape, false)).value();
}

Tensor IclModel::predict(const Tensor& tokens) const {
  Tape tape;
  return predictions(tape.constant(tokens), bind(tape, false)).value();
}

std::vector<double> IclModel::residual_rms(const Tensor& tokens) const {
  Tape tape;
  std::vector<Tensor> residuals;
  forward(tape.constant(tokens), bind(tape, false), &residuals);
  std::vector<double> out;
  for (const auto& r : residuals) out.push_back(rms(r));
  return out;
}

std::vector<MupEntry> IclModel::mup_table(double base_lr) const {
  std::vector<MupEntry> out;
  for (const auto& p : params_) {
    MupRule r = p.rule;
    r.base_lr = base_lr;
    out.push_back({p.path, r});
  }
  return out;
}

Var icl_loss(Var predictions, Var targets) { return ad::mean(ad::square(ad::sub(predictions, targets))); }

double eval_error_at_N(const Predictor& predictor, const IclTaskConfig& cfg, std::int64_t count, const Rng& base,
                       std::uint64_t first_index) {
  require(count >= 1, "eval prompt count must be >= 1");
  constexpr std::int64_t kChunk = 256;
  const auto N = cfg.points();
  double total = 0.0;
  for (std::int64_t start = 0; start < count; start += kChunk) {
    const auto n = std::min(kChunk, count - start);
    const PromptBatch batch = sample_batch(cfg, n, base, first_index + static_cast<std::uint64_t>(start));
    const Tensor pred = predictor(batch.tokens);
    if (pred.shape() != batch.targets.shape()) {
      throw DimensionError("predictor returned " + shape_str(pred.shape()) + ", expected " +
                           shape_str(batch.targets.shape()));
    }
    for (std::int64_t b = 0; b < n; ++b) {
      const double e = pred(b, N - 1) - batch.targets(b, N - 1);
      total += e * e;
    }
  }
  return total / static_cast<double>(count);
}

Tensor least_squares_predictions(const Tensor& tokens) {
  if (tokens.rank() != 3 || tokens.dim(1) % 2 == 0) {
    throw DimensionError("least_squares_predictions expects [B, 2N-1, d], got " + shape_str(tokens.shape()));
  }
  const auto B = tokens.dim(0), T = tokens.dim(1), d = tokens.dim(2), N = (T + 1) / 2;
  std::vector<double> out(static_cast<std::size_t>(B * N), 0.0);
  for (std::int64_t b = 0; b < B; ++b) {
    Eigen::MatrixXd X(N, d);
    Eigen::VectorXd y(N);
    for (std::int64_t i = 0; i < N; ++i) {
      for (std::int64_t k = 0; k < d; ++k) X(i, k) = tokens.at({b, 2 * i, k});
      y(i) = i + 1 < N ? tokens.at({b, 2 * i + 1, 0}) : 0.0;
    }
    for (std::int64_t i = 1; i < N; ++i) {
      const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X.topRows(i));
      const Eigen::VectorXd w = cod.solve(y.head(i));
      out[static_cast<std::size_t>(b * N + i)] = X.row(i).dot(w);
    }
  }
  return Tensor({B, N}, std::move(out));
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  require(base_lr > 0.0 && std::isfinite(base_lr), "train.base_lr must be > 0");
  require(beta1 >= 0.0 && beta1 < 1.0, "train.beta1 must be in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "train.beta2 must be in [0, 1)");
  require(eps > 0.0, "train.eps must be > 0");
  require(weight_decay >= 0.0, "train.weight_decay must be >= 0");
  require(steps >= 0, "train.steps must be >= 0");
  require(batch_size >= 1, "train.batch_size must be >= 1");
  require(eval_every >= 1, "train.eval_every must be >= 1");
  require(eval_prompts >= 1, "train.eval_prompts must be >= 1");
}

std::string metrics_csv_header() { return "step,loss,eval_error,flops_cumulative,wall_seconds"; }

std::string metrics_csv_row(const MetricRow& row) {
  return std::to_string(row.step) + "," + format_double(row.loss) + "," + format_double(row.eval_error) + "," +
         std::to_string(row.flops_cumulative) + "," + format_double(row.wall_seconds);
}

AdamW::AdamW(const IclModel& model, const TrainConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  for (const auto& p : model.params()) {
    MupRule r = p.rule;
    r.base_lr = cfg.base_lr;
    lr_.push_back(adam_lr(r));
    m_.emplace_back(static_cast<std::size_t>(p.value.size()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.value.size()), 0.0);
  }
}

void AdamW::step(IclModel& model, const std::vector<Tensor>& grads) {
  auto& params = model.params();
  if (grads.size() != params.size()) throw DimensionError("AdamW: gradient count does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = grads[i].data();
    std::vector<double> w(params[i].value.data().begin(), params[i].value.data().end());
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
      w[k] -= lr_[i] * (update + cfg_.weight_decay * w[k]);
    }
    params[i].value = Tensor(params[i].value.shape(), std::move(w));
  }
}

std::vector<MetricRow> train(IclModel& model, const IclTaskConfig& task, const TrainConfig& cfg,
                             const std::function<void(const MetricRow&, const IclModel&)>& on_row) {
  task.validate();
  cfg.validate();
  PrecisionScope precision(cfg.precision);
  AdamW opt(model, cfg);
  const Rng root(cfg.seed);
  const Rng train_stream = root.split(1);
  const Rng eval_stream = root.split(2);
  const auto start = std::chrono::steady_clock::now();
  const auto B = cfg.batch_size;

  auto evaluate = [&] {
    return eval_error_at_N([&](const Tensor& t) { return model.predict(t); }, task, cfg.eval_prompts, eval_stream);
  };
  auto wall = [&] {
    if (!cfg.record_wall_time) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  std::vector<MetricRow> rows;
  auto emit = [&](MetricRow row) {
    rows.push_back(row);
    if (on_row) on_row(row, model);
  };

  {
    const PromptBatch batch = sample_batch(task, B, train_stream, 0);
    Tape tape;
    const Var loss = icl_loss(model.predictions(tape.constant(batch.tokens), model.bind(tape, false)),
                              tape.constant(batch.targets));
    emit({0, loss.value().item(), evaluate(), 0, wall()});
  }

  std::uint64_t flops = 0;
  for (std::int64_t s = 1; s <= cfg.steps; ++s) {
    const PromptBatch batch = sample_batch(task, B, train_stream, static_cast<std::uint64_t>((s - 1) * B));
    FlopScope scope;
    Tape tape;
    const auto vars = model.bind(tape, true);
    const Var loss = icl_loss(model.predictions(tape.constant(batch.tokens), vars), tape.constant(batch.targets));
    const double value = loss.value().item();
    if (!std::isfinite(value) || value > kDivergenceLoss) {
      Tape probe;
      std::vector<Tensor> residuals;
      model.forward(probe.constant(batch.tokens), model.bind(probe, false), &residuals);
      double biggest = 0.0;
      for (const auto& r : residuals) biggest = std::max(biggest, max_abs(r));
      throw NumericalError("training diverged at step " + std::to_string(s) + ": loss " + format_double(value) +
                           ", base lr " + format_double(cfg.base_lr) + ", max |activation| " +
                           format_double(biggest));
    }
    const Gradients grads = backward(tape, loss);
    std::vector<Tensor> g;
    g.reserve(vars.size());
    for (const auto& v : vars) g.push_back(grads[v]);
    opt.step(model, g);
    flops += scope.elapsed().flops;
    if (s % cfg.eval_every == 0 || s == cfg.steps) emit({s, value, evaluate(), flops, wall()});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::filesystem::path& dir, const IclModel& model) {
  std::filesystem::create_directories(dir);
  std::vector<Tensor> values;
  nlohmann::ordered_json manifest;
  manifest["format"] = "f64 little-endian tensor records";
  manifest["params"] = nlohmann::ordered_json::array();
  for (const auto& p : model.params()) {
    values.push_back(p.value);
    manifest["params"].push_back({{"path", p.path}, {"shape", p.value.shape()}, {"role", role_id(p.rule.role)}});
  }
  save_tensors(dir / "weights.bin", values);
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(2) << '\n';
}

IclModel load_checkpoint(const std::filesystem::path& dir, const ModelConfig& cfg) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw ValidationError("no manifest.json in " + dir.string());
  const auto manifest = nlohmann::json::parse(is);
  const auto values = load_tensors(dir / "weights.bin");
  IclModel m = IclModel::from_values(cfg, values);
  const auto& listed = manifest.at("params");
  if (listed.size() != values.size()) throw ValidationError("manifest lists a different number of tensors");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (listed[i].at("path").get<std::string>() != m.params()[i].path) {
      throw ValidationError("manifest entry " + std::to_string(i) + " is " + listed[i].at("path").get<std::string>() +
                            ", expected " + m.params()[i].path);
    }
  }
  return m;
}

}  // namespace structattn
