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
#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "plotdata.hpp"
#include "structattn/config.hpp"
#include "structattn/cost_model.hpp"
#include "structattn/icl.hpp"
#include "structattn/ops.hpp"
#include "structattn/oracle_suite.hpp"
#include "structattn/serialize.hpp"
#include "structattn/structured_io.hpp"

namespace structattn::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kMaterializeTolerance = 1e-10;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string precision;
  std::string out = "runs";
  bool markdown = false;
  bool record_wall_time = false;
  // materialize
  std::string spec, factors, compare;
  // grad-check
  std::string kind, ranks, btt, qk_norm = "default";
  std::int64_t D = 0, T = 0, heads = 1;
  double tolerance = 1e-5;
  // eval
  std::string run_dir;
  std::int64_t prompts = 2048;
  // oracle-suite
  std::int64_t configs = 50;
  // export-plotdata
  std::string runs, x = "step", y = "eval_error", out_file;
};

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError(path.string() + ": cannot write");
  os << content;
}

fs::path make_run_dir(const Options& o, const std::string& hash, std::uint64_t seed) {
  const fs::path dir = fs::path(o.out) / run_dir_name(hash, seed);
  fs::create_directories(dir);
  return dir;
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

ExperimentConfig load_config(const Options& o) {
  if (o.config.empty()) throw ValidationError("--config is required");
  try {
    ExperimentConfig cfg = load_experiment(o.config);
    if (!o.precision.empty() && cfg.train) cfg.train->precision = o.precision == "f32" ? Precision::f32 : Precision::f64;
    return cfg;
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    throw ValidationError(msg.rfind(o.config, 0) == 0 ? msg : o.config + ": " + msg);
  }
}

std::vector<std::uint64_t> seeds_of(const Options& o, const ExperimentConfig& cfg) {
  return o.seed ? std::vector<std::uint64_t>{*o.seed} : cfg.seeds;
}

// ---------------------------------------------------------------------------

StructuredMatrix matrix_from(const fs::path& spec_path, const std::string& factors_path, std::uint64_t seed) {
  StructuredSpec spec;
  try {
    spec = spec_from_json(load_json(spec_path));
  } catch (const ValidationError& e) {
    throw ValidationError(spec_path.string() + ": " + e.what());
  }
  if (factors_path.empty()) {
    Rng rng(seed);
    return StructuredMatrix::random(spec, rng);
  }
  std::ifstream in(factors_path, std::ios::binary);
  if (!in) throw ValidationError(factors_path + ": cannot open");
  std::vector<Tensor> factors;
  try {
    while (auto t = read_tensor(in)) factors.push_back(std::move(*t));
  } catch (const std::runtime_error& e) {
    throw ValidationError(factors_path + ": " + e.what());
  }
  return StructuredMatrix(spec, std::move(factors));
}

int cmd_materialize(const Options& o, std::ostream& out) {
  const std::uint64_t seed = o.seed.value_or(0);
  const StructuredMatrix mat = matrix_from(o.spec, o.factors, seed);
  const Tensor dense = materialize(mat);
  const json key{{"materialize", spec_to_json(mat.spec())}, {"factors", o.factors}};
  const fs::path dir = make_run_dir(o, short_hash(key), seed);
  std::ostringstream bytes;
  write_tensor(bytes, dense);
  write_file(dir / "dense.bin", bytes.str());
  out << family_name(mat.spec()) << " " << mat.rows() << "x" << mat.cols() << " -> " << (dir / "dense.bin").string()
      << "\n";
  if (o.compare.empty()) return kExitOk;

  const StructuredMatrix other = matrix_from(o.compare, "", seed);
  const Tensor other_dense = materialize(other);
  if (other_dense.shape() != dense.shape()) {
    throw ValidationError("--compare: shapes differ, " + shape_str(dense.shape()) + " vs " +
                          shape_str(other_dense.shape()));
  }
  const double delta = max_abs_diff(dense, other_dense);
  out << "max |delta| = " << fmt("%.17g", delta) << "\n";
  if (delta > kMaterializeTolerance) {
    throw NumericalError("materializations differ by " + fmt("%.3e", delta) + " > " +
                         fmt("%.0e", kMaterializeTolerance));
  }
  return kExitOk;
}

int cmd_flops(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = load_config(o);
  if (!cfg.cost) throw ValidationError(o.config + ": $.cost: missing");
  const auto rows = evaluate_cost(*cfg.cost);
  const fs::path dir = make_run_dir(o, cfg.hash(), seeds_of(o, cfg).front());
  const std::string csv = render_cost_csv(rows);
  write_file(dir / "flops.csv", csv);
  if (o.markdown) {
    const std::string md = render_cost_markdown(rows);
    write_file(dir / "flops.md", md);
    out << md;
  } else {
    out << csv;
  }
  return kExitOk;
}

std::vector<std::int64_t> parse_int_list(const std::string& text, char sep, const std::string& flag) {
  std::vector<std::int64_t> v;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, sep)) {
    try {
      std::size_t used = 0;
      v.push_back(std::stoll(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw ValidationError(flag + ": cannot parse '" + text + "'");
    }
  }
  return v;
}

ScoreConfig grad_check_config(const Options& o) {
  const ScoreKind kind = parse_score_kind(o.kind);
  if (o.D < 1 || o.T < 1 || o.heads < 1) throw ValidationError("--D, --T and --heads must be positive");
  ScoreConfig cfg;
  std::vector<std::int64_t> ranks;
  if (!o.ranks.empty()) ranks = parse_rank_allocation(o.ranks);
  switch (kind) {
    case ScoreKind::standard:
      cfg = ScoreConfig::standard(o.heads);
      break;
    case ScoreKind::mlr_attention: {
      if (ranks.empty()) {
        // Two levels when the length allows it.
        const auto hd = o.D / o.heads;
        if (o.T % 2 == 0 && o.T > 2 && hd >= 2) ranks = {hd - hd / 2, hd / 2};
        else ranks = {hd};
      }
      cfg = ScoreConfig::mlr_attention(o.heads, ranks);
      break;
    }
    case ScoreKind::bilinear_mlr:
      // Feature widths of at least 3 keep the normalized features away from
      // the saturated two-entry case.
      if (ranks.empty()) {
        ranks = {std::max<std::int64_t>(o.D, 3)};
        if (o.D % 2 == 0) ranks.push_back(std::max<std::int64_t>(o.D / 2, 2));
      }
      cfg = ScoreConfig::bilinear_mlr(o.heads, ranks);
      break;
    case ScoreKind::bilinear_btt: {
      BTTSpec spec;
      if (o.btt.empty()) {
        const auto root = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(o.D))));
        if (root * root != o.D) throw ValidationError("--btt: D = " + std::to_string(o.D) + " is not a perfect square");
        spec = {root, root, root, root, 1};
      } else {
        const auto v = parse_int_list(o.btt, ',', "--btt");
        if (v.size() != 5) throw ValidationError("--btt: expected a,b,c,d,s");
        spec = {v[0], v[1], v[2], v[3], v[4]};
      }
      cfg = ScoreConfig::bilinear_btt(o.heads, spec);
      break;
    }
  }
  if (o.qk_norm == "on") cfg.qk_norm = true;
  if (o.qk_norm == "off") cfg.qk_norm = false;
  return cfg;
}

int cmd_grad_check(const Options& o, std::ostream& out) {
  const ScoreConfig cfg = grad_check_config(o);
  const std::uint64_t seed = o.seed.value_or(0);
  const auto entries = attention_grad_check(cfg, o.D, o.T, seed);
  std::string csv = "weight,relative_error\n";
  double worst = 0.0;
  for (const auto& e : entries) {
    csv += e.name + "," + fmt("%.6e", e.relative_error) + "\n";
    worst = std::max(worst, e.relative_error);
  }
  const json key{{"grad-check", score_config_to_json(cfg)}, {"D", o.D}, {"T", o.T}};
  write_file(make_run_dir(o, short_hash(key), seed) / "gradcheck.csv", csv);
  out << csv << "max relative error = " << fmt("%.3e", worst) << " (tolerance " << fmt("%.0e", o.tolerance) << ")\n";
  if (!(worst < o.tolerance)) throw NumericalError("gradient check exceeded tolerance");
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct Job {
  ExperimentConfig cfg;
  std::uint64_t seed;
};

void require_training_sections(const ExperimentConfig& cfg, const std::string& path) {
  if (!cfg.task) throw ValidationError(path + ": $.task: missing");
  if (!cfg.model) throw ValidationError(path + ": $.model: missing");
  if (!cfg.train) throw ValidationError(path + ": $.train: missing");
}

std::vector<Job> jobs_of(const Options& o, const ExperimentConfig& cfg) {
  std::vector<Job> jobs;
  for (const auto& c : cfg.expand()) {
    for (auto seed : seeds_of(o, cfg)) jobs.push_back({c, seed});
  }
  return jobs;
}

void train_one(const Options& o, const Job& job, std::mutex& io, std::ostream& out) {
  TrainConfig t = *job.cfg.train;
  t.seed = job.seed;
  t.record_wall_time = o.record_wall_time;
  const fs::path dir = make_run_dir(o, job.cfg.hash(), job.seed);

  ExperimentConfig resolved = job.cfg;
  resolved.seeds = {job.seed};
  write_file(dir / "config.json", resolved.to_json().dump(2) + "\n");

  Rng init = Rng(job.seed).split(0);
  IclModel model = IclModel::init(*job.cfg.model, init);
  write_file(dir / "mup.csv", render_mup_csv(model.mup_table(t.base_lr)));

  std::ofstream metrics(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
  if (!metrics) throw ValidationError((dir / "metrics.csv").string() + ": cannot write");
  metrics << metrics_csv_header() << "\n";
  MetricRow last;
  try {
    train(model, *job.cfg.task, t, [&](const MetricRow& row, const IclModel&) {
      metrics << metrics_csv_row(row) << "\n" << std::flush;
      last = row;
    });
  } catch (const NumericalError& e) {
    throw NumericalError(dir.string() + ": " + e.what());
  }
  save_checkpoint(dir / "checkpoint", model);
  std::lock_guard<std::mutex> lock(io);
  out << dir.string() << ": step " << last.step << " loss " << fmt("%.6g", last.loss) << " eval_error "
      << fmt("%.6g", last.eval_error) << "\n";
}

int exit_code_of(const std::exception_ptr& error, std::ostream& err);

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = load_config(o);
  require_training_sections(cfg, o.config);
  const auto jobs = jobs_of(o, cfg);
  std::mutex io;
  std::atomic<std::size_t> next{0};
  std::vector<int> status(jobs.size(), kExitOk);
  const auto worker = [&] {
    for (std::size_t i; (i = next++) < jobs.size();) {
      try {
        train_one(o, jobs[i], io, out);
      } catch (...) {
        std::lock_guard<std::mutex> lock(io);
        status[i] = exit_code_of(std::current_exception(), err);
      }
    }
  };
  const auto workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(o.jobs, 1)), 1, jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return *std::max_element(status.begin(), status.end());
}

int cmd_eval(const Options& o, std::ostream& out) {
  const ExperimentConfig cfg = load_config(o);
  require_training_sections(cfg, o.config);
  if (o.prompts < 1) throw ValidationError("--prompts must be positive");
  const auto jobs = jobs_of(o, cfg);
  if (!o.run_dir.empty() && jobs.size() != 1) {
    throw ValidationError("--run needs a config without sweeps and a single seed");
  }
  for (const auto& job : jobs) {
    const fs::path dir = o.run_dir.empty() ? fs::path(o.out) / run_dir_name(job.cfg.hash(), job.seed)
                                           : fs::path(o.run_dir);
    if (!fs::is_directory(dir / "checkpoint")) throw ValidationError(dir.string() + ": no checkpoint");
    const IclModel model = load_checkpoint(dir / "checkpoint", *job.cfg.model);
    PrecisionScope precision(job.cfg.train->precision);
    // Stream 3 keeps the test prompts apart from training (1) and the
    // periodic evaluation set (2).
    const Rng test = Rng(job.seed).split(3);
    const double model_error =
        eval_error_at_N([&](const Tensor& tokens) { return model.predict(tokens); }, *job.cfg.task, o.prompts, test);
    const double ls_error = eval_error_at_N(least_squares_predictions, *job.cfg.task, o.prompts, test);
    std::string csv = "predictor,prompts,eval_error\n";
    csv += "model," + std::to_string(o.prompts) + "," + fmt("%.17g", model_error) + "\n";
    csv += "least_squares," + std::to_string(o.prompts) + "," + fmt("%.17g", ls_error) + "\n";
    write_file(dir / "eval.csv", csv);
    out << dir.string() << "\n" << csv;
  }
  return kExitOk;
}

int cmd_oracle_suite(const Options& o, std::ostream& out) {
  if (o.configs < 1) throw ValidationError("--configs must be positive");
  const std::uint64_t seed = o.seed.value_or(0);
  const auto checks = run_oracle_suite(seed, o.configs);
  const std::string csv = render_oracle_csv(checks);
  write_file(make_run_dir(o, short_hash(json{{"oracle-suite", o.configs}}), seed) / "oracle.csv", csv);
  out << csv;
  for (const auto& c : checks) {
    if (!c.passed()) throw NumericalError("oracle check " + c.name + " exceeded its tolerance");
  }
  return kExitOk;
}

int cmd_export_plotdata(const Options& o, std::ostream& out) {
  const std::string csv = export_plotdata(o.runs, o.x, o.y);
  if (o.out_file.empty()) {
    out << csv;
  } else {
    write_file(o.out_file, csv);
  }
  return kExitOk;
}

int exit_code_of(const std::exception_ptr& error, std::ostream& err) {
  try {
    std::rethrow_exception(error);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {  // ValidationError, DimensionError
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structured attention toolkit", "structattn"};
  app.require_subcommand(1);
  Options o;

  const auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", o.seed, "Random seed"); };
  const auto add_out = [&](CLI::App* sub) { sub->add_option("--out", o.out, "Output root")->capture_default_str(); };

  auto* materialize_cmd = app.add_subcommand("materialize", "Build the dense matrix of a structured spec");
  materialize_cmd->add_option("--spec", o.spec, "Spec JSON")->required();
  materialize_cmd->add_option("--factors", o.factors, "Factor tensors in canonical order (default: random)");
  materialize_cmd->add_option("--compare", o.compare, "Second spec; report max |delta| on the same seed");
  add_seed(materialize_cmd);
  add_out(materialize_cmd);

  auto* flops_cmd = app.add_subcommand("flops", "Cost report for the config's cost section");
  flops_cmd->add_option("--config", o.config, "Experiment JSON")->required();
  flops_cmd->add_flag("--markdown", o.markdown, "Render a markdown table");
  add_seed(flops_cmd);
  add_out(flops_cmd);

  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference check of one attention layer");
  grad_cmd->add_option("--kind", o.kind, "standard, mlr-attention, bilinear-mlr or bilinear-btt")->required();
  grad_cmd->add_option("--D", o.D, "Model width")->required();
  grad_cmd->add_option("--T", o.T, "Sequence length")->required();
  grad_cmd->add_option("--heads", o.heads)->capture_default_str();
  grad_cmd->add_option("--ranks", o.ranks, "Level ranks, e.g. 4|2");
  grad_cmd->add_option("--btt", o.btt, "a,b,c,d,s");
  grad_cmd->add_option("--qk-norm", o.qk_norm)->check(CLI::IsMember({"default", "on", "off"}))->capture_default_str();
  grad_cmd->add_option("--tol", o.tolerance)->capture_default_str();
  add_seed(grad_cmd);
  add_out(grad_cmd);

  auto* train_cmd = app.add_subcommand("train-icl", "Train on in-context regression");
  train_cmd->add_option("--config", o.config, "Experiment JSON")->required();
  train_cmd->add_option("--jobs", o.jobs, "Runs in parallel")->capture_default_str();
  train_cmd->add_option("--precision", o.precision)->check(CLI::IsMember({"f32", "f64"}));
  train_cmd->add_flag("--record-wall-time", o.record_wall_time, "Fill wall_seconds (not reproducible)");
  add_seed(train_cmd);
  add_out(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "Error at the last position for trained checkpoints");
  eval_cmd->add_option("--config", o.config, "Experiment JSON")->required();
  eval_cmd->add_option("--run", o.run_dir, "Run directory (default: derived from the config)");
  eval_cmd->add_option("--prompts", o.prompts)->capture_default_str();
  eval_cmd->add_option("--precision", o.precision)->check(CLI::IsMember({"f32", "f64"}));
  add_seed(eval_cmd);
  add_out(eval_cmd);

  auto* oracle_cmd = app.add_subcommand("oracle-suite", "Structured and attention oracle checks");
  oracle_cmd->add_option("--configs", o.configs, "Random configurations per family")->capture_default_str();
  add_seed(oracle_cmd);
  add_out(oracle_cmd);

  auto* plot_cmd = app.add_subcommand("export-plotdata", "Curves from run directories as CSV");
  plot_cmd->add_option("--runs", o.runs, "Directory holding run directories")->required();
  plot_cmd->add_option("--x", o.x)->check(CLI::IsMember({"step", "flops_cumulative"}))->capture_default_str();
  plot_cmd->add_option("--y", o.y)->check(CLI::IsMember({"loss", "eval_error"}))->capture_default_str();
  plot_cmd->add_option("--out", o.out_file, "Output file (default: stdout)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitInvalid;
  }

  try {
    if (*materialize_cmd) return cmd_materialize(o, out);
    if (*flops_cmd) return cmd_flops(o, out);
    if (*grad_cmd) return cmd_grad_check(o, out);
    if (*train_cmd) return cmd_train(o, out, err);
    if (*eval_cmd) return cmd_eval(o, out);
    if (*oracle_cmd) return cmd_oracle_suite(o, out);
    if (*plot_cmd) return cmd_export_plotdata(o, out);
  } catch (...) {
    return exit_code_of(std::current_exception(), err);
  }
  return kExitInvalid;
}

}  // namespace structattn::cli
