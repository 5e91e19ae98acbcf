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
#include "structattn/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "structattn/structured_io.hpp"

namespace structattn {

using nlohmann::json;

namespace {

// Prefixes `path` unless the message already starts with a JSON path.
[[noreturn]] void rethrow_at(const std::string& path, const std::exception& e) {
  const std::string msg = e.what();
  throw ValidationError(msg.rfind("$", 0) == 0 ? msg : path + ": " + msg);
}

std::int64_t int_or(const json& obj, const std::string& key, const std::string& path, std::int64_t fallback,
                    std::int64_t min_value) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj[key];
  if (!v.is_number_integer() || v.get<std::int64_t>() < min_value) {
    throw ValidationError(path + "." + key + ": expected an integer >= " + std::to_string(min_value));
  }
  return v.get<std::int64_t>();
}

double number_or(const json& obj, const std::string& key, const std::string& path, double fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj[key];
  if (!v.is_number() || !std::isfinite(v.get<double>())) throw ValidationError(path + "." + key + ": expected a number");
  return v.get<double>();
}

bool bool_or(const json& obj, const std::string& key, const std::string& path, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean()) throw ValidationError(path + "." + key + ": expected true or false");
  return obj[key].get<bool>();
}

std::string string_of(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key)) throw ValidationError(path + "." + key + ": missing");
  if (!obj[key].is_string()) throw ValidationError(path + "." + key + ": expected a string");
  return obj[key].get<std::string>();
}

std::vector<std::int64_t> int_array(const json& v, const std::string& where, std::int64_t min_value) {
  if (!v.is_array()) throw ValidationError(where + ": expected an array");
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!v[i].is_number_integer() || v[i].get<std::int64_t>() < min_value) {
      throw ValidationError(where + "[" + std::to_string(i) + "]: expected an integer >= " + std::to_string(min_value));
    }
    out.push_back(v[i].get<std::int64_t>());
  }
  return out;
}

std::vector<std::int64_t> rank_allocation_of(const json& obj, const std::string& path) {
  const std::string where = path + ".rank_allocation";
  if (!obj.contains("rank_allocation")) throw ValidationError(where + ": missing");
  const auto& v = obj["rank_allocation"];
  std::vector<std::int64_t> ranks;
  if (v.is_string()) {
    try {
      ranks = parse_rank_allocation(v.get<std::string>());
    } catch (const std::exception& e) {
      rethrow_at(where, e);
    }
  } else {
    ranks = int_array(v, where, 1);
  }
  if (ranks.empty()) throw ValidationError(where + ": empty");
  if (obj.contains("levels")) {
    const auto levels = json_positive_int(obj, "levels", path);
    if (levels != static_cast<std::int64_t>(ranks.size())) {
      throw ValidationError(path + ".levels: " + std::to_string(levels) + " does not match the " +
                            std::to_string(ranks.size()) + " entries of rank_allocation");
    }
  }
  return ranks;
}

std::int64_t perfect_root(std::int64_t D, const std::string& where) {
  auto root = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(D))));
  if (root * root != D) {
    throw ValidationError(where + ": D = " + std::to_string(D) + " is not a perfect square; give a, b, c, d");
  }
  return root;
}

// a = b = c = d = sqrt(D) unless all four are given; s defaults to 1.
BTTSpec btt_of(const json& obj, std::int64_t D, const std::string& path) {
  const std::string where = path + ".btt";
  const json empty = json::object();
  const json& b = obj.contains("btt") ? obj["btt"] : empty;
  json_reject_unknown(b, {"a", "b", "c", "d", "s"}, where);
  BTTSpec spec;
  spec.s = int_or(b, "s", where, 1, 1);
  const int given = static_cast<int>(b.contains("a")) + b.contains("b") + b.contains("c") + b.contains("d");
  if (given == 0) {
    const auto root = perfect_root(D, where);
    spec.a = spec.b = spec.c = spec.d = root;
  } else if (given == 4) {
    spec.a = json_positive_int(b, "a", where);
    spec.b = json_positive_int(b, "b", where);
    spec.c = json_positive_int(b, "c", where);
    spec.d = json_positive_int(b, "d", where);
  } else {
    throw ValidationError(where + ": give all of a, b, c, d or none");
  }
  return spec;
}

json btt_to_json(const BTTSpec& s) { return json{{"a", s.a}, {"b", s.b}, {"c", s.c}, {"d", s.d}, {"s", s.s}}; }

std::string precision_id(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

IclTaskConfig parse_task(const json& j) {
  const std::string path = "$.task";
  json_reject_unknown(j, {"d_input", "n_points", "label_encoding"}, path);
  IclTaskConfig task;
  task.d_input = json_positive_int(j, "d_input", path);
  task.n_points = int_or(j, "n_points", path, 0, 0);
  if (j.contains("label_encoding") && string_of(j, "label_encoding", path) != "coordinate0") {
    throw ValidationError(path + ".label_encoding: only \"coordinate0\" is supported");
  }
  try {
    task.validate();
  } catch (const std::exception& e) {
    rethrow_at(path, e);
  }
  return task;
}

TrainConfig parse_train(const json& j, std::vector<double>& lr_sweep) {
  const std::string path = "$.train";
  json_reject_unknown(j, {"base_lr", "beta1", "beta2", "eps", "weight_decay", "steps", "batch_size", "eval_every",
                          "eval_prompts", "precision"},
                      path);
  TrainConfig t;
  if (j.contains("base_lr") && j["base_lr"].is_array()) {
    const auto& v = j["base_lr"];
    if (v.empty()) throw ValidationError(path + ".base_lr: empty sweep");
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number() || !(v[i].get<double>() > 0.0)) {
        throw ValidationError(path + ".base_lr[" + std::to_string(i) + "]: expected a positive number");
      }
      lr_sweep.push_back(v[i].get<double>());
    }
    t.base_lr = lr_sweep.front();
  } else {
    t.base_lr = number_or(j, "base_lr", path, t.base_lr);
  }
  t.beta1 = number_or(j, "beta1", path, t.beta1);
  t.beta2 = number_or(j, "beta2", path, t.beta2);
  t.eps = number_or(j, "eps", path, t.eps);
  t.weight_decay = number_or(j, "weight_decay", path, t.weight_decay);
  t.steps = int_or(j, "steps", path, t.steps, 0);
  t.batch_size = int_or(j, "batch_size", path, t.batch_size, 1);
  t.eval_every = int_or(j, "eval_every", path, t.eval_every, 1);
  t.eval_prompts = int_or(j, "eval_prompts", path, t.eval_prompts, 1);
  if (j.contains("precision")) {
    const auto p = string_of(j, "precision", path);
    if (p != "f32" && p != "f64") throw ValidationError(path + ".precision: expected \"f32\" or \"f64\"");
    t.precision = p == "f32" ? Precision::f32 : Precision::f64;
  }
  try {
    t.validate();
  } catch (const std::exception& e) {
    rethrow_at(path, e);
  }
  return t;
}

ModelConfig resolve_model(const json& j, std::int64_t D, const IclTaskConfig& task) {
  const std::string path = "$.model";
  ModelConfig m;
  m.d_input = task.d_input;
  m.D = D;
  m.layers = int_or(j, "layers", path, m.layers, 1);
  m.max_len = int_or(j, "max_len", path, task.length(), 1);
  m.mlp_ratio = int_or(j, "mlp_ratio", path, m.mlp_ratio, 1);
  m.base_width = int_or(j, "base_width", path, m.base_width, 1);
  if (!j.contains("attention")) throw ValidationError(path + ".attention: missing");
  const std::string apath = path + ".attention";
  const json& a = j["attention"];
  m.attention = parse_score_config(a, D, apath);
  m.window = int_or(a, "window", apath, -1, -1);
  if (a.contains("global_layers")) {
    if (m.window < 0) throw ValidationError(apath + ".global_layers: only meaningful with a window");
    m.global_layers = int_array(a["global_layers"], apath + ".global_layers", 0);
  } else if (m.window >= 0) {
    m.global_layers = default_global_layers(m.layers);
  }
  try {
    m.validate();
  } catch (const std::exception& e) {
    rethrow_at(path, e);
  }
  if (m.max_len < task.length()) {
    throw ValidationError(path + ".max_len: " + std::to_string(m.max_len) + " is shorter than the prompt length " +
                          std::to_string(task.length()));
  }
  try {
    m.attention.validate_length(task.length());
  } catch (const std::exception& e) {
    rethrow_at(apath, e);
  }
  return m;
}

CostRow evaluate_row(const CostConfig& cfg, const CostRowConfig& row) {
  const auto T = row.T > 0 ? row.T : cfg.T;
  const auto D = row.D > 0 ? row.D : cfg.D;
  CostRow out{row.id, row.kind, {}};
  if (row.kind == "structured") {
    out.family = family_name(*row.spec);
    validate(*row.spec);
    out.report = table1_summary(*row.spec);
    return out;
  }
  switch (parse_score_kind(row.kind)) {
    case ScoreKind::standard:
      if (row.r > D) throw ValidationError("r = " + std::to_string(row.r) + " exceeds D = " + std::to_string(D));
      out.report = standard_attention_cost(T, D, row.r);
      break;
    case ScoreKind::mlr_attention:
      out.report = mlr_attention_cost(T, D, row.ranks);
      break;
    case ScoreKind::bilinear_mlr: {
      const auto finest = std::int64_t{1} << (row.ranks.size() - 1);
      if (D % finest != 0) {
        throw ValidationError("2^(L-1) = " + std::to_string(finest) + " must divide D = " + std::to_string(D));
      }
      out.report = bilinear_mlr_cost(T, D, row.ranks, parse_mlr_order(row.order.empty() ? "optimal" : row.order));
      break;
    }
    case ScoreKind::bilinear_btt:
      if (row.btt.m() != D || row.btt.n() != D) {
        throw ValidationError("BTT shape needs ab = cd = D = " + std::to_string(D));
      }
      out.report = bilinear_btt_cost(T, row.btt, parse_btt_order(row.order.empty() ? "optimal" : row.order));
      break;
  }
  return out;
}

CostConfig parse_cost(const json& j) {
  const std::string path = "$.cost";
  json_reject_unknown(j, {"T", "D", "rows"}, path);
  CostConfig cfg;
  cfg.T = int_or(j, "T", path, cfg.T, 1);
  cfg.D = int_or(j, "D", path, cfg.D, 1);
  if (!j.contains("rows") || !j["rows"].is_array() || j["rows"].empty()) {
    throw ValidationError(path + ".rows: expected a non-empty array");
  }
  std::set<std::string> ids;
  for (std::size_t i = 0; i < j["rows"].size(); ++i) {
    const std::string where = path + ".rows[" + std::to_string(i) + "]";
    const json& r = j["rows"][i];
    json_reject_unknown(r, {"id", "kind", "T", "D", "r", "levels", "rank_allocation", "btt", "order", "spec"}, where);
    CostRowConfig row;
    row.id = string_of(r, "id", where);
    if (!ids.insert(row.id).second) throw ValidationError(where + ".id: duplicate id '" + row.id + "'");
    row.kind = string_of(r, "kind", where);
    row.T = int_or(r, "T", where, 0, 1);
    row.D = int_or(r, "D", where, 0, 1);
    const auto D = row.D > 0 ? row.D : cfg.D;
    const auto allowed = [&](std::initializer_list<const char*> keys) {
      json_reject_unknown(r, keys, where);
    };
    if (row.kind == "structured") {
      allowed({"id", "kind", "spec"});
      if (!r.contains("spec")) throw ValidationError(where + ".spec: missing");
      row.spec = spec_from_json(r["spec"], where + ".spec");
    } else {
      ScoreKind kind;
      try {
        kind = parse_score_kind(row.kind);
      } catch (const std::exception& e) {
        rethrow_at(where + ".kind", e);
      }
      switch (kind) {
        case ScoreKind::standard:
          allowed({"id", "kind", "T", "D", "r"});
          row.r = json_positive_int(r, "r", where);
          break;
        case ScoreKind::mlr_attention:
          allowed({"id", "kind", "T", "D", "levels", "rank_allocation"});
          row.ranks = rank_allocation_of(r, where);
          break;
        case ScoreKind::bilinear_mlr:
          allowed({"id", "kind", "T", "D", "levels", "rank_allocation", "order"});
          row.ranks = rank_allocation_of(r, where);
          break;
        case ScoreKind::bilinear_btt:
          allowed({"id", "kind", "T", "D", "btt", "order"});
          row.btt = btt_of(r, D, where);
          break;
      }
      if (r.contains("order")) row.order = string_of(r, "order", where);
    }
    try {
      evaluate_row(cfg, row);
    } catch (const std::exception& e) {
      rethrow_at(where, e);
    }
    cfg.rows.push_back(std::move(row));
  }
  return cfg;
}

json cost_to_json(const CostConfig& cfg) {
  json rows = json::array();
  for (const auto& row : cfg.rows) {
    json r{{"id", row.id}, {"kind", row.kind}};
    if (row.kind == "structured") {
      r["spec"] = spec_to_json(*row.spec);
      rows.push_back(r);
      continue;
    }
    if (row.T > 0) r["T"] = row.T;
    if (row.D > 0) r["D"] = row.D;
    switch (parse_score_kind(row.kind)) {
      case ScoreKind::standard:
        r["r"] = row.r;
        break;
      case ScoreKind::mlr_attention:
        r["rank_allocation"] = format_rank_allocation(row.ranks);
        break;
      case ScoreKind::bilinear_mlr:
        r["rank_allocation"] = format_rank_allocation(row.ranks);
        r["order"] = row.order.empty() ? "optimal" : row.order;
        break;
      case ScoreKind::bilinear_btt:
        r["btt"] = btt_to_json(row.btt);
        r["order"] = row.order.empty() ? "optimal" : row.order;
        break;
    }
    rows.push_back(r);
  }
  return json{{"T", cfg.T}, {"D", cfg.D}, {"rows", rows}};
}

}  // namespace

std::vector<CostRow> evaluate_cost(const CostConfig& cfg) {
  std::vector<CostRow> out;
  for (const auto& row : cfg.rows) out.push_back(evaluate_row(cfg, row));
  return out;
}

ScoreConfig parse_score_config(const json& j, std::int64_t D, const std::string& path) {
  json_reject_unknown(j, {"kind", "heads", "levels", "rank_allocation", "btt", "qk_norm", "norm_constant",
                          "sqrt_scaling", "window", "global_layers"},
                      path);
  ScoreKind kind;
  try {
    kind = parse_score_kind(string_of(j, "kind", path));
  } catch (const std::exception& e) {
    rethrow_at(path + ".kind", e);
  }
  const auto heads = int_or(j, "heads", path, 1, 1);
  const auto only_for = [&](const char* key, bool ok, const char* kinds) {
    if (j.contains(key) && !ok) throw ValidationError(path + "." + key + ": only used by " + kinds);
  };
  const bool mlr = kind == ScoreKind::mlr_attention || kind == ScoreKind::bilinear_mlr;
  only_for("rank_allocation", mlr, "the MLR kinds");
  only_for("levels", mlr, "the MLR kinds");
  only_for("btt", kind == ScoreKind::bilinear_btt, "bilinear-btt");
  only_for("sqrt_scaling", kind == ScoreKind::standard, "standard");

  ScoreConfig cfg;
  switch (kind) {
    case ScoreKind::standard:
      cfg = ScoreConfig::standard(heads);
      break;
    case ScoreKind::mlr_attention:
      cfg = ScoreConfig::mlr_attention(heads, rank_allocation_of(j, path));
      break;
    case ScoreKind::bilinear_mlr:
      cfg = ScoreConfig::bilinear_mlr(heads, rank_allocation_of(j, path));
      break;
    case ScoreKind::bilinear_btt:
      cfg = ScoreConfig::bilinear_btt(heads, btt_of(j, D, path));
      break;
  }
  cfg.qk_norm = bool_or(j, "qk_norm", path, cfg.qk_norm);
  cfg.norm_constant = number_or(j, "norm_constant", path, cfg.norm_constant);
  if (!(cfg.norm_constant > 0.0)) throw ValidationError(path + ".norm_constant: must be positive");
  cfg.sqrt_scaling = bool_or(j, "sqrt_scaling", path, cfg.sqrt_scaling);
  try {
    cfg.validate(D);
  } catch (const std::exception& e) {
    rethrow_at(path, e);
  }
  return cfg;
}

json score_config_to_json(const ScoreConfig& cfg) {
  json j{{"kind", kind_id(cfg.kind)}, {"heads", cfg.heads}, {"qk_norm", cfg.qk_norm},
         {"norm_constant", cfg.norm_constant}};
  switch (cfg.kind) {
    case ScoreKind::standard:
      j["sqrt_scaling"] = cfg.sqrt_scaling;
      break;
    case ScoreKind::mlr_attention:
    case ScoreKind::bilinear_mlr:
      j["levels"] = cfg.levels();
      j["rank_allocation"] = format_rank_allocation(cfg.ranks);
      break;
    case ScoreKind::bilinear_btt:
      j["btt"] = btt_to_json(cfg.btt);
      break;
  }
  return j;
}

ExperimentConfig parse_experiment(const json& j) {
  const std::string path = "$";
  json_reject_unknown(j, {"schema_version", "cost", "task", "model", "train", "seeds"}, path);
  ExperimentConfig cfg;
  cfg.schema_version = string_of(j, "schema_version", path);
  if (cfg.schema_version != kSchemaVersion) {
    throw ValidationError("$.schema_version: unsupported version '" + cfg.schema_version + "', expected '" +
                          kSchemaVersion + "'");
  }
  if (j.contains("seeds")) {
    const auto& s = j["seeds"];
    cfg.seeds.clear();
    for (auto v : s.is_array() ? int_array(s, "$.seeds", 0) : int_array(json::array({s}), "$.seeds", 0)) {
      cfg.seeds.push_back(static_cast<std::uint64_t>(v));
    }
    if (cfg.seeds.empty()) throw ValidationError("$.seeds: empty");
  }
  if (j.contains("cost")) cfg.cost = parse_cost(j["cost"]);
  if (j.contains("task")) cfg.task = parse_task(j["task"]);
  if (j.contains("train")) cfg.train = parse_train(j["train"], cfg.lr_sweep);
  if (j.contains("model")) {
    if (!cfg.task) throw ValidationError("$.task: missing; the model takes d_input from it");
    const json& m = j["model"];
    json_reject_unknown(m, {"D", "layers", "max_len", "mlp_ratio", "base_width", "attention"}, "$.model");
    std::vector<std::int64_t> widths;
    if (m.contains("D") && m["D"].is_array()) {
      widths = int_array(m["D"], "$.model.D", 1);
      if (widths.empty()) throw ValidationError("$.model.D: empty sweep");
      cfg.width_sweep = widths;
    } else {
      widths = {json_positive_int(m, "D", "$.model")};
    }
    // Every swept width is resolved now so that errors surface at load time.
    for (auto D : widths) cfg.model = resolve_model(m, D, *cfg.task);
    if (!cfg.width_sweep.empty()) cfg.model = resolve_model(m, widths.front(), *cfg.task);
    cfg.model_source = m;
  }
  return cfg;
}

std::vector<ExperimentConfig> ExperimentConfig::expand() const {
  std::vector<ExperimentConfig> out;
  const std::vector<std::int64_t> widths = width_sweep.empty() && model ? std::vector<std::int64_t>{model->D}
                                                                         : width_sweep;
  const std::vector<double> lrs = lr_sweep.empty() && train ? std::vector<double>{train->base_lr} : lr_sweep;
  const auto width_list = widths.empty() ? std::vector<std::int64_t>{0} : widths;
  const auto lr_list = lrs.empty() ? std::vector<double>{0.0} : lrs;
  for (auto D : width_list) {
    for (auto lr : lr_list) {
      ExperimentConfig c = *this;
      c.width_sweep.clear();
      c.lr_sweep.clear();
      if (model && !width_sweep.empty()) c.model = resolve_model(model_source, D, *task);
      if (train) c.train->base_lr = lr;
      out.push_back(std::move(c));
    }
  }
  return out;
}

json ExperimentConfig::to_json() const {
  json j{{"schema_version", schema_version}};
  if (cost) j["cost"] = cost_to_json(*cost);
  if (task) {
    j["task"] = json{{"d_input", task->d_input}, {"n_points", task->points()}, {"label_encoding", "coordinate0"}};
  }
  if (model) {
    json a = score_config_to_json(model->attention);
    if (model->window >= 0) {
      a["window"] = model->window;
      a["global_layers"] = model->global_layers;
    }
    json D = width_sweep.empty() ? json(model->D) : json(width_sweep);
    j["model"] = json{{"D", D},
                      {"layers", model->layers},
                      {"max_len", model->max_len},
                      {"mlp_ratio", model->mlp_ratio},
                      {"base_width", model->base_width},
                      {"attention", a}};
  }
  if (train) {
    json lr = lr_sweep.empty() ? json(train->base_lr) : json(lr_sweep);
    j["train"] = json{{"base_lr", lr},
                      {"beta1", train->beta1},
                      {"beta2", train->beta2},
                      {"eps", train->eps},
                      {"weight_decay", train->weight_decay},
                      {"steps", train->steps},
                      {"batch_size", train->batch_size},
                      {"eval_every", train->eval_every},
                      {"eval_prompts", train->eval_prompts},
                      {"precision", precision_id(train->precision)}};
  }
  j["seeds"] = seeds;
  return j;
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("seeds");
  return short_hash(j);
}

json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path.string() + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

ExperimentConfig load_experiment(const std::filesystem::path& path) { return parse_experiment(load_json(path)); }

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string short_hash(const json& j) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(fnv1a64(j.dump()) >> 32));
  return buf;
}

std::string run_dir_name(const std::string& hash, std::uint64_t seed) {
  return hash + "-seed" + std::to_string(seed);
}

}  // namespace structattn
