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
// Experiment configuration files. One JSON document carries optional
// sections for the cost report, the ICL task, the model, training and seeds:
//
//   {
//     "schema_version": "1",
//     "task":  {"d_input": 16, "n_points": 0, "label_encoding": "coordinate0"},
//     "model": {"D": 64, "layers": 2, "mlp_ratio": 4, "base_width": 64,
//               "attention": {"kind": "mlr-attention", "heads": 1,
//                             "rank_allocation": "32|8|6|4|4|4|4|2",
//                             "qk_norm": false, "window": 16}},
//     "train": {"base_lr": 1e-3, "steps": 2000, "batch_size": 32},
//     "seeds": [0, 1, 2],
//     "cost":  {"T": 1024, "D": 512,
//               "rows": [{"id": "mlr8", "kind": "mlr-attention", "rank_allocation": "8|8|8|8|8|8|8|8"}]}
//   }
//
// train.base_lr and model.D may also be arrays; expand() turns them into
// one config per combination. Every invariant is checked while parsing and
// errors name the JSON path of the offending value.

#ifndef STRUCTATTN_CONFIG_HPP_
#define STRUCTATTN_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "structattn/cost_model.hpp"
#include "structattn/icl.hpp"

namespace structattn {

inline constexpr const char* kSchemaVersion = "1";

/// One cost-report row. kind is an attention kind id or "structured", in
/// which case `spec` holds a square structured matrix for the parameter and
/// rank summary.
struct CostRowConfig {
  std::string id;
  std::string kind;
  std::int64_t T = 0, D = 0;  // 0 means the section default
  std::int64_t r = 0;
  std::vector<std::int64_t> ranks;
  BTTSpec btt;
  std::string order;  // empty means optimal
  std::optional<StructuredSpec> spec;
};

struct CostConfig {
  std::int64_t T = 1024;
  std::int64_t D = 512;
  std::vector<CostRowConfig> rows;
};

std::vector<CostRow> evaluate_cost(const CostConfig& cfg);

struct ExperimentConfig {
  std::string schema_version = kSchemaVersion;
  std::optional<CostConfig> cost;
  std::optional<IclTaskConfig> task;
  std::optional<ModelConfig> model;
  std::optional<TrainConfig> train;
  std::vector<std::uint64_t> seeds{0};
  /// Sweep values; empty after expand().
  std::vector<double> lr_sweep;
  std::vector<std::int64_t> width_sweep;
  /// The model section as written, re-resolved for each swept width.
  nlohmann::json model_source;

  /// One config per (width, lr) combination, in that nesting order.
  std::vector<ExperimentConfig> expand() const;
  /// Fully resolved JSON; parse_experiment(to_json()) round-trips.
  nlohmann::json to_json() const;
  /// FNV-1a 64 of the resolved JSON without seeds, as 8 hex digits.
  std::string hash() const;
};

ExperimentConfig parse_experiment(const nlohmann::json& j);
/// Throws ValidationError for unreadable files and malformed JSON.
ExperimentConfig load_experiment(const std::filesystem::path& path);
nlohmann::json load_json(const std::filesystem::path& path);

nlohmann::json score_config_to_json(const ScoreConfig& cfg);
/// `D` resolves BTT defaults (a = b = c = d = sqrt(D)) and validates.
ScoreConfig parse_score_config(const nlohmann::json& j, std::int64_t D, const std::string& path);

std::uint64_t fnv1a64(const std::string& bytes);
std::string short_hash(const nlohmann::json& j);
/// "<hash>-seed<seed>"
std::string run_dir_name(const std::string& hash, std::uint64_t seed);

}  // namespace structattn

#endif  // STRUCTATTN_CONFIG_HPP_
