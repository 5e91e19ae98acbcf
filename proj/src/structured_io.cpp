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

#include "structattn/structured_io.hpp"

#include <algorithm>

namespace structattn {
namespace {

using nlohmann::json;

std::vector<std::int64_t> int_list(const json& obj, const std::string& key, const std::string& path) {
  const std::string where = path + "." + key;
  if (!obj.contains(key) || !obj[key].is_array()) throw ValidationError(where + ": expected an array of integers");
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < obj[key].size(); ++i) {
    const auto& v = obj[key][i];
    if (!v.is_number_integer()) throw ValidationError(where + "[" + std::to_string(i) + "]: expected an integer");
    out.push_back(v.get<std::int64_t>());
  }
  return out;
}

std::vector<std::int64_t> rank_list(const json& obj, const std::string& path) {
  const auto& v = obj["ranks"];
  if (v.is_string()) {
    try {
      return parse_rank_allocation(v.get<std::string>());
    } catch (const ValidationError& e) {
      throw ValidationError(path + ".ranks: " + e.what());
    }
  }
  return int_list(obj, "ranks", path);
}

PermutationMap perm_from_json(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.contains(key) || obj[key].is_null()) return {};
  const std::string where = path + "." + key;
  const auto& v = obj[key];
  try {
    if (v.is_array()) return PermutationMap(int_list(obj, key, path));
    if (v.is_object()) {
      json_reject_unknown(v, {"reshape"}, where);
      const auto dims = int_list(v, "reshape", where);
      if (dims.size() != 3) throw ValidationError(where + ".reshape: expected [outer, inner, trailing]");
      return perm_reshape_transpose(dims[0], dims[1], dims[2]);
    }
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    throw ValidationError(msg.rfind(where, 0) == 0 ? msg : where + ": " + msg);
  }
  throw ValidationError(where + ": expected an index array or {\"reshape\": [outer, inner, trailing]}");
}

json blocks_json(const std::vector<std::int64_t>& v) { return json(v); }

}  // namespace

std::int64_t json_positive_int(const json& obj, const std::string& key, const std::string& path) {
  const std::string where = path + "." + key;
  if (!obj.contains(key)) throw ValidationError(where + ": missing");
  const auto& v = obj[key];
  if (!v.is_number_integer() || v.get<std::int64_t>() < 1) throw ValidationError(where + ": expected a positive integer");
  return v.get<std::int64_t>();
}

void json_reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& path) {
  if (!obj.is_object()) throw ValidationError(path + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ValidationError(path + "." + key + ": unknown key");
    }
  }
}

json spec_to_json(const StructuredSpec& spec) {
  json j;
  j["family"] = family_name(spec);
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, BTTSpec>) {
          j["a"] = s.a;
          j["b"] = s.b;
          j["c"] = s.c;
          j["d"] = s.d;
          j["s"] = s.s;
        } else {
          j["m"] = s.m;
          j["n"] = s.n;
          if constexpr (std::is_same_v<S, LowRankSpec>) {
            j["r"] = s.r;
          } else if constexpr (std::is_same_v<S, BlockDiagSpec>) {
            j["row_blocks"] = blocks_json(s.row_blocks);
            j["col_blocks"] = blocks_json(s.col_blocks);
          } else if constexpr (std::is_same_v<S, MLRSpec>) {
            j["levels"] = json::array();
            for (const auto& lv : s.levels) {
              j["levels"].push_back(
                  {{"rank", lv.rank}, {"row_blocks", lv.row_blocks}, {"col_blocks", lv.col_blocks}});
            }
          } else if constexpr (std::is_same_v<S, MLBTCSpec>) {
            j["levels"] = json::array();
            for (const auto& lv : s.levels) {
              j["levels"].push_back({{"alpha", lv.alpha},
                                     {"left_rank", lv.left_rank},
                                     {"right_rank", lv.right_rank},
                                     {"left_blocks", lv.left_blocks},
                                     {"right_blocks", lv.right_blocks}});
            }
            if (s.left_perm.size() != 0) j["left_perm"] = s.left_perm.forward();
            if (s.right_perm.size() != 0) j["right_perm"] = s.right_perm.forward();
          }
        }
      },
      spec);
  return j;
}

StructuredSpec spec_from_json(const json& j, const std::string& path) {
  if (!j.is_object() || !j.contains("family") || !j["family"].is_string()) {
    throw ValidationError(path + ".family: expected a family name string");
  }
  const auto family = j["family"].get<std::string>();
  StructuredSpec spec;
  if (family == "btt") {
    json_reject_unknown(j, {"family", "a", "b", "c", "d", "s"}, path);
    spec = BTTSpec{json_positive_int(j, "a", path), json_positive_int(j, "b", path), json_positive_int(j, "c", path),
                   json_positive_int(j, "d", path), json_positive_int(j, "s", path)};
  } else if (family == "dense") {
    json_reject_unknown(j, {"family", "m", "n"}, path);
    spec = DenseSpec{json_positive_int(j, "m", path), json_positive_int(j, "n", path)};
  } else if (family == "low_rank") {
    json_reject_unknown(j, {"family", "m", "n", "r"}, path);
    spec = LowRankSpec{json_positive_int(j, "m", path), json_positive_int(j, "n", path), json_positive_int(j, "r", path)};
  } else if (family == "block_diag") {
    json_reject_unknown(j, {"family", "m", "n", "blocks", "row_blocks", "col_blocks"}, path);
    const auto m = json_positive_int(j, "m", path);
    const auto n = json_positive_int(j, "n", path);
    if (j.contains("blocks")) {
      spec = BlockDiagSpec::equal(m, n, json_positive_int(j, "blocks", path));
    } else {
      spec = BlockDiagSpec{m, n, int_list(j, "row_blocks", path), int_list(j, "col_blocks", path)};
    }
  } else if (family == "mlr") {
    json_reject_unknown(j, {"family", "m", "n", "ranks", "levels"}, path);
    const auto m = json_positive_int(j, "m", path);
    const auto n = json_positive_int(j, "n", path);
    if (j.contains("ranks") == j.contains("levels")) {
      throw ValidationError(path + ": mlr needs exactly one of \"ranks\" or \"levels\"");
    }
    if (j.contains("ranks")) {
      spec = MLRSpec::equal_blocks(m, n, rank_list(j, path));
    } else {
      if (!j["levels"].is_array()) throw ValidationError(path + ".levels: expected an array");
      std::vector<MLRLevel> levels;
      for (std::size_t l = 0; l < j["levels"].size(); ++l) {
        const auto& lj = j["levels"][l];
        const std::string lp = path + ".levels[" + std::to_string(l) + "]";
        json_reject_unknown(lj, {"rank", "row_blocks", "col_blocks"}, lp);
        levels.push_back({json_positive_int(lj, "rank", lp), int_list(lj, "row_blocks", lp), int_list(lj, "col_blocks", lp)});
      }
      spec = MLRSpec{m, n, std::move(levels)};
    }
  } else if (family == "mlbtc") {
    json_reject_unknown(j, {"family", "m", "n", "levels", "left_perm", "right_perm"}, path);
    MLBTCSpec s{json_positive_int(j, "m", path), json_positive_int(j, "n", path), {}, {}, {}};
    if (!j.contains("levels") || !j["levels"].is_array()) throw ValidationError(path + ".levels: expected an array");
    for (std::size_t l = 0; l < j["levels"].size(); ++l) {
      const auto& lj = j["levels"][l];
      const std::string lp = path + ".levels[" + std::to_string(l) + "]";
      json_reject_unknown(lj, {"alpha", "left_rank", "right_rank", "left_blocks", "right_blocks"}, lp);
      double alpha = 1.0;
      if (lj.contains("alpha")) {
        if (!lj["alpha"].is_number()) throw ValidationError(lp + ".alpha: expected a number");
        alpha = lj["alpha"].get<double>();
      }
      s.levels.push_back({alpha, json_positive_int(lj, "left_rank", lp), json_positive_int(lj, "right_rank", lp),
                          int_list(lj, "left_blocks", lp), int_list(lj, "right_blocks", lp)});
    }
    s.left_perm = perm_from_json(j, "left_perm", path);
    s.right_perm = perm_from_json(j, "right_perm", path);
    spec = std::move(s);
  } else {
    throw ValidationError(path + ".family: unknown family '" + family + "'");
  }
  try {
    validate(spec);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return spec;
}

}  // namespace structattn
