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

// JSON form of StructuredSpec. Objects carry a "family" tag:
//
//   {"family": "dense", "m": 4, "n": 4}
//   {"family": "low_rank", "m": 16, "n": 16, "r": 3}
//   {"family": "block_diag", "m": 8, "n": 8, "blocks": 2}
//   {"family": "block_diag", "m": 5, "n": 4, "row_blocks": [2, 3], "col_blocks": [1, 3]}
//   {"family": "mlr", "m": 512, "n": 512, "ranks": "32|8|6|4|4|4|4|2"}
//   {"family": "mlr", "m": 5, "n": 4, "levels": [{"rank": 1, "row_blocks": [5], "col_blocks": [4]}]}
//   {"family": "btt", "a": 2, "b": 2, "c": 2, "d": 2, "s": 1}
//   {"family": "mlbtc", "m": 4, "n": 4, "levels": [...],
//    "left_perm": [0, 2, 1, 3] | {"reshape": [outer, inner, trailing]}, "right_perm": ...}
//
// Unknown keys are rejected; errors carry the JSON path of the offending
// value.

#ifndef STRUCTATTN_STRUCTURED_IO_HPP_
#define STRUCTATTN_STRUCTURED_IO_HPP_

#include <initializer_list>
#include <string>

#include "json.hpp"
#include "structattn/structured.hpp"

namespace structattn {

nlohmann::json spec_to_json(const StructuredSpec& spec);
StructuredSpec spec_from_json(const nlohmann::json& j, const std::string& path = "$");

/// Reads `key` from a JSON object as a positive integer; errors name `path.key`.
std::int64_t json_positive_int(const nlohmann::json& obj, const std::string& key, const std::string& path);
/// Throws ValidationError naming the first key not in `allowed`.
void json_reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                         const std::string& path);

}  // namespace structattn

#endif  // STRUCTATTN_STRUCTURED_IO_HPP_
