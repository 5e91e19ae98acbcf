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
// Self-contained numerical checks that the CLI can run on demand: structured
// apply and bilinear against dense materialization, block-built MLR
// attention scores against their entrywise definition, and the reduction
// identities between score kinds and between MLBTC and its special cases.

#ifndef STRUCTATTN_ORACLE_SUITE_HPP_
#define STRUCTATTN_ORACLE_SUITE_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace structattn {

struct OracleCheck {
  std::string name;
  std::int64_t cases = 0;
  double max_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_error <= tolerance; }
};

/// `configs` random configurations per structured family.
std::vector<OracleCheck> run_oracle_suite(std::uint64_t seed, std::int64_t configs = 50);

/// Columns: check,cases,max_error,tolerance,status
std::string render_oracle_csv(const std::vector<OracleCheck>& checks);

}  // namespace structattn

#endif  // STRUCTATTN_ORACLE_SUITE_HPP_
