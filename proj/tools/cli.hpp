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
// Command-line entry points. Exit codes: 0 success, 1 invalid input or
// configuration, 2 numerical failure (divergence or a tolerance breach).

#ifndef STRUCTATTN_TOOLS_CLI_HPP_
#define STRUCTATTN_TOOLS_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace structattn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitNumerical = 2;

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace structattn::cli

#endif  // STRUCTATTN_TOOLS_CLI_HPP_
