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
// Plot data from training runs. Run directories are named
// "<config hash>-seed<seed>"; runs that share a hash form one series and
// the median column aggregates y over that series' seeds at each row.

#ifndef STRUCTATTN_TOOLS_PLOTDATA_HPP_
#define STRUCTATTN_TOOLS_PLOTDATA_HPP_

#include <filesystem>
#include <string>

namespace structattn::cli {

/// CSV with columns x,y,series,seed,median for every metrics.csv under
/// `root`. x is step or flops_cumulative, y is loss or eval_error. Throws
/// ValidationError when nothing is found or a column is missing.
std::string export_plotdata(const std::filesystem::path& root, const std::string& x, const std::string& y);

}  // namespace structattn::cli

#endif  // STRUCTATTN_TOOLS_PLOTDATA_HPP_
