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

// Flat binary tensor layout: u64 rank, u64 extents..., f64 values in
// row-major order, everything little-endian. Files hold a concatenation of
// such records.

#ifndef STRUCTATTN_SERIALIZE_HPP_
#define STRUCTATTN_SERIALIZE_HPP_

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "structattn/tensor.hpp"

namespace structattn {

void write_tensor(std::ostream& os, const Tensor& t);
/// Reads one record; nullopt at a clean end of stream. Truncated or corrupt
/// records throw std::runtime_error.
std::optional<Tensor> read_tensor(std::istream& is);

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> load_tensors(const std::filesystem::path& path);

}  // namespace structattn

#endif  // STRUCTATTN_SERIALIZE_HPP_
