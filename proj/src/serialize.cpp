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

#include "structattn/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace structattn {

namespace {

constexpr std::uint64_t kMaxRank = 32;

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  os.write(reinterpret_cast<const char*>(buf), 8);
}

bool get_u64(std::istream& is, std::uint64_t& v) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  if (is.gcount() != 8) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return true;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  put_u64(os, static_cast<std::uint64_t>(t.rank()));
  for (auto e : t.shape()) put_u64(os, static_cast<std::uint64_t>(e));
  for (double v : t.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
}

std::optional<Tensor> read_tensor(std::istream& is) {
  std::uint64_t rank = 0;
  if (!get_u64(is, rank)) {
    if (is.gcount() == 0) return std::nullopt;
    throw std::runtime_error("truncated tensor header");
  }
  if (rank > kMaxRank) throw std::runtime_error("corrupt tensor record: rank " + std::to_string(rank));
  Shape shape;
  for (std::uint64_t i = 0; i < rank; ++i) {
    std::uint64_t e = 0;
    if (!get_u64(is, e)) throw std::runtime_error("truncated tensor extents");
    shape.push_back(static_cast<std::int64_t>(e));
  }
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    if (!get_u64(is, bits)) throw std::runtime_error("truncated tensor data");
    data[i] = std::bit_cast<double>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& t : tensors) write_tensor(os, t);
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<Tensor> out;
  while (auto t = read_tensor(is)) out.push_back(std::move(*t));
  return out;
}

}  // namespace structattn
