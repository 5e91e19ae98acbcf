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

#include "structattn/tensor.hpp"

#include <sstream>

namespace structattn {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor::Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  for (auto e : shape_) {
    if (e < 1) throw DimensionError("tensor extents must be >= 1, got " + shape_str(shape_));
  }
  if (shape_numel(shape_) != static_cast<std::int64_t>(data.size())) {
    throw DimensionError("shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = static_cast<std::int64_t>(values.size());
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> data;
  const auto m = static_cast<std::int64_t>(rows.size());
  std::int64_t n = -1;
  for (const auto& row : rows) {
    if (n >= 0 && static_cast<std::int64_t>(row.size()) != n) {
      throw DimensionError("ragged matrix literal");
    }
    n = static_cast<std::int64_t>(row.size());
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({m, n}, std::move(data));
}

Tensor Tensor::identity(std::int64_t n) {
  std::vector<double> data(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) data[static_cast<std::size_t>(i * n + i)] = 1.0;
  return Tensor({n, n}, std::move(data));
}

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(a)];
}

double Tensor::operator()(std::int64_t i, std::int64_t j) const {
  return (*data_)[static_cast<std::size_t>(i * shape_.back() + j)];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank does not match " + shape_str(shape_));
  }
  std::int64_t flat = 0;
  std::size_t a = 0;
  for (auto i : index) {
    if (i < 0 || i >= shape_[a]) throw DimensionError("index out of range for " + shape_str(shape_));
    flat = flat * shape_[a] + i;
    ++a;
  }
  return (*data_)[static_cast<std::size_t>(flat)];
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != size()) {
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  Tensor out = *this;
  out.shape_ = std::move(shape);
  return out;
}

FlopTally& flop_tally() {
  thread_local FlopTally tally;
  return tally;
}

namespace {
thread_local Precision g_precision = Precision::f64;
}

Precision matmul_precision() { return g_precision; }
void set_matmul_precision(Precision p) { g_precision = p; }

}  // namespace structattn
