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

#ifndef STRUCTATTN_TENSOR_HPP_
#define STRUCTATTN_TENSOR_HPP_

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace structattn {

using Shape = std::vector<std::int64_t>;

/// Raised when operand shapes do not conform. The message names every shape
/// involved.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for malformed configurations and specs.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for non-finite values, divergence and tolerance breaches.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Dense row-major tensor of doubles. Immutable after construction: copies
/// share the underlying buffer, and every operation returns a new tensor.
/// A rank-0 tensor is a scalar holding one value.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::int64_t n);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(data_->size()); }
  /// Extent of `axis`; negative axes count from the back.
  std::int64_t dim(int axis) const;

  std::span<const double> data() const { return *data_; }
  double operator[](std::int64_t flat) const { return (*data_)[flat]; }
  double operator()(std::int64_t i, std::int64_t j) const;
  double at(std::initializer_list<std::int64_t> index) const;
  /// The single value of a one-element tensor.
  double item() const;

  /// Same buffer, new shape.
  Tensor reshape(Shape shape) const;
  std::vector<double> to_vector() const { return *data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

/// Running operation counts for matrix products. `macs` counts one per
/// multiply-accumulate (m*k*n for an m-by-k times k-by-n product); `flops`
/// counts multiplies and adds separately (2*m*k*n - m*n). Elementwise work is
/// not counted. The tally is thread-local.
struct FlopTally {
  std::uint64_t flops = 0;
  std::uint64_t macs = 0;
};

FlopTally& flop_tally();

/// Measures the work done between construction and `elapsed()`.
class FlopScope {
 public:
  FlopScope() : start_(flop_tally()) {}
  FlopTally elapsed() const {
    const FlopTally& now = flop_tally();
    return {now.flops - start_.flops, now.macs - start_.macs};
  }

 private:
  FlopTally start_;
};

/// Arithmetic precision used inside matrix-product kernels. Storage is always
/// 64-bit; in f32 mode operands are rounded to single precision and products
/// accumulate in single precision.
enum class Precision { f64, f32 };

Precision matmul_precision();
void set_matmul_precision(Precision p);

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p) : saved_(matmul_precision()) { set_matmul_precision(p); }
  ~PrecisionScope() { set_matmul_precision(saved_); }
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

}  // namespace structattn

#endif  // STRUCTATTN_TENSOR_HPP_
