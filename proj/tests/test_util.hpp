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

// Test-only oracles. Nothing here calls into the library's kernels.

#ifndef STRUCTATTN_TESTS_TEST_UTIL_HPP_
#define STRUCTATTN_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <vector>

#include "structattn/tensor.hpp"

namespace structattn::testing {

/// Plain triple loop over 2-D operands.
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const auto m = a.dim(0);
  const auto k = a.dim(1);
  const auto n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t t = 0; t < k; ++t) s += a(i, t) * b(t, j);
      out[static_cast<std::size_t>(i * n + j)] = s;
    }
  }
  return Tensor({m, n}, std::move(out));
}

/// x^T M y by explicit double sum.
inline double naive_bilinear(const Tensor& x, const Tensor& m, const Tensor& y) {
  double s = 0.0;
  for (std::int64_t i = 0; i < m.dim(0); ++i) {
    for (std::int64_t j = 0; j < m.dim(1); ++j) s += x[i] * m(i, j) * y[j];
  }
  return s;
}

/// Row i of a 2-D tensor as a vector.
inline Tensor row(const Tensor& a, std::int64_t i) {
  std::vector<double> out(static_cast<std::size_t>(a.dim(1)));
  for (std::int64_t j = 0; j < a.dim(1); ++j) out[static_cast<std::size_t>(j)] = a(i, j);
  return Tensor::vector(std::move(out));
}

inline Tensor naive_transpose(const Tensor& a) {
  std::vector<double> out(static_cast<std::size_t>(a.size()));
  for (std::int64_t i = 0; i < a.dim(0); ++i) {
    for (std::int64_t j = 0; j < a.dim(1); ++j) out[static_cast<std::size_t>(j * a.dim(0) + i)] = a(i, j);
  }
  return Tensor({a.dim(1), a.dim(0)}, std::move(out));
}

}  // namespace structattn::testing

#endif  // STRUCTATTN_TESTS_TEST_UTIL_HPP_
