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

// Structured matrix families: dense, low rank, block diagonal, multi-level
// low rank (MLR), block tensor train (BTT) and the multi-level block tensor
// contraction (MLBTC) that contains MLR and BTT.
//
// Every family has three evaluation routes:
//   materialize  builds the dense m-by-n matrix from the family's formula;
//   apply        computes M y blockwise without forming M;
//   bilinear     computes x^T M y as a dot product of projected features.
// materialize is the oracle for the other two.

#ifndef STRUCTATTN_STRUCTURED_HPP_
#define STRUCTATTN_STRUCTURED_HPP_

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "structattn/rng.hpp"
#include "structattn/tensor.hpp"

namespace structattn {

/// Bijection on {0..N-1} stored as the forward array: entry k holds the
/// position that element k moves to, so applying it to v gives
/// out[forward[k]] = v[k].
class PermutationMap {
 public:
  PermutationMap() = default;
  explicit PermutationMap(std::vector<std::int64_t> forward);
  static PermutationMap identity(std::int64_t n);

  std::int64_t size() const { return static_cast<std::int64_t>(forward_.size()); }
  const std::vector<std::int64_t>& forward() const { return forward_; }
  PermutationMap inverse() const;
  PermutationMap compose(const PermutationMap& then) const;
  bool is_identity() const;

  /// Gather indices for the last axis: out[j] = v[gather()[j]].
  std::vector<std::int64_t> gather() const { return inverse().forward_; }
  /// Permute the last axis of `v`.
  Tensor apply(const Tensor& v) const;
  /// Dense permutation matrix P with (P v) == apply(v).
  Tensor matrix() const;

  bool operator==(const PermutationMap&) const = default;

 private:
  std::vector<std::int64_t> forward_;
};

/// Reshape a vector of length outer*inner*trailing to (outer, inner,
/// trailing), swap the first two axes, flatten.
PermutationMap perm_reshape_transpose(std::int64_t outer, std::int64_t inner, std::int64_t trailing);

struct DenseSpec {
  std::int64_t m = 1, n = 1;
};

struct LowRankSpec {
  std::int64_t m = 1, n = 1, r = 1;
};

struct BlockDiagSpec {
  std::int64_t m = 1, n = 1;
  std::vector<std::int64_t> row_blocks, col_blocks;

  static BlockDiagSpec equal(std::int64_t m, std::int64_t n, std::int64_t p);
};

struct MLRLevel {
  std::int64_t rank = 1;
  std::vector<std::int64_t> row_blocks;  // m_{l,k}
  std::vector<std::int64_t> col_blocks;  // n_{l,k}

  std::int64_t blocks() const { return static_cast<std::int64_t>(row_blocks.size()); }
};

struct MLRSpec {
  std::int64_t m = 1, n = 1;
  std::vector<MLRLevel> levels;

  /// p_l = 2^(l-1) equal blocks per level; 2^(L-1) must divide m and n.
  static MLRSpec equal_blocks(std::int64_t m, std::int64_t n, const std::vector<std::int64_t>& ranks);
  /// Arbitrary block sizes per level.
  static MLRSpec uneven(std::int64_t m, std::int64_t n, std::vector<MLRLevel> levels);

  std::int64_t mlr_rank() const;
  std::vector<std::int64_t> ranks() const;
};

struct BTTSpec {
  std::int64_t a = 1, b = 1, c = 1, d = 1, s = 1;
  std::int64_t m() const { return a * b; }
  std::int64_t n() const { return c * d; }
  PermutationMap left_perm() const { return perm_reshape_transpose(b, a, 1); }
  PermutationMap right_perm() const { return perm_reshape_transpose(c, b, s); }
};

struct MLBTCLevel {
  double alpha = 1.0;
  std::int64_t left_rank = 1;              // r'_l
  std::int64_t right_rank = 1;             // r_l
  std::vector<std::int64_t> left_blocks;   // m_{l,k'}, p'_l entries
  std::vector<std::int64_t> right_blocks;  // n_{l,k}, p_l entries

  std::int64_t inner() const { return right_rank * static_cast<std::int64_t>(right_blocks.size()); }
  bool active() const { return alpha != 0.0; }
};

/// One shared (P_L, P_R) pair serves every level. P_L has size m. P_R is
/// either the identity (empty map, any inner size) or a map whose size equals
/// r_l * p_l of every active level.
struct MLBTCSpec {
  std::int64_t m = 1, n = 1;
  std::vector<MLBTCLevel> levels;
  PermutationMap left_perm;   // empty means identity
  PermutationMap right_perm;  // empty means identity

  static MLBTCSpec from_mlr(const MLRSpec& mlr);
  /// Single active level with p' = b, r' = cs, p = c, r = bs and the BTT
  /// permutations.
  static MLBTCSpec from_btt(const BTTSpec& btt);
};

using StructuredSpec = std::variant<DenseSpec, LowRankSpec, BlockDiagSpec, MLRSpec, BTTSpec, MLBTCSpec>;

std::string family_name(const StructuredSpec& spec);
std::int64_t rows(const StructuredSpec& spec);
std::int64_t cols(const StructuredSpec& spec);

/// Checks every invariant of the spec; throws ValidationError.
void validate(const StructuredSpec& spec);

/// Factor shapes in canonical order:
///   dense     W
///   low rank  L (m x r), R (n x r)
///   blockdiag W_k (m_k x n_k)
///   MLR       per level: L_{l,1..p} (m_{l,k} x r_l), then R_{l,1..p} (n_{l,k} x r_l)
///   BTT       L_{1..b} (a x cs), then R_{1..c} (d x bs)
///   MLBTC     per level: L_{l,1..p'} (m_{l,k'} x r'_l), then R_{l,1..p} (n_{l,k} x r_l)
std::vector<Shape> factor_shapes(const StructuredSpec& spec);

/// A spec together with its factors. Construction validates both.
class StructuredMatrix {
 public:
  StructuredMatrix(StructuredSpec spec, std::vector<Tensor> factors);

  /// Factors drawn i.i.d. normal with variance 1/fan-in, where fan-in is the
  /// width each factor contracts when computing M y: the row count for
  /// right-side factors and the column count for left-side factors.
  static StructuredMatrix random(StructuredSpec spec, Rng& rng);

  const StructuredSpec& spec() const { return spec_; }
  const std::vector<Tensor>& factors() const { return factors_; }
  std::int64_t rows() const { return structattn::rows(spec_); }
  std::int64_t cols() const { return structattn::cols(spec_); }

 private:
  StructuredSpec spec_;
  std::vector<Tensor> factors_;
};

/// Dense m x n matrix from the family's defining formula.
Tensor materialize(const StructuredMatrix& mat);
/// M y for y of length n, computed blockwise.
Tensor apply(const StructuredMatrix& mat, const Tensor& y);
/// x^T M y without forming M.
double bilinear(const StructuredMatrix& mat, const Tensor& x, const Tensor& y);

std::int64_t param_count(const StructuredSpec& spec);
std::int64_t rank_upper_bound(const StructuredSpec& spec);

inline constexpr double kDefaultRankTol = 1e-8;
/// Singular values above tol * sigma_max.
std::int64_t numeric_rank(const Tensor& dense, double tol = kDefaultRankTol);

/// "32|8|6" -> {32, 8, 6}
std::vector<std::int64_t> parse_rank_allocation(const std::string& text);
std::string format_rank_allocation(const std::vector<std::int64_t>& ranks);

}  // namespace structattn

#endif  // STRUCTATTN_STRUCTURED_HPP_
