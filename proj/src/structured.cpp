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

#include "structattn/structured.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "structattn/ops.hpp"

namespace structattn {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::int64_t total(const std::vector<std::int64_t>& v) { return std::accumulate(v.begin(), v.end(), std::int64_t{0}); }

void require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

void require_positive_blocks(const std::vector<std::int64_t>& blocks, std::int64_t expected_sum,
                             const std::string& where) {
  require(!blocks.empty(), where + ": no blocks");
  for (auto b : blocks) require(b >= 1, where + ": block sizes must be >= 1");
  require(total(blocks) == expected_sum,
          where + ": block sizes sum to " + std::to_string(total(blocks)) + ", expected " +
              std::to_string(expected_sum));
}

std::string level_tag(std::size_t l) { return "level " + std::to_string(l + 1); }

// Row vector [1, n] view of a rank-1 tensor.
Tensor as_row(const Tensor& v) { return v.reshape({1, v.size()}); }
Tensor as_col(const Tensor& v) { return v.reshape({v.size(), 1}); }

double dot(const Tensor& a, const Tensor& b) {
  const auto x = a.data();
  const auto y = b.data();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

// Place `block` at (r0, c0) of the row-major m x n buffer.
void place(std::vector<double>& out, std::int64_t n, std::int64_t r0, std::int64_t c0, const Tensor& block,
           double alpha = 1.0) {
  for (std::int64_t i = 0; i < block.dim(0); ++i) {
    for (std::int64_t j = 0; j < block.dim(1); ++j) {
      out[static_cast<std::size_t>((r0 + i) * n + c0 + j)] += alpha * block(i, j);
    }
  }
}

// Dense block-diagonal matrix from blocks of arbitrary shapes.
Tensor dense_block_diag(const std::vector<Tensor>& blocks) {
  std::int64_t m = 0, n = 0;
  for (const auto& b : blocks) {
    m += b.dim(0);
    n += b.dim(1);
  }
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  std::int64_t r0 = 0, c0 = 0;
  for (const auto& b : blocks) {
    place(out, n, r0, c0, b);
    r0 += b.dim(0);
    c0 += b.dim(1);
  }
  return Tensor({m, n}, std::move(out));
}

std::vector<Tensor> transposed(const std::vector<Tensor>& blocks) {
  std::vector<Tensor> out;
  out.reserve(blocks.size());
  for (const auto& b : blocks) out.push_back(transpose(b));
  return out;
}

// Consumes factors in canonical order.
class FactorCursor {
 public:
  explicit FactorCursor(const std::vector<Tensor>& f) : f_(f) {}
  std::vector<Tensor> take(std::size_t count) {
    std::vector<Tensor> out(f_.begin() + static_cast<std::ptrdiff_t>(pos_),
                            f_.begin() + static_cast<std::ptrdiff_t>(pos_ + count));
    pos_ += count;
    return out;
  }
  const Tensor& next() { return f_[pos_++]; }

 private:
  const std::vector<Tensor>& f_;
  std::size_t pos_ = 0;
};

// Concatenate y_k^T R_k over blocks of y: the right-factor features.
Tensor right_features(const Tensor& y_row, const std::vector<Tensor>& right) {
  std::vector<Tensor> parts;
  parts.reserve(right.size());
  std::int64_t off = 0;
  for (const auto& r : right) {
    parts.push_back(matmul(slice_last(y_row, off, r.dim(0)), r));
    off += r.dim(0);
  }
  return concat_last(parts);
}

// Concatenate L_k z_k over consecutive chunks z_k of z.
Tensor left_apply(const Tensor& z_row, const std::vector<Tensor>& left) {
  std::vector<Tensor> parts;
  parts.reserve(left.size());
  std::int64_t off = 0;
  for (const auto& l : left) {
    const Tensor zk = slice_last(z_row, off, l.dim(1));
    parts.push_back(matmul(l, zk.reshape({l.dim(1), 1})).reshape({1, l.dim(0)}));
    off += l.dim(1);
  }
  return concat_last(parts);
}

Tensor maybe_permute(const PermutationMap& p, const Tensor& v) { return p.size() == 0 ? v : p.apply(v); }

Tensor maybe_permute_transposed(const PermutationMap& p, const Tensor& v) {
  // P^T v gathers with the forward map: (P^T v)[k] = v[forward[k]].
  return p.size() == 0 ? v : gather_last(v, p.forward());
}

void check_vector(const Tensor& v, std::int64_t len, const char* what) {
  if (v.rank() != 1 || v.size() != len) {
    throw DimensionError(std::string(what) + " must have shape [" + std::to_string(len) + "], got " +
                         shape_str(v.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// PermutationMap

PermutationMap::PermutationMap(std::vector<std::int64_t> forward) : forward_(std::move(forward)) {
  std::vector<bool> seen(forward_.size(), false);
  for (auto v : forward_) {
    if (v < 0 || v >= size() || seen[static_cast<std::size_t>(v)]) {
      throw ValidationError("permutation map is not a bijection on 0.." + std::to_string(size() - 1));
    }
    seen[static_cast<std::size_t>(v)] = true;
  }
}

PermutationMap PermutationMap::identity(std::int64_t n) {
  std::vector<std::int64_t> f(static_cast<std::size_t>(n));
  std::iota(f.begin(), f.end(), std::int64_t{0});
  return PermutationMap(std::move(f));
}

PermutationMap PermutationMap::inverse() const {
  std::vector<std::int64_t> inv(forward_.size());
  for (std::size_t k = 0; k < forward_.size(); ++k) inv[static_cast<std::size_t>(forward_[k])] = static_cast<std::int64_t>(k);
  return PermutationMap(std::move(inv));
}

PermutationMap PermutationMap::compose(const PermutationMap& then) const {
  if (then.size() != size()) throw DimensionError("composing permutations of different sizes");
  std::vector<std::int64_t> out(forward_.size());
  for (std::size_t k = 0; k < forward_.size(); ++k) {
    out[k] = then.forward_[static_cast<std::size_t>(forward_[k])];
  }
  return PermutationMap(std::move(out));
}

bool PermutationMap::is_identity() const {
  for (std::size_t k = 0; k < forward_.size(); ++k) {
    if (forward_[k] != static_cast<std::int64_t>(k)) return false;
  }
  return true;
}

Tensor PermutationMap::apply(const Tensor& v) const {
  if (v.rank() == 0 || v.dim(-1) != size()) {
    throw DimensionError("permutation of size " + std::to_string(size()) + " applied to " + shape_str(v.shape()));
  }
  return gather_last(v, gather());
}

Tensor PermutationMap::matrix() const {
  const auto n = size();
  std::vector<double> out(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t k = 0; k < n; ++k) out[static_cast<std::size_t>(forward_[static_cast<std::size_t>(k)] * n + k)] = 1.0;
  return Tensor({n, n}, std::move(out));
}

PermutationMap perm_reshape_transpose(std::int64_t outer, std::int64_t inner, std::int64_t trailing) {
  if (outer < 1 || inner < 1 || trailing < 1) throw ValidationError("perm_reshape_transpose extents must be >= 1");
  // Element (o, i, t) sits at o*inner*trailing + i*trailing + t and moves to
  // (i, o, t) in the swapped layout.
  std::vector<std::int64_t> f(static_cast<std::size_t>(outer * inner * trailing));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      for (std::int64_t t = 0; t < trailing; ++t) {
        f[static_cast<std::size_t>((o * inner + i) * trailing + t)] = (i * outer + o) * trailing + t;
      }
    }
  }
  return PermutationMap(std::move(f));
}

// ---------------------------------------------------------------------------
// Spec constructors

BlockDiagSpec BlockDiagSpec::equal(std::int64_t m, std::int64_t n, std::int64_t p) {
  require(p >= 1 && m % p == 0 && n % p == 0,
          "block-diagonal: " + std::to_string(p) + " blocks do not divide " + std::to_string(m) + "x" +
              std::to_string(n));
  return {m, n, std::vector<std::int64_t>(static_cast<std::size_t>(p), m / p),
          std::vector<std::int64_t>(static_cast<std::size_t>(p), n / p)};
}

MLRSpec MLRSpec::equal_blocks(std::int64_t m, std::int64_t n, const std::vector<std::int64_t>& ranks) {
  require(!ranks.empty(), "MLR needs at least one level");
  require(ranks.size() < 63, "MLR level count too large");
  const std::int64_t finest = std::int64_t{1} << (ranks.size() - 1);
  require(m % finest == 0 && n % finest == 0,
          "MLR with " + std::to_string(ranks.size()) + " levels needs 2^(L-1) = " + std::to_string(finest) +
              " to divide m = " + std::to_string(m) + " and n = " + std::to_string(n));
  MLRSpec spec{m, n, {}};
  for (std::size_t l = 0; l < ranks.size(); ++l) {
    const std::int64_t p = std::int64_t{1} << l;
    spec.levels.push_back({ranks[l], std::vector<std::int64_t>(static_cast<std::size_t>(p), m / p),
                           std::vector<std::int64_t>(static_cast<std::size_t>(p), n / p)});
  }
  validate(spec);
  return spec;
}

MLRSpec MLRSpec::uneven(std::int64_t m, std::int64_t n, std::vector<MLRLevel> levels) {
  MLRSpec spec{m, n, std::move(levels)};
  validate(spec);
  return spec;
}

std::int64_t MLRSpec::mlr_rank() const {
  std::int64_t s = 0;
  for (const auto& lv : levels) s += lv.rank;
  return s;
}

std::vector<std::int64_t> MLRSpec::ranks() const {
  std::vector<std::int64_t> out;
  for (const auto& lv : levels) out.push_back(lv.rank);
  return out;
}

MLBTCSpec MLBTCSpec::from_mlr(const MLRSpec& mlr) {
  MLBTCSpec out{mlr.m, mlr.n, {}, {}, {}};
  for (const auto& lv : mlr.levels) out.levels.push_back({1.0, lv.rank, lv.rank, lv.row_blocks, lv.col_blocks});
  return out;
}

MLBTCSpec MLBTCSpec::from_btt(const BTTSpec& btt) {
  MLBTCLevel level{1.0, btt.c * btt.s, btt.b * btt.s, std::vector<std::int64_t>(static_cast<std::size_t>(btt.b), btt.a),
                   std::vector<std::int64_t>(static_cast<std::size_t>(btt.c), btt.d)};
  return {btt.m(), btt.n(), {level}, btt.left_perm(), btt.right_perm()};
}

// ---------------------------------------------------------------------------
// Spec queries

std::string family_name(const StructuredSpec& spec) {
  return std::visit(Overloaded{[](const DenseSpec&) { return "dense"; }, [](const LowRankSpec&) { return "low_rank"; },
                               [](const BlockDiagSpec&) { return "block_diag"; }, [](const MLRSpec&) { return "mlr"; },
                               [](const BTTSpec&) { return "btt"; }, [](const MLBTCSpec&) { return "mlbtc"; }},
                    spec);
}

std::int64_t rows(const StructuredSpec& spec) {
  return std::visit(Overloaded{[](const BTTSpec& s) { return s.m(); }, [](const auto& s) { return s.m; }}, spec);
}

std::int64_t cols(const StructuredSpec& spec) {
  return std::visit(Overloaded{[](const BTTSpec& s) { return s.n(); }, [](const auto& s) { return s.n; }}, spec);
}

void validate(const StructuredSpec& spec) {
  std::visit(
      Overloaded{
          [](const DenseSpec& s) { require(s.m >= 1 && s.n >= 1, "dense: m, n must be >= 1"); },
          [](const LowRankSpec& s) {
            require(s.m >= 1 && s.n >= 1, "low rank: m, n must be >= 1");
            require(s.r >= 1 && s.r <= std::min(s.m, s.n),
                    "low rank: r = " + std::to_string(s.r) + " outside [1, min(m, n)]");
          },
          [](const BlockDiagSpec& s) {
            require(s.row_blocks.size() == s.col_blocks.size(), "block-diagonal: row/column block counts differ");
            require_positive_blocks(s.row_blocks, s.m, "block-diagonal rows");
            require_positive_blocks(s.col_blocks, s.n, "block-diagonal columns");
          },
          [](const MLRSpec& s) {
            require(s.m >= 1 && s.n >= 1, "MLR: m, n must be >= 1");
            require(!s.levels.empty(), "MLR needs at least one level");
            for (std::size_t l = 0; l < s.levels.size(); ++l) {
              const auto& lv = s.levels[l];
              require(lv.rank >= 1, "MLR " + level_tag(l) + ": rank must be >= 1");
              require(lv.row_blocks.size() == lv.col_blocks.size(),
                      "MLR " + level_tag(l) + ": row/column block counts differ");
              require_positive_blocks(lv.row_blocks, s.m, "MLR " + level_tag(l) + " rows");
              require_positive_blocks(lv.col_blocks, s.n, "MLR " + level_tag(l) + " columns");
            }
          },
          [](const BTTSpec& s) {
            require(s.a >= 1 && s.b >= 1 && s.c >= 1 && s.d >= 1, "BTT: a, b, c, d must be >= 1");
            require(s.s >= 1, "BTT: s must be >= 1");
          },
          [](const MLBTCSpec& s) {
            require(s.m >= 1 && s.n >= 1, "MLBTC: m, n must be >= 1");
            require(!s.levels.empty(), "MLBTC needs at least one level");
            require(s.left_perm.size() == 0 || s.left_perm.size() == s.m,
                    "MLBTC: P_L has size " + std::to_string(s.left_perm.size()) + ", expected m = " +
                        std::to_string(s.m));
            for (std::size_t l = 0; l < s.levels.size(); ++l) {
              const auto& lv = s.levels[l];
              const std::string tag = "MLBTC " + level_tag(l);
              require(std::isfinite(lv.alpha), tag + ": alpha must be finite");
              require(lv.left_rank >= 1 && lv.right_rank >= 1, tag + ": ranks must be >= 1");
              require_positive_blocks(lv.left_blocks, s.m, tag + " left blocks");
              require_positive_blocks(lv.right_blocks, s.n, tag + " right blocks");
              const auto left_inner = lv.left_rank * static_cast<std::int64_t>(lv.left_blocks.size());
              require(left_inner == lv.inner(), tag + ": r' p' = " + std::to_string(left_inner) +
                                                    " differs from r p = " + std::to_string(lv.inner()));
              if (lv.active() && s.right_perm.size() != 0) {
                require(s.right_perm.size() == lv.inner(),
                        tag + ": shared P_R of size " + std::to_string(s.right_perm.size()) +
                            " is inconsistent with r p = " + std::to_string(lv.inner()));
              }
            }
          }},
      spec);
}

std::vector<Shape> factor_shapes(const StructuredSpec& spec) {
  std::vector<Shape> out;
  std::visit(Overloaded{[&](const DenseSpec& s) { out.push_back({s.m, s.n}); },
                        [&](const LowRankSpec& s) {
                          out.push_back({s.m, s.r});
                          out.push_back({s.n, s.r});
                        },
                        [&](const BlockDiagSpec& s) {
                          for (std::size_t k = 0; k < s.row_blocks.size(); ++k) {
                            out.push_back({s.row_blocks[k], s.col_blocks[k]});
                          }
                        },
                        [&](const MLRSpec& s) {
                          for (const auto& lv : s.levels) {
                            for (auto mk : lv.row_blocks) out.push_back({mk, lv.rank});
                            for (auto nk : lv.col_blocks) out.push_back({nk, lv.rank});
                          }
                        },
                        [&](const BTTSpec& s) {
                          for (std::int64_t k = 0; k < s.b; ++k) out.push_back({s.a, s.c * s.s});
                          for (std::int64_t k = 0; k < s.c; ++k) out.push_back({s.d, s.b * s.s});
                        },
                        [&](const MLBTCSpec& s) {
                          for (const auto& lv : s.levels) {
                            for (auto mk : lv.left_blocks) out.push_back({mk, lv.left_rank});
                            for (auto nk : lv.right_blocks) out.push_back({nk, lv.right_rank});
                          }
                        }},
             spec);
  return out;
}

namespace {

// Which factors sit on the left (fan-in = columns) for random init.
std::vector<bool> left_side_mask(const StructuredSpec& spec) {
  std::vector<bool> out;
  std::visit(Overloaded{[&](const DenseSpec&) { out.push_back(false); },
                        [&](const LowRankSpec&) { out = {true, false}; },
                        [&](const BlockDiagSpec& s) { out.assign(s.row_blocks.size(), false); },
                        [&](const MLRSpec& s) {
                          for (const auto& lv : s.levels) {
                            out.insert(out.end(), lv.row_blocks.size(), true);
                            out.insert(out.end(), lv.col_blocks.size(), false);
                          }
                        },
                        [&](const BTTSpec& s) {
                          out.insert(out.end(), static_cast<std::size_t>(s.b), true);
                          out.insert(out.end(), static_cast<std::size_t>(s.c), false);
                        },
                        [&](const MLBTCSpec& s) {
                          for (const auto& lv : s.levels) {
                            out.insert(out.end(), lv.left_blocks.size(), true);
                            out.insert(out.end(), lv.right_blocks.size(), false);
                          }
                        }},
             spec);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// StructuredMatrix

StructuredMatrix::StructuredMatrix(StructuredSpec spec, std::vector<Tensor> factors)
    : spec_(std::move(spec)), factors_(std::move(factors)) {
  validate(spec_);
  const auto shapes = factor_shapes(spec_);
  if (shapes.size() != factors_.size()) {
    throw DimensionError(family_name(spec_) + ": expected " + std::to_string(shapes.size()) + " factors, got " +
                         std::to_string(factors_.size()));
  }
  // Name the offending factor by level and block so errors point at the spec.
  auto describe = [&](std::size_t idx) -> std::string {
    if (const auto* mlr = std::get_if<MLRSpec>(&spec_)) {
      std::size_t pos = 0;
      for (std::size_t l = 0; l < mlr->levels.size(); ++l) {
        const auto p = mlr->levels[l].row_blocks.size();
        if (idx < pos + 2 * p) {
          const auto k = idx - pos;
          return (k < p ? "L" : "R") + std::string("[level ") + std::to_string(l + 1) + ", block " +
                 std::to_string((k % p) + 1) + "]";
        }
        pos += 2 * p;
      }
    }
    if (const auto* ml = std::get_if<MLBTCSpec>(&spec_)) {
      std::size_t pos = 0;
      for (std::size_t l = 0; l < ml->levels.size(); ++l) {
        const auto pl = ml->levels[l].left_blocks.size();
        const auto pr = ml->levels[l].right_blocks.size();
        if (idx < pos + pl + pr) {
          const auto k = idx - pos;
          return k < pl ? "L[level " + std::to_string(l + 1) + ", block " + std::to_string(k + 1) + "]"
                        : "R[level " + std::to_string(l + 1) + ", block " + std::to_string(k - pl + 1) + "]";
        }
        pos += pl + pr;
      }
    }
    if (const auto* btt = std::get_if<BTTSpec>(&spec_)) {
      const auto b = static_cast<std::size_t>(btt->b);
      return idx < b ? "L[block " + std::to_string(idx + 1) + "]" : "R[block " + std::to_string(idx - b + 1) + "]";
    }
    return "factor " + std::to_string(idx);
  };
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (factors_[i].shape() != shapes[i]) {
      throw DimensionError(family_name(spec_) + " " + describe(i) + ": expected shape " + shape_str(shapes[i]) +
                           ", got " + shape_str(factors_[i].shape()));
    }
  }
}

StructuredMatrix StructuredMatrix::random(StructuredSpec spec, Rng& rng) {
  validate(spec);
  const auto shapes = factor_shapes(spec);
  const auto left = left_side_mask(spec);
  std::vector<Tensor> factors;
  factors.reserve(shapes.size());
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const double fan_in = static_cast<double>(left[i] ? shapes[i][1] : shapes[i][0]);
    factors.push_back(rng.normal_tensor(shapes[i], 1.0 / std::sqrt(fan_in)));
  }
  return StructuredMatrix(std::move(spec), std::move(factors));
}

// ---------------------------------------------------------------------------
// Evaluation

Tensor materialize(const StructuredMatrix& mat) {
  FactorCursor cur(mat.factors());
  const auto m = mat.rows();
  const auto n = mat.cols();
  return std::visit(
      Overloaded{
          [&](const DenseSpec&) { return cur.next(); },
          [&](const LowRankSpec&) {
            const Tensor& l = cur.next();
            const Tensor& r = cur.next();
            return matmul(l, transpose(r));
          },
          [&](const BlockDiagSpec& s) { return dense_block_diag(cur.take(s.row_blocks.size())); },
          [&](const MLRSpec& s) {
            std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
            for (const auto& lv : s.levels) {
              const auto ls = cur.take(lv.row_blocks.size());
              const auto rs = cur.take(lv.col_blocks.size());
              std::int64_t r0 = 0, c0 = 0;
              for (std::size_t k = 0; k < ls.size(); ++k) {
                place(out, n, r0, c0, matmul(ls[k], transpose(rs[k])));
                r0 += lv.row_blocks[k];
                c0 += lv.col_blocks[k];
              }
            }
            return Tensor({m, n}, std::move(out));
          },
          [&](const BTTSpec& s) {
            const Tensor bl = dense_block_diag(cur.take(static_cast<std::size_t>(s.b)));
            const Tensor brt = dense_block_diag(transposed(cur.take(static_cast<std::size_t>(s.c))));
            return matmul(s.left_perm().matrix(), matmul(bl, matmul(s.right_perm().matrix(), brt)));
          },
          [&](const MLBTCSpec& s) {
            Tensor acc = Tensor::zeros({m, n});
            for (const auto& lv : s.levels) {
              const Tensor bl = dense_block_diag(cur.take(lv.left_blocks.size()));
              const Tensor brt = dense_block_diag(transposed(cur.take(lv.right_blocks.size())));
              if (!lv.active()) continue;
              const Tensor pr = s.right_perm.size() == 0 ? Tensor::identity(lv.inner()) : s.right_perm.matrix();
              acc = add(acc, scale(matmul(bl, matmul(pr, brt)), lv.alpha));
            }
            return s.left_perm.size() == 0 ? acc : matmul(s.left_perm.matrix(), acc);
          }},
      mat.spec());
}

Tensor apply(const StructuredMatrix& mat, const Tensor& y) {
  check_vector(y, mat.cols(), "apply: input");
  FactorCursor cur(mat.factors());
  const Tensor yr = as_row(y);
  const Tensor out = std::visit(
      Overloaded{
          [&](const DenseSpec&) { return matmul(cur.next(), as_col(y)); },
          [&](const LowRankSpec&) {
            const Tensor& l = cur.next();
            const Tensor& r = cur.next();
            return matmul(l, as_col(matmul(yr, r)));
          },
          [&](const BlockDiagSpec& s) {
            std::vector<Tensor> parts;
            std::int64_t off = 0;
            for (std::size_t k = 0; k < s.row_blocks.size(); ++k) {
              parts.push_back(as_row(matmul(cur.next(), as_col(slice_last(y, off, s.col_blocks[k])))));
              off += s.col_blocks[k];
            }
            return concat_last(parts);
          },
          [&](const MLRSpec& s) {
            Tensor acc = Tensor::zeros({1, mat.rows()});
            for (const auto& lv : s.levels) {
              const auto ls = cur.take(lv.row_blocks.size());
              const auto rs = cur.take(lv.col_blocks.size());
              // Level l is block-diagonal: block k maps y_k through R_k^T then L_k.
              std::vector<Tensor> parts;
              std::int64_t off = 0;
              for (std::size_t k = 0; k < ls.size(); ++k) {
                const Tensor v = matmul(slice_last(yr, off, lv.col_blocks[k]), rs[k]);
                parts.push_back(as_row(matmul(ls[k], as_col(v))));
                off += lv.col_blocks[k];
              }
              acc = add(acc, concat_last(parts));
            }
            return acc;
          },
          [&](const BTTSpec& s) {
            const auto ls = cur.take(static_cast<std::size_t>(s.b));
            const auto rs = cur.take(static_cast<std::size_t>(s.c));
            const Tensor v = s.right_perm().apply(right_features(yr, rs));
            return s.left_perm().apply(left_apply(v, ls));
          },
          [&](const MLBTCSpec& s) {
            Tensor acc = Tensor::zeros({1, mat.rows()});
            for (const auto& lv : s.levels) {
              const auto ls = cur.take(lv.left_blocks.size());
              const auto rs = cur.take(lv.right_blocks.size());
              if (!lv.active()) continue;
              const Tensor v = maybe_permute(s.right_perm, right_features(yr, rs));
              acc = add(acc, scale(left_apply(v, ls), lv.alpha));
            }
            return maybe_permute(s.left_perm, acc);
          }},
      mat.spec());
  return out.reshape({mat.rows()});
}

double bilinear(const StructuredMatrix& mat, const Tensor& x, const Tensor& y) {
  check_vector(x, mat.rows(), "bilinear: left input");
  check_vector(y, mat.cols(), "bilinear: right input");
  FactorCursor cur(mat.factors());
  const Tensor xr = as_row(x);
  const Tensor yr = as_row(y);
  return std::visit(
      Overloaded{
          [&](const DenseSpec&) { return dot(x, apply(mat, y)); },
          [&](const LowRankSpec&) {
            const Tensor& l = cur.next();
            const Tensor& r = cur.next();
            return dot(matmul(xr, l), matmul(yr, r));
          },
          [&](const BlockDiagSpec&) { return dot(x, apply(mat, y)); },
          [&](const MLRSpec& s) {
            double total = 0.0;
            for (const auto& lv : s.levels) {
              const auto ls = cur.take(lv.row_blocks.size());
              const auto rs = cur.take(lv.col_blocks.size());
              total += dot(right_features(xr, ls), right_features(yr, rs));
            }
            return total;
          },
          [&](const BTTSpec& s) {
            const auto ls = cur.take(static_cast<std::size_t>(s.b));
            const auto rs = cur.take(static_cast<std::size_t>(s.c));
            const Tensor u = right_features(maybe_permute_transposed(s.left_perm(), xr), ls);
            const Tensor v = s.right_perm().apply(right_features(yr, rs));
            return dot(u, v);
          },
          [&](const MLBTCSpec& s) {
            const Tensor xp = maybe_permute_transposed(s.left_perm, xr);
            double total = 0.0;
            for (const auto& lv : s.levels) {
              const auto ls = cur.take(lv.left_blocks.size());
              const auto rs = cur.take(lv.right_blocks.size());
              if (!lv.active()) continue;
              const Tensor v = maybe_permute(s.right_perm, right_features(yr, rs));
              total += lv.alpha * dot(right_features(xp, ls), v);
            }
            return total;
          }},
      mat.spec());
}

// ---------------------------------------------------------------------------
// Counting and rank

std::int64_t param_count(const StructuredSpec& spec) {
  validate(spec);
  std::int64_t total = 0;
  for (const auto& s : factor_shapes(spec)) total += shape_numel(s);
  return total;
}

std::int64_t rank_upper_bound(const StructuredSpec& spec) {
  validate(spec);
  const std::int64_t cap = std::min(rows(spec), cols(spec));
  const std::int64_t family = std::visit(
      Overloaded{[&](const DenseSpec&) { return cap; }, [](const LowRankSpec& s) { return s.r; },
                 [](const BlockDiagSpec& s) {
                   std::int64_t t = 0;
                   for (std::size_t k = 0; k < s.row_blocks.size(); ++k) t += std::min(s.row_blocks[k], s.col_blocks[k]);
                   return t;
                 },
                 [](const MLRSpec& s) {
                   std::int64_t t = 0;
                   for (const auto& lv : s.levels) t += lv.rank * lv.blocks();
                   return t;
                 },
                 [](const BTTSpec& s) { return s.b * s.c * s.s; },
                 [](const MLBTCSpec& s) {
                   std::int64_t t = 0;
                   for (const auto& lv : s.levels) {
                     if (lv.active()) t += lv.inner();
                   }
                   return t;
                 }},
      spec);
  return std::min(cap, family);
}

std::int64_t numeric_rank(const Tensor& dense, double tol) {
  if (dense.rank() != 2) throw DimensionError("numeric_rank expects a matrix, got " + shape_str(dense.shape()));
  if (!(tol > 0.0)) throw ValidationError("numeric_rank tolerance must be > 0");
  if (!all_finite(dense)) throw NumericalError("numeric_rank: matrix has non-finite entries");

  // One-sided Jacobi on the columns of A (or A^T when wide): rotate column
  // pairs until all are mutually orthogonal; the column norms are then the
  // singular values.
  const bool wide = dense.dim(0) < dense.dim(1);
  const Tensor a = wide ? transpose(dense) : dense;
  const auto m = a.dim(0);
  const auto n = a.dim(1);
  std::vector<std::vector<double>> col(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(m)));
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) col[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = a(i, j);
  }
  constexpr double kOrthTol = 1e-15;
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::int64_t p = 0; p < n - 1; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        auto& u = col[static_cast<std::size_t>(p)];
        auto& v = col[static_cast<std::size_t>(q)];
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::int64_t i = 0; i < m; ++i) {
          alpha += u[static_cast<std::size_t>(i)] * u[static_cast<std::size_t>(i)];
          beta += v[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
          gamma += u[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(i)];
        }
        if (std::abs(gamma) <= kOrthTol * std::sqrt(alpha * beta) || gamma == 0.0) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::int64_t i = 0; i < m; ++i) {
          const double ui = u[static_cast<std::size_t>(i)];
          const double vi = v[static_cast<std::size_t>(i)];
          u[static_cast<std::size_t>(i)] = c * ui - s * vi;
          v[static_cast<std::size_t>(i)] = s * ui + c * vi;
        }
      }
    }
    if (!rotated) break;
  }
  std::vector<double> sigma;
  for (const auto& c : col) {
    double ss = 0.0;
    for (double v : c) ss += v * v;
    sigma.push_back(std::sqrt(ss));
  }
  const double smax = sigma.empty() ? 0.0 : *std::max_element(sigma.begin(), sigma.end());
  if (smax == 0.0) return 0;
  return std::count_if(sigma.begin(), sigma.end(), [&](double s) { return s > tol * smax; });
}

std::vector<std::int64_t> parse_rank_allocation(const std::string& text) {
  std::vector<std::int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '|')) {
    std::size_t used = 0;
    std::int64_t v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || v < 1) {
      throw ValidationError("rank allocation '" + text + "': entry '" + item + "' is not a positive integer");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError("rank allocation is empty");
  return out;
}

std::string format_rank_allocation(const std::vector<std::int64_t>& ranks) {
  std::string out;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (i) out += '|';
    out += std::to_string(ranks[i]);
  }
  return out;
}

}  // namespace structattn
