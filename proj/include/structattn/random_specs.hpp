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

// Random structured specs for property checks. Shapes stay small (m, n <= 16)
// so dense oracles are cheap.

#ifndef STRUCTATTN_RANDOM_SPECS_HPP_
#define STRUCTATTN_RANDOM_SPECS_HPP_

#include <algorithm>
#include <numeric>
#include <vector>

#include "structattn/rng.hpp"
#include "structattn/structured.hpp"

namespace structattn {

/// Split `total` into `parts` positive sizes.
inline std::vector<std::int64_t> random_split(Rng& rng, std::int64_t total, std::int64_t parts) {
  std::vector<std::int64_t> cuts;
  for (std::int64_t i = 1; i < total; ++i) cuts.push_back(i);
  // Partial shuffle picks parts - 1 distinct cut points.
  for (std::int64_t i = 0; i < parts - 1; ++i) {
    const auto j = rng.uniform_int(i, static_cast<std::int64_t>(cuts.size()) - 1);
    std::swap(cuts[static_cast<std::size_t>(i)], cuts[static_cast<std::size_t>(j)]);
  }
  cuts.resize(static_cast<std::size_t>(parts - 1));
  std::sort(cuts.begin(), cuts.end());
  std::vector<std::int64_t> out;
  std::int64_t prev = 0;
  for (auto c : cuts) {
    out.push_back(c - prev);
    prev = c;
  }
  out.push_back(total - prev);
  return out;
}

inline PermutationMap random_perm(Rng& rng, std::int64_t n) {
  std::vector<std::int64_t> f(static_cast<std::size_t>(n));
  std::iota(f.begin(), f.end(), std::int64_t{0});
  for (std::int64_t i = n - 1; i > 0; --i) std::swap(f[static_cast<std::size_t>(i)], f[static_cast<std::size_t>(rng.uniform_int(0, i))]);
  return PermutationMap(std::move(f));
}

inline LowRankSpec random_low_rank(Rng& rng) {
  const auto m = rng.uniform_int(1, 16);
  const auto n = rng.uniform_int(1, 16);
  return {m, n, rng.uniform_int(1, std::min(m, n))};
}

/// Equal blocks when `even`, otherwise random uneven blocks per level.
inline MLRSpec random_mlr(Rng& rng, bool even) {
  if (even) {
    const auto levels = rng.uniform_int(1, 3);
    const std::int64_t finest = std::int64_t{1} << (levels - 1);
    const auto m = finest * rng.uniform_int(1, 16 / finest);
    const auto n = finest * rng.uniform_int(1, 16 / finest);
    std::vector<std::int64_t> ranks;
    for (std::int64_t l = 0; l < levels; ++l) ranks.push_back(rng.uniform_int(1, 4));
    return MLRSpec::equal_blocks(m, n, ranks);
  }
  const auto m = rng.uniform_int(1, 16);
  const auto n = rng.uniform_int(1, 16);
  std::vector<MLRLevel> levels;
  const auto count = rng.uniform_int(1, 3);
  for (std::int64_t l = 0; l < count; ++l) {
    const auto p = rng.uniform_int(1, std::min(m, n));
    levels.push_back({rng.uniform_int(1, 4), random_split(rng, m, p), random_split(rng, n, p)});
  }
  return MLRSpec::uneven(m, n, std::move(levels));
}

inline BTTSpec random_btt(Rng& rng) {
  for (;;) {
    BTTSpec s{rng.uniform_int(1, 4), rng.uniform_int(1, 4), rng.uniform_int(1, 4), rng.uniform_int(1, 4),
              rng.uniform_int(1, 3)};
    if (s.m() <= 16 && s.n() <= 16) return s;
  }
}

/// Levels share one inner size r p so that a random P_R is consistent with
/// every active level; some levels get alpha = 0.
inline MLBTCSpec random_mlbtc(Rng& rng) {
  const auto m = rng.uniform_int(1, 16);
  const auto n = rng.uniform_int(1, 16);
  MLBTCSpec s{m, n, {}, {}, {}};
  const auto p = rng.uniform_int(1, n);
  const auto r = rng.uniform_int(1, 3);
  const auto inner = p * r;
  std::vector<std::int64_t> divisors;
  for (std::int64_t q = 1; q <= std::min(inner, m); ++q) {
    if (inner % q == 0) divisors.push_back(q);
  }
  const auto count = rng.uniform_int(1, 3);
  for (std::int64_t l = 0; l < count; ++l) {
    const auto pl = divisors[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(divisors.size()) - 1))];
    const double alpha = rng.uniform() < 0.25 ? 0.0 : rng.normal();
    s.levels.push_back({alpha, inner / pl, r, random_split(rng, m, pl), random_split(rng, n, p)});
  }
  if (rng.uniform() < 0.7) s.left_perm = random_perm(rng, m);
  if (rng.uniform() < 0.7) s.right_perm = random_perm(rng, inner);
  return s;
}

inline BlockDiagSpec random_block_diag(Rng& rng) {
  const auto m = rng.uniform_int(1, 16);
  const auto n = rng.uniform_int(1, 16);
  const auto p = rng.uniform_int(1, std::min(m, n));
  return {m, n, random_split(rng, m, p), random_split(rng, n, p)};
}

}  // namespace structattn

#endif  // STRUCTATTN_RANDOM_SPECS_HPP_
