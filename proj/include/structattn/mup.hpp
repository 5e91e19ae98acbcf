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

// Maximal update parameterization: per-matrix initialization scale and Adam
// learning-rate multipliers for dense, Bilinear-MLR and Bilinear-BTT weights.
//
// Theta-level rules use constant 1; base_lr absorbs every constant. Hidden
// and output learning rates scale with the width ratio D1/D2, the embedding
// keeps base_lr.

#ifndef STRUCTATTN_MUP_HPP_
#define STRUCTATTN_MUP_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "structattn/rng.hpp"
#include "structattn/tensor.hpp"

namespace structattn {

enum class MupRole { embedding, hidden_dense, output, mlr_factor, btt_left, btt_right };

std::string role_id(MupRole role);
MupRole parse_role(const std::string& id);

struct MupRule {
  MupRole role = MupRole::hidden_dense;
  std::int64_t fan_in = 1, fan_out = 1;
  double base_lr = 1e-3;
  std::int64_t base_width = 1;    // D1
  std::int64_t target_width = 1;  // D2
  std::int64_t blocks = 1;        // p_l, mlr_factor only
  std::int64_t btt_a = 1;         // a, btt_right only

  /// Throws ValidationError on non-positive dims or base_lr.
  void validate() const;
};

/// Reduced fraction num/den with den > 0.
struct Fraction {
  std::int64_t num = 0, den = 1;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Fraction&) const = default;
};

/// sigma^2:
///   embedding, hidden  1/fan_in * min(1, fan_out/fan_in)
///   output             0 (zero-initialized readout)
///   mlr factor         p_l / D2
///   btt left           1/fan_in  (fan_in = c s)
///   btt right          1/fan_in  (fan_in = d)
Fraction init_variance(const MupRule& rule);
double init_std(const MupRule& rule);

/// eta / base_lr:
///   embedding       1
///   hidden, output  D1 / D2
///   mlr factor      D1 / (D2 / p_l)
///   btt left        D1 / (c s)
///   btt right       D1 / a
Fraction lr_multiplier(const MupRule& rule);
double adam_lr(const MupRule& rule);

Tensor zero_init_output(const Shape& shape);
/// N(0, init_std^2) of the given shape; zeros for the output role.
Tensor mup_init(const MupRule& rule, const Shape& shape, Rng& rng);

/// Base learning rates swept for transfer checks.
const std::vector<double>& base_lr_grid();

struct MupEntry {
  std::string path;
  MupRule rule;
};

/// Header: path,role,fan_in,fan_out,sigma,lr
std::string render_mup_csv(const std::vector<MupEntry>& entries);

}  // namespace structattn

#endif  // STRUCTATTN_MUP_HPP_
