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

#include "structattn/mup.hpp"

#include <algorithm>
#include <boost/rational.hpp>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace structattn {
namespace {

using Rational = boost::rational<std::int64_t>;

Fraction to_fraction(const Rational& r) { return {r.numerator(), r.denominator()}; }

}  // namespace

std::string role_id(MupRole role) {
  switch (role) {
    case MupRole::embedding: return "embedding";
    case MupRole::hidden_dense: return "hidden-dense";
    case MupRole::output: return "output";
    case MupRole::mlr_factor: return "mlr-factor";
    case MupRole::btt_left: return "btt-left";
    case MupRole::btt_right: return "btt-right";
  }
  return "?";
}

MupRole parse_role(const std::string& id) {
  for (auto r : {MupRole::embedding, MupRole::hidden_dense, MupRole::output, MupRole::mlr_factor, MupRole::btt_left,
                 MupRole::btt_right}) {
    if (role_id(r) == id) return r;
  }
  throw ValidationError("unknown parameter role '" + id + "'");
}

void MupRule::validate() const {
  const std::string tag = role_id(role) + " rule: ";
  if (fan_in < 1 || fan_out < 1) throw ValidationError(tag + "fan_in and fan_out must be >= 1");
  if (base_width < 1 || target_width < 1) throw ValidationError(tag + "widths must be >= 1");
  if (blocks < 1 || btt_a < 1) throw ValidationError(tag + "block counts must be >= 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ValidationError(tag + "base_lr must be > 0");
  if (role == MupRole::mlr_factor && target_width % blocks != 0) {
    throw ValidationError(tag + "p_l = " + std::to_string(blocks) + " must divide D2 = " +
                          std::to_string(target_width));
  }
}

Fraction init_variance(const MupRule& rule) {
  rule.validate();
  switch (rule.role) {
    case MupRole::embedding:
    case MupRole::hidden_dense:
      return to_fraction(Rational(1, rule.fan_in) * std::min(Rational(1), Rational(rule.fan_out, rule.fan_in)));
    case MupRole::output:
      return {0, 1};
    case MupRole::mlr_factor:
      return to_fraction(Rational(rule.blocks, rule.target_width));
    case MupRole::btt_left:
    case MupRole::btt_right:
      return to_fraction(Rational(1, rule.fan_in));
  }
  return {0, 1};
}

double init_std(const MupRule& rule) { return std::sqrt(init_variance(rule).value()); }

Fraction lr_multiplier(const MupRule& rule) {
  rule.validate();
  switch (rule.role) {
    case MupRole::embedding:
      return {1, 1};
    case MupRole::hidden_dense:
    case MupRole::output:
      return to_fraction(Rational(rule.base_width, rule.target_width));
    case MupRole::mlr_factor:
      return to_fraction(Rational(rule.base_width) / Rational(rule.target_width, rule.blocks));
    case MupRole::btt_left:
      return to_fraction(Rational(rule.base_width, rule.fan_in));
    case MupRole::btt_right:
      return to_fraction(Rational(rule.base_width, rule.btt_a));
  }
  return {1, 1};
}

double adam_lr(const MupRule& rule) {
  const Fraction m = lr_multiplier(rule);
  return rule.base_lr * static_cast<double>(m.num) / static_cast<double>(m.den);
}

Tensor zero_init_output(const Shape& shape) { return Tensor::zeros(shape); }

Tensor mup_init(const MupRule& rule, const Shape& shape, Rng& rng) {
  if (rule.role == MupRole::output) return zero_init_output(shape);
  return rng.normal_tensor(shape, init_std(rule));
}

const std::vector<double>& base_lr_grid() {
  static const std::vector<double> grid{1e-3, 5e-4, 1e-4, 5e-5, 1e-5};
  return grid;
}

std::string render_mup_csv(const std::vector<MupEntry>& entries) {
  std::ostringstream os;
  os << "path,role,fan_in,fan_out,sigma,lr\n" << std::setprecision(17);
  for (const auto& e : entries) {
    os << e.path << ',' << role_id(e.rule.role) << ',' << e.rule.fan_in << ',' << e.rule.fan_out << ','
       << init_std(e.rule) << ',' << adam_lr(e.rule) << '\n';
  }
  return os.str();
}

}  // namespace structattn
