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

#ifndef STRUCTATTN_AUTODIFF_HPP_
#define STRUCTATTN_AUTODIFF_HPP_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "structattn/ops.hpp"
#include "structattn/tensor.hpp"

namespace structattn {

class Tape;
class Gradients;
struct Var;
Gradients backward(const Tape& tape, Var loss);

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::int64_t dim(int axis) const { return value().dim(axis); }
};

using ForwardFn = std::function<Tensor(std::span<const Tensor* const>)>;
/// Given the output gradient, the input values and the output value, return
/// one gradient per input (nullopt where the input needs none).
using BackwardFn = std::function<std::vector<std::optional<Tensor>>(
    const Tensor& grad_out, std::span<const Tensor* const> inputs, const Tensor& out)>;

/// Linear record of primitive operations in topological order. One tape per
/// logical execution stream; tapes are not thread-safe.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Evaluate `forward` on the inputs and record it. A null `backward`
  /// marks the op non-differentiable; recording it over an input that
  /// requires grad throws.
  Var record(std::string op, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::uint32_t id) const { return nodes_[id].op; }

  /// Recompute every non-leaf node from its recorded inputs; true when each
  /// recomputed value is bit-identical to the recorded one.
  bool replay_matches() const;

 private:
  friend Gradients backward(const Tape& tape, Var loss);
  struct Node {
    std::string op;
    std::vector<std::uint32_t> inputs;
    Tensor value;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

/// Gradients of a scalar loss with respect to every node on a tape.
class Gradients {
 public:
  /// d loss / d v. Nodes the loss does not depend on get zeros.
  Tensor operator[](Var v) const;
  bool has(Var v) const { return grads_.at(v.id).has_value(); }

 private:
  friend Gradients backward(const Tape& tape, Var loss);
  const Tape* tape_ = nullptr;
  std::vector<std::optional<Tensor>> grads_;
};

/// Reverse sweep from `loss`, which must hold exactly one value.
Gradients backward(const Tape& tape, Var loss);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);
/// Same, with per-coordinate step h_i = base * max(1, |x_i|).
Tensor finite_diff_grad_scaled(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double base = 1e-5);

/// max_i |a - b| / max(max_i |a|, max_i |b|), 0 when both are zero.
double relative_error(const Tensor& analytic, const Tensor& numeric);

namespace ad {

Var matmul(Var a, Var b);
Var transpose(Var a);
Var permute(Var a, std::vector<int> axes);
Var reshape(Var a, Shape shape);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var sum(Var a);
Var mean(Var a);
Var sum_axis(Var a, int axis);
Var square(Var a);
Var softmax_rows_masked(Var s, const MaskSpec& mask);
Var rms_norm(Var x);
Var layer_norm(Var x);
Var gelu(Var x);
Var gather_last(Var a, std::vector<std::int64_t> index);
Var slice_last(Var a, std::int64_t start, std::int64_t length);
Var slice_axis(Var a, int axis, std::int64_t start, std::int64_t length);
Var concat_last(std::vector<Var> parts);
Var block_diag(Var blocks);
/// Replace admitted-pattern violations with -inf; not differentiable through
/// the masked entries (they carry zero gradient).
Var mask_fill(Var s, const MaskSpec& mask);

}  // namespace ad

}  // namespace structattn

#endif  // STRUCTATTN_AUTODIFF_HPP_
