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

#include "structattn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

namespace structattn {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(std::string op, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  std::vector<const Tensor*> values;
  values.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (v.tape != this) throw std::logic_error("op '" + n.op + "' mixes tapes");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    values.push_back(&nodes_[v.id].value);
  }
  if (n.requires_grad && !backward) {
    throw std::logic_error("op '" + n.op + "' is not differentiable but an input requires grad");
  }
  n.value = forward(values);
  n.forward = std::move(forward);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

bool Tape::replay_matches() const {
  for (const Node& n : nodes_) {
    if (!n.forward) continue;
    std::vector<const Tensor*> values;
    for (auto id : n.inputs) values.push_back(&nodes_[id].value);
    const Tensor again = n.forward(values);
    if (!again.same_shape(n.value)) return false;
    if (std::memcmp(again.data().data(), n.value.data().data(),
                    static_cast<std::size_t>(again.size()) * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

Tensor Gradients::operator[](Var v) const {
  const auto& g = grads_.at(v.id);
  if (g) return *g;
  return Tensor::zeros(tape_->value(v).shape());
}

Gradients backward(const Tape& tape, Var loss) {
  if (loss.tape != &tape) throw std::logic_error("backward: loss is not on this tape");
  const Tensor& lv = tape.value(loss);
  if (lv.size() != 1) throw DimensionError("backward needs a scalar loss, got " + shape_str(lv.shape()));
  Gradients out;
  out.tape_ = &tape;
  out.grads_.assign(tape.nodes_.size(), std::nullopt);
  out.grads_[loss.id] = Tensor::full(lv.shape(), 1.0);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    const auto& node = tape.nodes_[id];
    if (!out.grads_[id] || !node.backward || !node.requires_grad) continue;
    std::vector<const Tensor*> values;
    for (auto in : node.inputs) values.push_back(&tape.nodes_[in].value);
    auto in_grads = node.backward(*out.grads_[id], values, node.value);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const auto in = node.inputs[k];
      if (!tape.nodes_[in].requires_grad || k >= in_grads.size() || !in_grads[k]) continue;
      auto& slot = out.grads_[in];
      slot = slot ? add(*slot, *in_grads[k]) : std::move(*in_grads[k]);
    }
  }
  return out;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  std::vector<double> base = x.to_vector();
  std::vector<double> grad(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double xi = base[i];
    base[i] = xi + h;
    const double fp = f(Tensor(x.shape(), base));
    base[i] = xi - h;
    const double fm = f(Tensor(x.shape(), base));
    base[i] = xi;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(grad));
}

Tensor finite_diff_grad_scaled(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double base_step) {
  std::vector<double> base = x.to_vector();
  std::vector<double> grad(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double xi = base[i];
    const double h = base_step * std::max(1.0, std::abs(xi));
    base[i] = xi + h;
    const double fp = f(Tensor(x.shape(), base));
    base[i] = xi - h;
    const double fm = f(Tensor(x.shape(), base));
    base[i] = xi;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(grad));
}

double relative_error(const Tensor& analytic, const Tensor& numeric) {
  const double scale = std::max(max_abs(analytic), max_abs(numeric));
  if (scale == 0.0) return 0.0;
  return max_abs_diff(analytic, numeric) / scale;
}

namespace ad {

namespace {

using Grads = std::vector<std::optional<Tensor>>;
using Inputs = std::span<const Tensor* const>;

Tape* tape_of(Var v) { return v.tape; }

}  // namespace

Var matmul(Var a, Var b) {
  return tape_of(a)->record(
      "matmul", {a, b}, [](Inputs in) { return structattn::matmul(*in[0], *in[1]); },
      [](const Tensor& g, Inputs in, const Tensor&) -> Grads {
        const Tensor& x = *in[0];
        const Tensor& w = *in[1];
        Tensor ga = reduce_to_shape(structattn::matmul(g, structattn::transpose(w)), x.shape());
        Tensor gb;
        const std::int64_t batch_x = x.size() / (x.dim(-2) * x.dim(-1));
        const std::int64_t batch_g = g.size() / (g.dim(-2) * g.dim(-1));
        if (w.rank() == 2 && batch_x == batch_g) {
          // Fold batch into rows for the weight gradient.
          const Tensor xf = x.reshape({batch_x * x.dim(-2), x.dim(-1)});
          const Tensor gf = g.reshape({batch_g * g.dim(-2), g.dim(-1)});
          gb = structattn::matmul(structattn::transpose(xf), gf);
        } else {
          gb = reduce_to_shape(structattn::matmul(structattn::transpose(x), g), w.shape());
        }
        return {std::move(ga), std::move(gb)};
      });
}

Var transpose(Var a) {
  return tape_of(a)->record(
      "transpose", {a}, [](Inputs in) { return structattn::transpose(*in[0]); },
      [](const Tensor& g, Inputs, const Tensor&) -> Grads { return {structattn::transpose(g)}; });
}

Var permute(Var a, std::vector<int> axes) {
  std::vector<int> inverse(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] < 0 || axes[i] >= static_cast<int>(axes.size())) throw DimensionError("permute: invalid axes");
    inverse[static_cast<std::size_t>(axes[i])] = static_cast<int>(i);
  }
  return tape_of(a)->record(
      "permute", {a}, [axes](Inputs in) { return structattn::permute(*in[0], axes); },
      [inverse](const Tensor& g, Inputs, const Tensor&) -> Grads {
        return {structattn::permute(g, inverse)};
      });
}

Var reshape(Var a, Shape shape) {
  return tape_of(a)->record(
      "reshape", {a}, [shape](Inputs in) { return in[0]->reshape(shape); },
      [](const Tensor& g, Inputs in, const Tensor&) -> Grads { return {g.reshape(in[0]->shape())}; });
}

Var add(Var a, Var b) {
  return tape_of(a)->record(
      "add", {a, b}, [](Inputs in) { return structattn::add(*in[0], *in[1]); },
      [](const Tensor& g, Inputs in, const Tensor&) -> Grads {
        return {reduce_to_shape(g, in[0]->shape()), reduce_to_shape(g, in[1]->shape())};
      });
}

Var sub(Var a, Var b) {
  return tape_of(a)->record(
      "sub", {a, b}, [](Inputs in) { return structattn::sub(*in[0], *in[1]); },
      [](const Tensor& g, Inputs in, const Tensor&) -> Grads {
        return {reduce_to_shape(g, in[0]->shape()), reduce_to_shape(structattn::scale(g, -1.0), in[1]->shape())};
      });
}

Var mul(Var a, Var b) {
  return tape_of(a)->record(
      "mul", {a, b}, [](Inputs in) { return structattn::mul(*in[0], *in[1]); },
      [](const Tensor& g, Inputs in, const Tensor&) -> Grads {
        return {reduce_to_shape(structattn::mul(g, *in[1]), in[0]->shape()),
                reduce_to_shape(structattn::mul(g, *in[0]), in[1]->shape())};
      });
}

Var scale(Var a, double s) {
  return tape_of(a)->record(
      "scale", {a}, [s](Inputs in) { return structattn::scale(*in[0], s); },
      [s](const Tensor& g, Inputs, const Tensor&) -> Grads { return {structattn::scale(g, s)}; });
}

Var sum(Var a) {
  return tape_of(a)->record(
      "sum", {a}, [](Inputs in) { return structattn::sum(*in[0]); },
      [](const Tensor& g, Inputs in, const Tensor&) -> Grads {
        return {Tensor::full(in[0]->shape(), g.item())};
      });
}

Var mean(Var a) {
  return tape_of(a)->record(
      "mean", {a}, [](Inputs in) { return structattn::mean(*in[0]); },
      [](const Tensor& g, Inputs in, const Tensor&) -> Grads {
        return {Tensor::full(in[0]->shape(), g.item() / static_cast<double>(in[0]->size()))};
      });
}

Var sum_axis(Var a, int axis) {
  return tape_of(a)->record(
      "sum_axis", {a}, [axis](Inputs in) { return structattn::sum_axis(*in[0], axis); },
      [axis](const Tensor& g, Inputs in, const Tensor&) -> Grads {
        const int ax = axis < 0 ? axis + in[0]->rank() : axis;
        return {repeat_axis(g, ax, in[0]->dim(ax))};
      });
}

Var square(Var a) { return mul(a, a); }

Var softmax_rows_masked(Var s, const MaskSpec& mask) {
  return tape_of(s)->record(
      "softmax", {s}, [mask](Inputs in) { return structattn::softmax_rows_masked(*in[0], mask); },
      [](const Tensor& g, Inputs, const Tensor& out) -> Grads { return {softmax_rows_backward(out, g)}; });
}

Var rms_norm(Var x) {
  return tape_of(x)->record(
      "rms_norm", {x}, [](Inputs in) { return structattn::rms_norm(*in[0]); },
      [](const Tensor& g, Inputs in, const Tensor&) -> Grads { return {rms_norm_backward(*in[0], g)}; });
}

Var layer_norm(Var x) {
  return tape_of(x)->record(
      "layer_norm", {x}, [](Inputs in) { return structattn::layer_norm(*in[0]); },
      [](const Tensor& g, Inputs in, const Tensor&) -> Grads { return {layer_norm_backward(*in[0], g)}; });
}

Var gelu(Var x) {
  return tape_of(x)->record(
      "gelu", {x}, [](Inputs in) { return structattn::gelu(*in[0]); },
      [](const Tensor& g, Inputs in, const Tensor&) -> Grads { return {gelu_backward(*in[0], g)}; });
}

Var gather_last(Var a, std::vector<std::int64_t> index) {
  return tape_of(a)->record(
      "gather_last", {a}, [index](Inputs in) { return structattn::gather_last(*in[0], index); },
      [index](const Tensor& g, Inputs in, const Tensor&) -> Grads {
        return {scatter_last(g, index, in[0]->dim(-1))};
      });
}

Var slice_last(Var a, std::int64_t start, std::int64_t length) { return slice_axis(a, -1, start, length); }

Var slice_axis(Var a, int axis, std::int64_t start, std::int64_t length) {
  return tape_of(a)->record(
      "slice", {a}, [=](Inputs in) { return structattn::slice_axis(*in[0], axis, start, length); },
      [=](const Tensor& g, Inputs in, const Tensor&) -> Grads {
        const int ax = axis < 0 ? axis + in[0]->rank() : axis;
        return {pad_axis(g, ax, start, in[0]->dim(ax))};
      });
}

Var concat_last(std::vector<Var> parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  return tape_of(parts[0])->record(
      "concat_last", parts,
      [](Inputs in) {
        std::vector<Tensor> ts;
        for (const Tensor* t : in) ts.push_back(*t);
        return structattn::concat_last(ts);
      },
      [](const Tensor& g, Inputs in, const Tensor&) -> Grads {
        Grads out;
        std::int64_t offset = 0;
        for (const Tensor* t : in) {
          out.emplace_back(structattn::slice_last(g, offset, t->dim(-1)));
          offset += t->dim(-1);
        }
        return out;
      });
}

Var block_diag(Var blocks) {
  return tape_of(blocks)->record(
      "block_diag", {blocks}, [](Inputs in) { return structattn::block_diag(*in[0]); },
      [](const Tensor& g, Inputs in, const Tensor&) -> Grads {
        return {block_diag_extract(g, in[0]->dim(-3))};
      });
}

Var mask_fill(Var s, const MaskSpec& mask) {
  auto fill = [mask](const Tensor& t, double masked_value) {
    const std::int64_t rows = t.dim(-2);
    const std::int64_t cols = t.dim(-1);
    std::vector<double> out = t.to_vector();
    const std::int64_t mats = t.size() / (rows * cols);
    for (std::int64_t b = 0; b < mats; ++b) {
      for (std::int64_t i = 0; i < rows; ++i) {
        for (std::int64_t j = 0; j < cols; ++j) {
          if (!mask.admits(i, j)) out[static_cast<std::size_t>((b * rows + i) * cols + j)] = masked_value;
        }
      }
    }
    return Tensor(t.shape(), std::move(out));
  };
  return tape_of(s)->record(
      "mask_fill", {s},
      [fill](Inputs in) { return fill(*in[0], -std::numeric_limits<double>::infinity()); },
      [fill](const Tensor& g, Inputs, const Tensor&) -> Grads { return {fill(g, 0.0)}; });
}

}  // namespace ad

}  // namespace structattn
