// Copyright 2026 The dsprop Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsprop/tensor.hpp"

namespace dsprop {

// A named trainable tensor. The access counter is bumped every time the
// parameter is bound into a tape, which lets callers assert that a code path
// never read it.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor value)
      : name_(std::move(name)), value_(std::move(value)), grad_(Tensor::zeros_like(value_)) {}

  const std::string& name() const noexcept { return name_; }
  Tensor& value() noexcept { return value_; }
  const Tensor& value() const noexcept { return value_; }
  Tensor& grad() noexcept { return grad_; }
  const Tensor& grad() const noexcept { return grad_; }
  void zero_grad() { grad_ = Tensor::zeros_like(value_); }

  std::size_t access_count() const noexcept { return accesses_; }
  void note_access() const noexcept { ++accesses_; }
  void reset_access_count() noexcept { accesses_ = 0; }

 private:
  std::string name_;
  Tensor value_;
  Tensor grad_;
  mutable std::size_t accesses_ = 0;
};

class Tape;

// Handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Records a computation graph and runs reverse-mode differentiation over it.
// Nodes are appended in evaluation order, so walking ids backwards is a
// reverse topological order.
class Tape {
 public:
  // Receives the gradient flowing into a node (and the node's own value) and
  // pushes vector-Jacobian products to its parents through Tape::grad_slot.
  using BackwardFn =
      std::function<void(const Tensor& upstream, const Tensor& output, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Differentiable leaf not tied to a parameter; read its gradient via grad().
  Var leaf(Tensor value);
  // Binds a parameter. Repeated binds on the same tape return the same node.
  Var param(Parameter& p);

  // Appends an op node. `fn` may be empty for non-differentiable results.
  Var record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient of the last backward() root with respect to v; zeros if unreached.
  Tensor grad(Var v) const;

  // Mutable gradient accumulator of a parent node, materialized on first use.
  // Returns nullptr when the node does not require a gradient.
  Tensor* grad_slot(Var v);

  // Requires a scalar root. Adds d(root)/d(param) into every bound parameter's
  // grad(); parameters not reached receive nothing (callers zero them first).
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }
  Var node(std::uint32_t id) { return {this, id}; }
  const char* op(Var v) const { return nodes_[v.id].op; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    const char* op = "";
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::uint32_t> bound_;
};

// ---- differentiable ops ----------------------------------------------------

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var row_softmax(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double factor);
// a[N x K] + bias[K] broadcast over rows.
Var add_row_bias(Var a, Var bias);
// Subgradient at exactly 0 takes the negative-slope branch.
Var leaky_relu(Var a, double negative_slope);
Var gather_rows(Var a, std::span<const std::uint32_t> idx);
Var concat_cols(Var a, Var b);
Var sum(Var a);
Var stop_gradient(Var a);

// -(1/B) sum_n m_n sum_c y_nc log softmax(z_n)_c with B = sum_n m_n.
// B == 0 yields exactly 0 and a zero gradient.
Var masked_softmax_cross_entropy(Var logits, const Tensor& one_hot, const Tensor& mask);

// ||a - b||_F^2 / (N*C).
Var frobenius_sq_mean(Var a, Var b);
// ||a - b||_F^2.
Var frobenius_sq_sum(Var a, Var b);

// ---- optimizer -------------------------------------------------------------

// Classical momentum: v <- momentum * v + g; p <- p - lr * v.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum);

  void step(std::span<Parameter* const> params);
  void reset() { velocity_.clear(); }

  double learning_rate() const noexcept { return lr_; }
  double momentum() const noexcept { return momentum_; }

  // Keyed by parameter name.
  const std::unordered_map<std::string, Tensor>& velocity() const noexcept { return velocity_; }
  std::unordered_map<std::string, Tensor>& velocity() noexcept { return velocity_; }

 private:
  double lr_;
  double momentum_;
  std::unordered_map<std::string, Tensor> velocity_;
};

}  // namespace dsprop
