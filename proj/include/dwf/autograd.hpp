// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dynamic reverse-mode differentiation.
//
// A Var is a shared handle to an immutable graph node. Ops build new nodes
// from existing ones; backward() walks the graph from a scalar loss in
// reverse topological order and returns the total derivative for every leaf
// created with requires_grad, parameters and inputs alike. Graphs are rebuilt
// for every batch and never cached.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dwf/tensor.hpp"

namespace dwf {

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  clamp,
  sign,
  relu,
  matmul,
  conv2d,
  bias_add,
  normalize,
  sum,
  mean,
  reshape,
  avg_pool,
  softmax,
  cross_entropy,
  weighted_sum,
};

std::string_view to_string(OpKind kind);

class Var;
class Gradients;
Gradients backward(const Var& loss);

/// Adds d(loss)/d(input_i) into *input_grads[i]; entries for inputs that do
/// not require a gradient are null.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> input_grads)>;

namespace detail {
struct Node {
  std::uint64_t id;
  OpKind op;
  Tensor value;
  bool requires_grad;
  std::vector<Var> inputs;
  BackwardFn backward;
};
}  // namespace detail

class Var {
 public:
  Var() = default;

  static Var leaf(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  std::uint64_t id() const { return node_->id; }
  OpKind op() const { return node_->op; }
  std::span<const Var> inputs() const { return node_->inputs; }
  bool defined() const { return node_ != nullptr; }

 private:
  std::shared_ptr<const detail::Node> node_;

  friend Var make_node(OpKind, Tensor, std::vector<Var>, BackwardFn);
  friend Gradients backward(const Var& loss);
  friend class GraphTestAccess;
};

/// Creates an op node. When no input requires a gradient the inputs and the
/// backward rule are dropped, so constant subgraphs carry no history.
Var make_node(OpKind op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

/// Gradients of one backward pass, keyed by leaf identity.
class Gradients {
 public:
  bool contains(const Var& v) const { return grads_.count(v.id()) != 0; }
  const Tensor& at(const Var& v) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<std::uint64_t, Tensor> grads_;
  friend Gradients backward(const Var& loss);
};

/// Reverse pass from a scalar loss. Throws std::invalid_argument when the loss
/// is not a single value or the graph contains a cycle.
Gradients backward(const Var& loss);

}  // namespace dwf
