// SPDX-License-Identifier: Apache-2.0
#include "dwf/autograd.hpp"

#include <atomic>
#include <stdexcept>
#include <string>
#include <utility>

namespace dwf {

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::add_scalar: return "add_scalar";
    case OpKind::clamp: return "clamp";
    case OpKind::sign: return "sign";
    case OpKind::relu: return "relu";
    case OpKind::matmul: return "matmul";
    case OpKind::conv2d: return "conv2d";
    case OpKind::bias_add: return "bias_add";
    case OpKind::normalize: return "normalize";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::reshape: return "reshape";
    case OpKind::avg_pool: return "avg_pool";
    case OpKind::softmax: return "softmax";
    case OpKind::cross_entropy: return "cross_entropy";
    case OpKind::weighted_sum: return "weighted_sum";
  }
  return "unknown";
}

namespace {
std::uint64_t next_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace

Var Var::leaf(Tensor value, bool requires_grad) {
  Var v;
  v.node_ = std::make_shared<const detail::Node>(
      detail::Node{next_id(), OpKind::leaf, std::move(value), requires_grad, {}, nullptr});
  return v;
}

Var make_node(OpKind op, Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  bool requires_grad = false;
  for (const Var& in : inputs) requires_grad = requires_grad || in.requires_grad();
  if (!requires_grad) {
    inputs.clear();
    backward = nullptr;
  }
  Var v;
  v.node_ = std::make_shared<const detail::Node>(
      detail::Node{next_id(), op, std::move(value), requires_grad, std::move(inputs), std::move(backward)});
  return v;
}

const Tensor& Gradients::at(const Var& v) const {
  auto it = grads_.find(v.id());
  if (it == grads_.end()) {
    throw std::invalid_argument("no gradient recorded for node " + std::to_string(v.id()) +
                                " (not reachable from the loss or not tracked)");
  }
  return it->second;
}

Gradients backward(const Var& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  Gradients result;
  if (!loss.requires_grad()) return result;

  // Iterative DFS post-order over nodes that require gradients.
  enum class Mark : unsigned char { active, done };
  std::unordered_map<std::uint64_t, Mark> marks;
  std::vector<Var> order;
  std::vector<std::pair<Var, std::size_t>> stack;
  stack.emplace_back(loss, 0);
  marks[loss.id()] = Mark::active;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    auto inputs = node.inputs();
    if (next < inputs.size()) {
      const Var child = inputs[next++];
      if (!child.requires_grad()) continue;
      auto it = marks.find(child.id());
      if (it == marks.end()) {
        marks[child.id()] = Mark::active;
        stack.emplace_back(child, 0);
      } else if (it->second == Mark::active) {
        throw std::invalid_argument("backward: cycle detected at node " + std::to_string(child.id()) + " (" +
                                    std::string(to_string(child.op())) + ")");
      }
    } else {
      marks[node.id()] = Mark::done;
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<std::uint64_t, Tensor> pending;
  pending.emplace(loss.id(), Tensor(loss.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Var& node = *it;
    auto found = pending.find(node.id());
    if (found == pending.end()) continue;
    Tensor grad = std::move(found->second);
    pending.erase(found);
    if (node.op() == OpKind::leaf) {
      result.grads_.emplace(node.id(), std::move(grad));
      continue;
    }
    auto inputs = node.inputs();
    std::vector<Tensor*> slots(inputs.size(), nullptr);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!inputs[i].requires_grad()) continue;
      auto [slot, inserted] = pending.try_emplace(inputs[i].id());
      if (inserted) slot->second = Tensor(inputs[i].shape(), 0.0);
      slots[i] = &slot->second;
    }
    // unordered_map rehashing invalidates neither references nor pointers to values.
    node.node_->backward(grad, slots);
  }
  return result;
}

}  // namespace dwf
