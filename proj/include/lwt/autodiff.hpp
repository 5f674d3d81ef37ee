// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode autodiff. A Tape owns every intermediate value
// produced during one forward pass; a Var is a handle into it. Parameters
// live outside the tape in shared ParamStore objects so that several layers
// (or several groups of one layer) can reference the same physical weights.

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lwt/tensor.hpp"

namespace lwt {

struct ParamStore {
  std::string name;
  Tensor value;
};
using Param = std::shared_ptr<ParamStore>;

inline Param make_param(std::string name, Tensor value) {
  return std::make_shared<ParamStore>(ParamStore{std::move(name), std::move(value)});
}

/// Gradients keyed by the physical parameter storage.
using GradMap = std::unordered_map<const ParamStore*, Tensor>;

/// One attention-probability matrix captured while recording.
struct AttentionMap {
  std::size_t layer = 0;
  std::string kind;
  std::size_t group = 0;
  std::size_t head = 0;
  Tensor probs;
};

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Called during backward with the node's own index; reads this node's
  /// gradient and accumulates into its parents.
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    Node node;
    node.value = std::move(value);
    return push(std::move(node));
  }

  /// Leaf bound to a parameter. Repeated calls with the same storage return
  /// the same node, so shared weights accumulate into a single gradient.
  Var param(const Param& p) {
    if (auto it = param_nodes_.find(p.get()); it != param_nodes_.end()) return Var(this, it->second);
    Node node;
    node.ref = &p->value;
    node.param = p;
    node.requires_grad = true;
    Var v = push(std::move(node));
    param_nodes_.emplace(p.get(), v.id());
    return v;
  }

  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(parents), std::move(fn));
  }

  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
    Node node;
    node.value = std::move(value);
    for (const Var& p : parents) {
      if (p.tape_ != this) throw ContractError("operand belongs to a different tape");
      node.parents.push_back(p.id_);
      node.requires_grad = node.requires_grad || nodes_[p.id_].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(fn);
    return push(std::move(node));
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.value;
  }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient buffer of a node, zero-allocated on first access.
  Tensor& grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.grad) n.grad = std::make_unique<Tensor>(value(id).shape());
    return *n.grad;
  }

  bool has_grad(std::size_t id) const { return static_cast<bool>(nodes_[id].grad); }

  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss. Returns one gradient per reachable
  /// parameter storage.
  GradMap backward(Var loss) {
    if (loss.tape_ != this) throw ContractError("loss belongs to a different tape");
    if (value(loss.id_).size() != 1) {
      throw ContractError("backward requires a scalar loss, got shape " + shape_str(value(loss.id_).shape()));
    }
    for (auto& n : nodes_) n.grad.reset();
    grad(loss.id_)[0] = 1.0;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad && n.backward) n.backward(*this, i);
    }
    GradMap out;
    for (auto& n : nodes_) {
      if (n.param && n.grad) out.emplace(n.param.get(), *n.grad);
    }
    return out;
  }

  // Counting mode: every matmul adds m*p*q; shape_only skips the arithmetic.
  void count_madd(std::uint64_t n) { madds_ += n; }
  std::uint64_t madds() const { return madds_; }
  void set_shape_only(bool on) { shape_only_ = on; }
  bool shape_only() const { return shape_only_; }

  void set_recorder(std::vector<AttentionMap>* recorder) { recorder_ = recorder; }
  std::vector<AttentionMap>* recorder() const { return recorder_; }

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    std::unique_ptr<Tensor> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Param param;
    bool requires_grad = false;
  };

  Var push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // stable references across push_back
  std::unordered_map<const ParamStore*, std::size_t> param_nodes_;
  std::uint64_t madds_ = 0;
  bool shape_only_ = false;
  std::vector<AttentionMap>* recorder_ = nullptr;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

}  // namespace lwt
