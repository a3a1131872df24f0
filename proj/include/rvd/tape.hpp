#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rvd/errors.hpp"
#include "rvd/parallel.hpp"
#include "rvd/tensor.hpp"

// Reverse-mode autodiff. A Tape records primitive applications in execution
// order (so inputs always precede their consumers); backward() seeds the
// scalar loss with 1 and walks the nodes once in reverse, with each node's
// rule accumulating into its inputs' gradient buffers. Gradients therefore
// add across all uses of a value.
//
// A tape is single-threaded: one training step runs on one thread, and
// parallelism lives inside the kernels (over disjoint output elements) or
// across independent tapes.

namespace rvd::ad {

template <typename S>
class Tape;

// Lightweight handle to a tape node.
template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int32_t id = -1;

  bool defined() const { return tape != nullptr && id >= 0; }
  const Tensor<S>& value() const { return tape->value_of(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->node_requires_grad(id); }
};

template <typename S>
class Tape {
 public:
  // Called during backward with the node's accumulated upstream gradient.
  using BackwardFn = std::function<void(Tape&, const Tensor<S>&)>;

  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> leaf(Tensor<S> value, bool requires_grad = false) {
    return push("leaf", std::move(value), requires_grad, BackwardFn(), false);
  }
  Var<S> constant(Tensor<S> value) { return leaf(std::move(value), false); }

  // Records one primitive output. `requires_grad` should be the OR over the
  // inputs; the backward rule is dropped when it is false.
  Var<S> record(const char* op, Tensor<S> value, bool requires_grad,
                BackwardFn backward) {
    return push(op, std::move(value), requires_grad,
                requires_grad ? std::move(backward) : BackwardFn(), true);
  }

  void backward(const Var<S>& loss) {
    require(loss.defined() && loss.tape == this, "backward",
            "loss does not belong to this tape");
    require(loss.value().numel() == 1, "backward",
            "loss must be scalar, got shape " + shape_str(loss.shape()));
    if (!nodes_[static_cast<size_t>(loss.id)].requires_grad)
      throw ShapeError(
          "backward: loss is detached (no differentiable path to any leaf)");
    require(!ran_backward_, "backward", "backward already ran on this tape");
    ran_backward_ = true;
    grads_.assign(nodes_.size(), Tensor<S>());
    grads_[static_cast<size_t>(loss.id)] = Tensor<S>::full(loss.shape(), S(1));
    for (int32_t id = loss.id; id >= 0; --id) {
      Node& node = nodes_[static_cast<size_t>(id)];
      if (!node.requires_grad || !node.backward) continue;
      if (grads_[static_cast<size_t>(id)].numel() == 0) continue;  // unused branch
      node.backward(*this, grads_[static_cast<size_t>(id)]);
    }
  }

  // Accumulates g into the node's gradient buffer.
  void add_grad(int32_t id, Tensor<S> g) {
    Tensor<S>& slot = grads_.at(static_cast<size_t>(id));
    require_same_shape("add_grad", value_of(id).shape(), g.shape());
    if (slot.numel() == 0) {
      // Clone unless we are the sole owner; stored buffers are mutated by
      // later accumulations and must never alias another node's gradient.
      slot = g.sole_owner() ? std::move(g) : g.clone();
      return;
    }
    S* dst = slot.mut_data();
    const S* src = g.data();
    const int64_t n = slot.numel();
    parallel_for(n, 1 << 14, [&](int64_t i) { dst[i] += src[i]; });
  }

  bool has_grad(const Var<S>& v) const {
    return ran_backward_ && grads_.at(static_cast<size_t>(v.id)).numel() != 0;
  }

  const Tensor<S>& grad(const Var<S>& v) const {
    require(ran_backward_, "grad", "backward has not run");
    const Tensor<S>& g = grads_.at(static_cast<size_t>(v.id));
    require(g.numel() != 0, "grad", "node has no gradient (unused in the loss)");
    return g;
  }

  Tensor<S> grad_or_zeros(const Var<S>& v) const {
    if (has_grad(v)) return grads_[static_cast<size_t>(v.id)];
    return Tensor<S>::zeros(v.shape());
  }

  const Tensor<S>& value_of(int32_t id) const {
    return nodes_.at(static_cast<size_t>(id)).value;
  }
  bool node_requires_grad(int32_t id) const {
    return nodes_.at(static_cast<size_t>(id)).requires_grad;
  }
  size_t size() const { return nodes_.size(); }
  bool check_finite() const { return check_finite_; }

 private:
  struct Node {
    Tensor<S> value;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var<S> push(const char* op, Tensor<S> value, bool requires_grad,
              BackwardFn backward, bool is_op) {
    if (check_finite_ && is_op && !value.all_finite())
      throw NumericError(std::string(op) + ": non-finite output");
    nodes_.push_back(Node{std::move(value), std::move(backward), requires_grad});
    return Var<S>{this, static_cast<int32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<S>> grads_;
  bool check_finite_ = true;
  bool ran_backward_ = false;
};

}  // namespace rvd::ad
