#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "array.hpp"

// Reverse-mode autodiff tape over dense double tensors. Define-by-run: each
// forward op appends one node; node ids grow in creation order, and every
// input id is smaller than the node's own id, so a single descending pass is
// a valid reverse topological order. The tape is rebuilt per training step.
//
// A tape is single-threaded. Forward-only evaluation paths elsewhere in the
// project do not touch a tape at all.

namespace ssr::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool ok() const { return tape != nullptr && id >= 0; }
  const Array& val() const;
  const Array& grad() const;  // zeros if never accumulated
};

class Tape {
 public:
  struct Node {
    Array value;
    const Array* external = nullptr;  // set for by-reference leaves
    Array grad;                       // allocated lazily on first accumulation
    std::vector<int> inputs;
    std::function<void(Tape&, const Node&)> backward;  // null for leaves
    const char* op = "";
    bool requires_grad = true;

    const Array& val() const { return external ? *external : value; }
  };

  // Differentiable input (network parameters, probe tensors, ...).
  Var leaf(Array value) { return push_node(std::move(value), {}, nullptr, "leaf", true); }

  // Differentiable leaf that references storage owned by the caller. The
  // storage must stay alive and unmodified until the tape is done (in
  // training: until after backward; the optimizer writes only afterwards).
  Var leaf_ref(const Array* value) {
    Var v = push_node(Array(), {}, nullptr, "leaf_ref", true);
    nodes_.back().external = value;
    return v;
  }

  // Tracked value that never receives a gradient (images, masks, constants).
  Var constant(Array value) { return push_node(std::move(value), {}, nullptr, "const", false); }

  // Non-differentiable leaf referencing caller storage (input image batches).
  Var constant_ref(const Array* value) {
    Var v = push_node(Array(), {}, nullptr, "const_ref", false);
    nodes_.back().external = value;
    return v;
  }

  // Register an op result. `backward` reads node.grad and accumulates into
  // the inputs' grads via Tape::grad().
  Var push(Array value, std::vector<int> inputs,
           std::function<void(Tape&, const Node&)> backward, const char* op) {
    bool req = false;
    for (int in : inputs) {
      SSR_CHECK(in >= 0 && in < static_cast<int>(nodes_.size()),
                "tape: bad input id " << in << " for op " << op);
      req = req || nodes_[static_cast<size_t>(in)].requires_grad;
    }
    return push_node(std::move(value), std::move(inputs), req ? std::move(backward) : nullptr,
                     op, req);
  }

  const Array& val(int id) const { return nodes_[static_cast<size_t>(id)].val(); }

  Array& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty() && n.val().numel() > 0) n.grad = Array(n.val().shape());
    return n.grad;
  }

  bool has_grad(int id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  size_t size() const { return nodes_.size(); }

  // Accumulates d(root)/d(node) into every reachable node's grad. root must
  // be scalar. May be called more than once per tape; grads then add up.
  void backward(const Var& root) {
    SSR_CHECK(root.tape == this && root.id >= 0, "backward: var not on this tape");
    SSR_CHECK(val(root.id).numel() == 1,
              "backward: root must be scalar, got shape " << shape_str(val(root.id).shape()));
    if (!nodes_[static_cast<size_t>(root.id)].requires_grad) return;

    std::vector<char> reach(nodes_.size(), 0);
    reach[static_cast<size_t>(root.id)] = 1;
    grad(root.id)[0] += 1.0;
    for (int id = root.id; id >= 0; --id) {
      const Node& n = nodes_[static_cast<size_t>(id)];
      if (!reach[static_cast<size_t>(id)] || !n.requires_grad) continue;
      for (int in : n.inputs)
        if (nodes_[static_cast<size_t>(in)].requires_grad) reach[static_cast<size_t>(in)] = 1;
      if (n.backward && has_grad(id)) n.backward(*this, n);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad = Array();
  }

  // Invalidates every Var previously issued by this tape.
  void clear() { nodes_.clear(); }

 private:
  Var push_node(Array value, std::vector<int> inputs,
                std::function<void(Tape&, const Node&)> backward, const char* op, bool req) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    n.op = op;
    n.requires_grad = req;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  // deque: references to nodes stay valid while new nodes are appended
  std::deque<Node> nodes_;
};

inline const Array& Var::val() const { return tape->val(id); }

inline const Array& Var::grad() const {
  // Never-accumulated grads materialize as zeros of the value's shape.
  return tape->grad(id);
}

}  // namespace ssr::ad
