#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpgan/tensor.hpp"

namespace tpgan::nn {

class Var;
using VjpFn = std::function<std::vector<Var>(const Var& upstream)>;

// One node of the dynamically built computation graph. Children hold their
// inputs via shared_ptr; vjp closures capture inputs only (never the output),
// so graphs are acyclic and free themselves when the last handle drops.
struct VarNode {
  Tensor value;
  std::vector<Var> inputs;
  VjpFn vjp;              // empty for leaves
  std::string op;         // primitive name, for diagnostics
  bool requires_grad = false;
  std::uint64_t seq = 0;  // creation order; reverse order is a topological order
};

class Var {
 public:
  Var() = default;

  static Var leaf(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  // In-place mutation of a leaf's storage (optimizer updates). Graphs built
  // before the mutation must not be reused afterwards.
  Tensor& raw_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  Index numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // Constant copy of the value, cut off from the graph.
  Var detach() const { return leaf(node_->value, false); }

  const std::shared_ptr<VarNode>& node() const { return node_; }

 private:
  std::shared_ptr<VarNode> node_;
  friend Var make_op(std::string, Tensor, std::vector<Var>, VjpFn);
};

Var make_op(std::string op, Tensor value, std::vector<Var> inputs, VjpFn vjp);

inline Real scalar_of(const Var& v) {
  if (v.numel() != 1) throw std::logic_error("scalar_of: variable is not a scalar");
  return v.value()[0];
}

// Reverse-mode gradients of a scalar `output` with respect to `wrt`.
// The returned gradients are themselves graph variables, so they can be
// differentiated again (used by the input gradient penalty).
// Unreachable wrt entries yield zero tensors.
std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt,
                      const Var& seed = Var());

}  // namespace tpgan::nn
