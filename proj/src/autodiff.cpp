#include "tpgan/autodiff.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "tpgan/ops.hpp"

namespace tpgan::nn {

namespace {
std::uint64_t next_seq() {
  static std::uint64_t counter = 0;  // single-threaded engine
  return ++counter;
}
}  // namespace

Var Var::leaf(Tensor value, bool requires_grad) {
  Var v;
  v.node_ = std::make_shared<VarNode>();
  v.node_->value = std::move(value);
  v.node_->requires_grad = requires_grad;
  v.node_->op = "leaf";
  v.node_->seq = next_seq();
  return v;
}

Var make_op(std::string op, Tensor value, std::vector<Var> inputs, VjpFn vjp) {
  bool rg = false;
  for (const Var& i : inputs) rg = rg || i.requires_grad();
  // Pure constant computations leave no graph behind.
  if (!rg) return Var::leaf(std::move(value), false);
  Var v = Var::leaf(std::move(value), true);
  v.node_->op = std::move(op);
  v.node_->inputs = std::move(inputs);
  v.node_->vjp = std::move(vjp);
  return v;
}

std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt, const Var& seed_in) {
  if (!output.defined()) throw std::logic_error("grad: undefined output");
  Var seed = seed_in;
  if (!seed.defined()) {
    if (output.numel() != 1)
      throw std::logic_error("grad: output must be scalar when no seed is given");
    seed = Var::leaf(Tensor::ones(output.shape()), false);
  } else if (seed.shape() != output.shape()) {
    throw std::logic_error("grad: seed shape does not match output");
  }

  // Gather the grad-requiring subgraph reachable from the output. Processing
  // nodes in decreasing creation order guarantees each node's upstream sum is
  // complete before its vjp runs.
  std::unordered_set<VarNode*> seen;
  std::vector<VarNode*> order;
  std::vector<VarNode*> stack;
  auto push = [&](VarNode* n) {
    if (n->requires_grad && seen.insert(n).second) {
      stack.push_back(n);
      order.push_back(n);
    }
  };
  push(output.node().get());
  while (!stack.empty()) {
    VarNode* n = stack.back();
    stack.pop_back();
    for (const Var& i : n->inputs) push(i.node().get());
  }
  std::sort(order.begin(), order.end(),
            [](VarNode* a, VarNode* b) { return a->seq > b->seq; });

  std::unordered_map<VarNode*, Var> acc;
  if (output.requires_grad()) acc[output.node().get()] = seed;
  for (VarNode* n : order) {
    auto it = acc.find(n);
    if (it == acc.end() || !n->vjp) continue;
    std::vector<Var> gs = n->vjp(it->second);
    if (gs.size() != n->inputs.size())
      throw std::logic_error("vjp arity mismatch in op " + n->op);
    for (size_t k = 0; k < gs.size(); ++k) {
      const Var& inp = n->inputs[k];
      if (!inp.requires_grad() || !gs[k].defined()) continue;
      if (gs[k].shape() != inp.shape())
        throw std::logic_error("vjp shape mismatch in op " + n->op);
      auto jt = acc.find(inp.node().get());
      if (jt == acc.end())
        acc.emplace(inp.node().get(), gs[k]);
      else
        jt->second = add(jt->second, gs[k]);
    }
  }

  std::vector<Var> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    if (!w.defined()) throw std::logic_error("grad: undefined wrt entry");
    auto it = acc.find(w.node().get());
    out.push_back(it != acc.end() ? it->second : Var::leaf(Tensor::zeros(w.shape()), false));
  }
  return out;
}

}  // namespace tpgan::nn
