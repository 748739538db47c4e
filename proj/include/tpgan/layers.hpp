#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tpgan/ops.hpp"
#include "tpgan/random.hpp"

namespace tpgan::nn {

enum class Mode { Train, Eval };

struct Param {
  std::string name;
  Var var;                // graph leaf
  bool trainable = true;  // false for running-stat buffers
};

inline Param make_param(std::string name, Tensor init, bool trainable = true) {
  return Param{std::move(name), Var::leaf(std::move(init), trainable), trainable};
}

class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(std::vector<Param*>& out) = 0;

  std::vector<Param*> parameters() {
    std::vector<Param*> all, out;
    collect(all);
    for (Param* p : all)
      if (p->trainable) out.push_back(p);
    return out;
  }
  // Trainable parameters and buffers, in declaration order (serialization order).
  std::vector<Param*> state() {
    std::vector<Param*> all;
    collect(all);
    return all;
  }
  Index count_trainable() {
    Index n = 0;
    for (Param* p : parameters()) n += p->var.numel();
    return n;
  }
};

struct Dense : Module {
  Param w, b;

  Dense() = default;
  Dense(const std::string& name, Index in, Index out, SubStream& s, Real init_std = 0.02) {
    Tensor wt(Shape{in, out});
    s.fill_normal(wt, 0.0, init_std);
    w = make_param(name + ".w", std::move(wt));
    b = make_param(name + ".b", Tensor::zeros({out}));
  }
  Var forward(const Var& x) const {
    Var y = matmul(x, w.var);
    return add(y, broadcast_leading(b.var, y.shape()));
  }
  void collect(std::vector<Param*>& out) override {
    out.push_back(&w);
    out.push_back(&b);
  }
};

struct Conv2d : Module {
  Param w, b;
  kernels::ConvGeom geom;

  Conv2d() = default;
  Conv2d(const std::string& name, Index kh, Index kw, Index ci, Index co,
         const kernels::ConvGeom& g, SubStream& s, Real init_std = 0.02)
      : geom(g) {
    Tensor wt(Shape{kh, kw, ci, co});
    s.fill_normal(wt, 0.0, init_std);
    w = make_param(name + ".w", std::move(wt));
    b = make_param(name + ".b", Tensor::zeros({co}));
  }
  Var forward(const Var& x) const {
    Var y = conv2d(x, w.var, geom);
    return add(y, broadcast_leading(b.var, y.shape()));
  }
  void collect(std::vector<Param*>& out) override {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// Normalizes over all leading dims per channel (batch norm for NHWC tensors,
// feature norm for [N,D]). Built from primitives so gradients of gradients
// flow through it. Running stats live outside the graph.
struct BatchNorm : Module {
  Param gamma, beta, running_mean, running_var;
  Real eps = 1e-5;
  Real momentum = 0.1;

  BatchNorm() = default;
  explicit BatchNorm(const std::string& name, Index c) {
    gamma = make_param(name + ".gamma", Tensor::ones({c}));
    beta = make_param(name + ".beta", Tensor::zeros({c}));
    running_mean = make_param(name + ".running_mean", Tensor::zeros({c}), false);
    running_var = make_param(name + ".running_var", Tensor::ones({c}), false);
  }

  Var forward(const Var& x, Mode mode) {
    const Index c = x.shape().back();
    const Index rows = x.numel() / c;
    Var m, v;
    if (mode == Mode::Train) {
      m = mean_leading(x);
      Var xc = sub(x, broadcast_leading(m, x.shape()));
      v = mean_leading(square(xc));
      const Real unbias = rows > 1 ? (Real)rows / (Real)(rows - 1) : 1.0;
      running_mean.var.raw_value().array() = (1.0 - momentum) * running_mean.var.value().array() +
                                             momentum * m.value().array();
      running_var.var.raw_value().array() = (1.0 - momentum) * running_var.var.value().array() +
                                            momentum * unbias * v.value().array();
      Var istd = div(constant(Tensor::ones({c})), sqrt(add_scalar(v, eps)));
      Var xn = mul(xc, broadcast_leading(istd, x.shape()));
      return add(mul(xn, broadcast_leading(gamma.var, x.shape())),
                 broadcast_leading(beta.var, x.shape()));
    }
    Var xc = sub(x, broadcast_leading(running_mean.var.detach(), x.shape()));
    Tensor istd(Shape{c});
    istd.array() = (running_var.var.value().array() + eps).rsqrt();
    Var xn = mul(xc, broadcast_leading(constant(std::move(istd)), x.shape()));
    return add(mul(xn, broadcast_leading(gamma.var, x.shape())),
               broadcast_leading(beta.var, x.shape()));
  }
  void collect(std::vector<Param*>& out) override {
    out.push_back(&gamma);
    out.push_back(&beta);
    out.push_back(&running_mean);
    out.push_back(&running_var);
  }
};

// conv3x3 -> BN -> ReLU -> conv3x3 -> BN, plus identity skip. No activation
// after the addition.
struct ResBlock : Module {
  Conv2d conv1, conv2;
  BatchNorm bn1, bn2;

  ResBlock() = default;
  ResBlock(const std::string& name, Index c, SubStream& s)
      : conv1(name + ".conv1", 3, 3, c, c, kernels::ConvGeom::same3(), s),
        conv2(name + ".conv2", 3, 3, c, c, kernels::ConvGeom::same3(), s),
        bn1(name + ".bn1", c),
        bn2(name + ".bn2", c) {}

  Var forward(const Var& x, Mode mode) {
    Var h = relu(bn1.forward(conv1.forward(x), mode));
    h = bn2.forward(conv2.forward(h), mode);
    return add(h, x);
  }
  void collect(std::vector<Param*>& out) override {
    conv1.collect(out);
    bn1.collect(out);
    conv2.collect(out);
    bn2.collect(out);
  }
};

class Adam {
 public:
  struct Slot {
    Tensor m, v;
  };

  Adam() = default;
  Adam(std::vector<Param*> params, Real lr, Real beta1 = 0.9, Real beta2 = 0.999,
       Real eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    slots_.reserve(params_.size());
    for (Param* p : params_)
      slots_.push_back(Slot{Tensor::zeros(p->var.shape()), Tensor::zeros(p->var.shape())});
  }

  // grads must be parallel to the params passed at construction.
  void step(const std::vector<Var>& grads) {
    if (grads.size() != params_.size())
      throw std::logic_error("adam: gradient count does not match parameter count");
    ++t_;
    const Real c1 = 1.0 - std::pow(b1_, (Real)t_);
    const Real c2 = 1.0 - std::pow(b2_, (Real)t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      const auto& g = grads[i].value().array();
      auto& m = slots_[i].m.array();
      auto& v = slots_[i].v.array();
      m = b1_ * m + (1.0 - b1_) * g;
      v = b2_ * v + (1.0 - b2_) * g * g;
      params_[i]->var.raw_value().array() -=
          lr_ * (m / c1) / ((v / c2).sqrt() + eps_);
    }
  }

  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Param*>& params() const { return params_; }
  Real lr() const { return lr_; }

 private:
  std::vector<Param*> params_;
  std::vector<Slot> slots_;
  Real lr_ = 1e-3, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
};

}  // namespace tpgan::nn
