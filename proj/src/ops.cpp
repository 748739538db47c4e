#include "tpgan/ops.hpp"

#include <cmath>
#include <utility>

namespace tpgan::nn {

namespace {

void check_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

void check_rank(const char* op, const Var& x, int rank) {
  if ((int)x.shape().size() != rank)
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(x.shape()));
}

Tensor binary(const Var& a, const Var& b, auto f) {
  Tensor y(a.shape());
  y.array() = f(a.value().array(), b.value().array());
  return y;
}

}  // namespace

Var constant(Tensor t) { return Var::leaf(std::move(t), false); }
Var constant_scalar(Real v) { return Var::leaf(Tensor::scalar(v), false); }

Var add(const Var& a, const Var& b) {
  check_same_shape("add", a, b);
  return make_op("add", binary(a, b, [](auto&& x, auto&& y) { return x + y; }), {a, b},
                 [](const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape("sub", a, b);
  return make_op("sub", binary(a, b, [](auto&& x, auto&& y) { return x - y; }), {a, b},
                 [](const Var& g) { return std::vector<Var>{g, neg(g)}; });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape("mul", a, b);
  return make_op("mul", binary(a, b, [](auto&& x, auto&& y) { return x * y; }), {a, b},
                 [a, b](const Var& g) { return std::vector<Var>{mul(g, b), mul(g, a)}; });
}

Var div(const Var& a, const Var& b) {
  check_same_shape("div", a, b);
  return make_op("div", binary(a, b, [](auto&& x, auto&& y) { return x / y; }), {a, b},
                 [a, b](const Var& g) {
                   return std::vector<Var>{div(g, b), neg(div(mul(g, a), mul(b, b)))};
                 });
}

Var neg(const Var& x) {
  Tensor y(x.shape());
  y.array() = -x.value().array();
  return make_op("neg", std::move(y), {x},
                 [](const Var& g) { return std::vector<Var>{neg(g)}; });
}

Var exp(const Var& x) {
  Tensor y(x.shape());
  y.array() = x.value().array().exp();
  return make_op("exp", std::move(y), {x},
                 [x](const Var& g) { return std::vector<Var>{mul(g, exp(x))}; });
}

Var log(const Var& x) {
  Tensor y(x.shape());
  y.array() = x.value().array().log();
  return make_op("log", std::move(y), {x},
                 [x](const Var& g) { return std::vector<Var>{div(g, x)}; });
}

Var sqrt(const Var& x) {
  Tensor y(x.shape());
  y.array() = x.value().array().sqrt();
  return make_op("sqrt", std::move(y), {x}, [x](const Var& g) {
    return std::vector<Var>{mul_scalar(div(g, sqrt(x)), 0.5)};
  });
}

Var square(const Var& x) {
  Tensor y(x.shape());
  y.array() = x.value().array().square();
  return make_op("square", std::move(y), {x}, [x](const Var& g) {
    return std::vector<Var>{mul(g, mul_scalar(x, 2.0))};
  });
}

Var tanh(const Var& x) {
  Tensor y(x.shape());
  y.array() = x.value().array().tanh();
  return make_op("tanh", std::move(y), {x}, [x](const Var& g) {
    return std::vector<Var>{mul(g, add_scalar(neg(square(tanh(x))), 1.0))};
  });
}

Var sigmoid(const Var& x) {
  Tensor y(x.shape());
  const Real* xp = x.value().data();
  Real* yp = y.data();
  for (Index i = 0; i < y.numel(); ++i) {
    const Real z = xp[i];
    yp[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return make_op("sigmoid", std::move(y), {x}, [x](const Var& g) {
    Var s = sigmoid(x);
    return std::vector<Var>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
  });
}

Var abs(const Var& x) {
  Tensor y(x.shape()), sign(x.shape());
  y.array() = x.value().array().abs();
  sign.array() = x.value().array().sign();
  return make_op("abs", std::move(y), {x}, [m = constant(std::move(sign))](const Var& g) {
    return std::vector<Var>{mul(g, m)};
  });
}

namespace {
// Piecewise-linear ops: forward multiplies by a data-dependent mask; the vjp
// treats the mask as constant, which is the correct a.e. derivative and keeps
// second-order gradients exact away from the kinks.
Var masked_linear(const char* op, const Var& x, auto maskf) {
  Tensor mask(x.shape());
  const Real* xp = x.value().data();
  Real* mp = mask.data();
  for (Index i = 0; i < mask.numel(); ++i) mp[i] = maskf(xp[i]);
  Tensor y(x.shape());
  y.array() = x.value().array() * mask.array();
  return make_op(op, std::move(y), {x}, [m = constant(std::move(mask))](const Var& g) {
    return std::vector<Var>{mul(g, m)};
  });
}
}  // namespace

Var relu(const Var& x) {
  return masked_linear("relu", x, [](Real v) { return v > 0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& x, Real slope) {
  return masked_linear("leaky_relu", x, [slope](Real v) { return v > 0 ? 1.0 : slope; });
}

Var clamp_min(const Var& x, Real lo) {
  Tensor y(x.shape()), mask(x.shape());
  const Real* xp = x.value().data();
  Real* yp = y.data();
  Real* mp = mask.data();
  for (Index i = 0; i < y.numel(); ++i) {
    yp[i] = xp[i] >= lo ? xp[i] : lo;
    mp[i] = xp[i] >= lo ? 1.0 : 0.0;
  }
  return make_op("clamp_min", std::move(y), {x},
                 [m = constant(std::move(mask))](const Var& g) {
                   return std::vector<Var>{mul(g, m)};
                 });
}

Var add_scalar(const Var& x, Real s) {
  Tensor y(x.shape());
  y.array() = x.value().array() + s;
  return make_op("add_scalar", std::move(y), {x},
                 [](const Var& g) { return std::vector<Var>{g}; });
}

Var mul_scalar(const Var& x, Real s) {
  Tensor y(x.shape());
  y.array() = x.value().array() * s;
  return make_op("mul_scalar", std::move(y), {x},
                 [s](const Var& g) { return std::vector<Var>{mul_scalar(g, s)}; });
}

Var sum_all(const Var& x) {
  return make_op("sum_all", Tensor::scalar(x.value().array().sum()), {x},
                 [shape = x.shape()](const Var& g) {
                   return std::vector<Var>{broadcast_all(g, shape)};
                 });
}

Var broadcast_all(const Var& x, Shape shape) {
  if (x.numel() != 1) throw std::invalid_argument("broadcast_all: source must be a scalar");
  return make_op("broadcast_all", Tensor::full(shape, x.value()[0]), {x},
                 [](const Var& g) { return std::vector<Var>{sum_all(g)}; });
}

Var sum_lastdim(const Var& x) {
  const Index d = x.shape().back();
  Shape yshape = x.shape();
  yshape.back() = 1;
  Tensor y(yshape);
  y.array() = x.value().as_rows().rowwise().sum().array();
  return make_op("sum_lastdim", std::move(y), {x}, [d](const Var& g) {
    return std::vector<Var>{broadcast_lastdim(g, d)};
  });
}

Var broadcast_lastdim(const Var& x, Index d) {
  if (x.shape().back() != 1)
    throw std::invalid_argument("broadcast_lastdim: last dim must be 1, got " +
                                shape_str(x.shape()));
  Shape yshape = x.shape();
  yshape.back() = d;
  Tensor y(yshape);
  Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>> xv(x.value().data(), x.numel());
  y.matrix(x.numel(), d).colwise() = xv;
  return make_op("broadcast_lastdim", std::move(y), {x},
                 [](const Var& g) { return std::vector<Var>{sum_lastdim(g)}; });
}

Var max_lastdim(const Var& x) {
  const Index d = x.shape().back();
  const Index rows = x.numel() / d;
  Shape yshape = x.shape();
  yshape.back() = 1;
  Tensor y(yshape);
  Tensor mask = Tensor::zeros(x.shape());
  const Real* xp = x.value().data();
  for (Index r = 0; r < rows; ++r) {
    Index best = 0;
    for (Index j = 1; j < d; ++j)
      if (xp[r * d + j] > xp[r * d + best]) best = j;
    y[r] = xp[r * d + best];
    mask[r * d + best] = 1.0;  // ties route to the first maximum
  }
  return make_op("max_lastdim", std::move(y), {x},
                 [d, m = constant(std::move(mask))](const Var& g) {
                   return std::vector<Var>{mul(broadcast_lastdim(g, d), m)};
                 });
}

Var sum_leading(const Var& x) {
  const Index c = x.shape().back();
  Tensor y(Shape{c});
  y.array() = x.value().as_rows().colwise().sum().transpose().array();
  return make_op("sum_leading", std::move(y), {x}, [shape = x.shape()](const Var& g) {
    return std::vector<Var>{broadcast_leading(g, shape)};
  });
}

Var broadcast_leading(const Var& x, Shape shape) {
  check_rank("broadcast_leading", x, 1);
  if (shape.back() != x.shape()[0])
    throw std::invalid_argument("broadcast_leading: last dim of target must equal source size");
  Tensor y(shape);
  const Index rows = y.numel() / shape.back();
  Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>> xv(x.value().data(), x.numel());
  y.matrix(rows, shape.back()).rowwise() = xv;
  return make_op("broadcast_leading", std::move(y), {x},
                 [](const Var& g) { return std::vector<Var>{sum_leading(g)}; });
}

Var sum_spatial(const Var& x) {
  check_rank("sum_spatial", x, 4);
  const Shape& xs = x.shape();
  const Index n = xs[0], hw = xs[1] * xs[2], c = xs[3];
  Tensor y = Tensor::zeros(Shape{n, c});
  const Real* xp = x.value().data();
  for (Index in = 0; in < n; ++in)
    for (Index p = 0; p < hw; ++p)
      for (Index ic = 0; ic < c; ++ic) y[in * c + ic] += xp[(in * hw + p) * c + ic];
  return make_op("sum_spatial", std::move(y), {x}, [h = xs[1], w = xs[2]](const Var& g) {
    return std::vector<Var>{replicate_spatial(g, h, w)};
  });
}

Var replicate_spatial(const Var& x, Index h, Index w) {
  check_rank("replicate_spatial", x, 2);
  const Index n = x.shape()[0], c = x.shape()[1];
  Tensor y(Shape{n, h, w, c});
  const Real* xp = x.value().data();
  Real* yp = y.data();
  for (Index in = 0; in < n; ++in)
    for (Index p = 0; p < h * w; ++p)
      for (Index ic = 0; ic < c; ++ic) yp[(in * h * w + p) * c + ic] = xp[in * c + ic];
  return make_op("replicate_spatial", std::move(y), {x},
                 [](const Var& g) { return std::vector<Var>{sum_spatial(g)}; });
}

Var scale_rows(const Var& x, const Var& s) {
  check_rank("scale_rows (scale)", s, 1);
  if (x.shape()[0] != s.shape()[0])
    throw std::invalid_argument("scale_rows: leading dims differ");
  const Index n = x.shape()[0], step = x.numel() / n;
  Tensor y(x.shape());
  const Real* xp = x.value().data();
  const Real* sp = s.value().data();
  Real* yp = y.data();
  for (Index in = 0; in < n; ++in)
    for (Index k = 0; k < step; ++k) yp[in * step + k] = xp[in * step + k] * sp[in];
  return make_op("scale_rows", std::move(y), {x, s}, [x, s](const Var& g) {
    return std::vector<Var>{scale_rows(g, s), rows_dot(g, x)};
  });
}

Var rows_dot(const Var& a, const Var& b) {
  check_same_shape("rows_dot", a, b);
  const Index n = a.shape()[0], step = a.numel() / n;
  Tensor y(Shape{n});
  const Real* ap = a.value().data();
  const Real* bp = b.value().data();
  for (Index in = 0; in < n; ++in) {
    Real acc = 0;
    for (Index k = 0; k < step; ++k) acc += ap[in * step + k] * bp[in * step + k];
    y[in] = acc;
  }
  return make_op("rows_dot", std::move(y), {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{scale_rows(b, g), scale_rows(a, g)};
  });
}

Var reshape(const Var& x, Shape shape) {
  return make_op("reshape", x.value().reshaped(std::move(shape)), {x},
                 [shape = x.shape()](const Var& g) {
                   return std::vector<Var>{reshape(g, shape)};
                 });
}

Var transpose2d(const Var& x) {
  check_rank("transpose2d", x, 2);
  const Index r = x.shape()[0], c = x.shape()[1];
  Tensor y(Shape{c, r});
  y.matrix(c, r) = x.value().matrix(r, c).transpose();
  return make_op("transpose2d", std::move(y), {x},
                 [](const Var& g) { return std::vector<Var>{transpose2d(g)}; });
}

Var concat_lastdim(const Var& a, const Var& b) {
  Shape as = a.shape(), bs = b.shape();
  if (as.size() != bs.size()) throw std::invalid_argument("concat_lastdim: rank mismatch");
  for (size_t i = 0; i + 1 < as.size(); ++i)
    if (as[i] != bs[i]) throw std::invalid_argument("concat_lastdim: leading dims differ");
  const Index da = as.back(), db = bs.back();
  Shape yshape = as;
  yshape.back() = da + db;
  Tensor y(yshape);
  const Index rows = y.numel() / (da + db);
  auto ym = y.matrix(rows, da + db);
  ym.leftCols(da) = a.value().matrix(rows, da);
  ym.rightCols(db) = b.value().matrix(rows, db);
  return make_op("concat_lastdim", std::move(y), {a, b}, [da, db](const Var& g) {
    return std::vector<Var>{slice_lastdim(g, 0, da), slice_lastdim(g, da, da + db)};
  });
}

Var slice_lastdim(const Var& x, Index from, Index to) {
  const Index d = x.shape().back();
  if (from < 0 || to > d || from >= to)
    throw std::invalid_argument("slice_lastdim: bad range");
  Shape yshape = x.shape();
  yshape.back() = to - from;
  Tensor y(yshape);
  const Index rows = x.numel() / d;
  y.matrix(rows, to - from) = x.value().matrix(rows, d).middleCols(from, to - from);
  return make_op("slice_lastdim", std::move(y), {x}, [from, to, d](const Var& g) {
    return std::vector<Var>{pad_lastdim(g, from, d - to)};
  });
}

Var pad_lastdim(const Var& x, Index before, Index after) {
  const Index d = x.shape().back();
  Shape yshape = x.shape();
  yshape.back() = before + d + after;
  Tensor y = Tensor::zeros(yshape);
  const Index rows = x.numel() / d;
  y.matrix(rows, yshape.back()).middleCols(before, d) = x.value().matrix(rows, d);
  return make_op("pad_lastdim", std::move(y), {x}, [before, d](const Var& g) {
    return std::vector<Var>{slice_lastdim(g, before, before + d)};
  });
}

Var take_rows(const Var& x, std::vector<Index> idx) {
  const Index rows = x.shape()[0], step = x.numel() / rows;
  for (Index i : idx)
    if (i < 0 || i >= rows) throw std::invalid_argument("take_rows: index out of range");
  Shape yshape = x.shape();
  yshape[0] = (Index)idx.size();
  Tensor y(yshape);
  const Real* xp = x.value().data();
  Real* yp = y.data();
  for (size_t k = 0; k < idx.size(); ++k)
    for (Index j = 0; j < step; ++j) yp[(Index)k * step + j] = xp[idx[k] * step + j];
  return make_op("take_rows", std::move(y), {x}, [idx = std::move(idx), rows](const Var& g) {
    return std::vector<Var>{scatter_rows(g, idx, rows)};
  });
}

Var scatter_rows(const Var& x, std::vector<Index> idx, Index nrows) {
  const Index rows = x.shape()[0], step = x.numel() / rows;
  if ((Index)idx.size() != rows)
    throw std::invalid_argument("scatter_rows: index count must match leading dim");
  for (Index i : idx)
    if (i < 0 || i >= nrows) throw std::invalid_argument("scatter_rows: index out of range");
  Shape yshape = x.shape();
  yshape[0] = nrows;
  Tensor y = Tensor::zeros(yshape);
  const Real* xp = x.value().data();
  Real* yp = y.data();
  for (Index k = 0; k < rows; ++k)
    for (Index j = 0; j < step; ++j) yp[idx[(size_t)k] * step + j] += xp[k * step + j];
  return make_op("scatter_rows", std::move(y), {x}, [idx = std::move(idx)](const Var& g) {
    return std::vector<Var>{take_rows(g, idx)};
  });
}

Var matmul(const Var& a, const Var& b) {
  check_rank("matmul (lhs)", a, 2);
  check_rank("matmul (rhs)", b, 2);
  const Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw std::invalid_argument("matmul: inner dims differ " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  Tensor y(Shape{m, n});
  y.matrix(m, n).noalias() = a.value().matrix(m, k) * b.value().matrix(k, n);
  return make_op("matmul", std::move(y), {a, b}, [a, b](const Var& g) {
    return std::vector<Var>{matmul(g, transpose2d(b)), matmul(transpose2d(a), g)};
  });
}

Var conv2d(const Var& x, const Var& w, const kernels::ConvGeom& g) {
  Tensor y = kernels::conv2d_fwd(x.value(), w.value(), g);
  return make_op("conv2d", std::move(y), {x, w},
                 [x, w, g, xshape = x.shape(), ws = w.shape()](const Var& u) {
                   return std::vector<Var>{
                       conv2d_input_grad(u, w, xshape, g),
                       conv2d_weight_grad(x, u, ws[0], ws[1], g)};
                 });
}

Var conv2d_input_grad(const Var& gy, const Var& w, Shape xshape, const kernels::ConvGeom& g) {
  Tensor y = kernels::conv2d_dx(gy.value(), w.value(), xshape, g);
  return make_op("conv2d_input_grad", std::move(y), {gy, w},
                 [gy, w, g, ws = w.shape()](const Var& u) {
                   return std::vector<Var>{
                       conv2d(u, w, g), conv2d_weight_grad(u, gy, ws[0], ws[1], g)};
                 });
}

Var conv2d_weight_grad(const Var& x, const Var& gy, Index kh, Index kw,
                       const kernels::ConvGeom& g) {
  Tensor y = kernels::conv2d_dw(x.value(), gy.value(), kh, kw, g);
  return make_op("conv2d_weight_grad", std::move(y), {x, gy},
                 [x, gy, g, xshape = x.shape()](const Var& u) {
                   return std::vector<Var>{conv2d_input_grad(gy, u, xshape, g),
                                           conv2d(x, u, g)};
                 });
}

Var upsample2(const Var& x) {
  check_rank("upsample2", x, 4);
  return make_op("upsample2", kernels::upsample2(x.value()), {x},
                 [](const Var& g) { return std::vector<Var>{sumpool2(g)}; });
}

Var sumpool2(const Var& x) {
  check_rank("sumpool2", x, 4);
  return make_op("sumpool2", kernels::sumpool2(x.value()), {x},
                 [](const Var& g) { return std::vector<Var>{upsample2(g)}; });
}

Var pad_spatial(const Var& x, Index top, Index bottom, Index left, Index right) {
  check_rank("pad_spatial", x, 4);
  return make_op("pad_spatial", kernels::pad_spatial(x.value(), top, bottom, left, right), {x},
                 [=](const Var& g) {
                   return std::vector<Var>{crop_spatial(g, top, bottom, left, right)};
                 });
}

Var crop_spatial(const Var& x, Index top, Index bottom, Index left, Index right) {
  check_rank("crop_spatial", x, 4);
  return make_op("crop_spatial", kernels::crop_spatial(x.value(), top, bottom, left, right), {x},
                 [=](const Var& g) {
                   return std::vector<Var>{pad_spatial(g, top, bottom, left, right)};
                 });
}

Var mean_all(const Var& x) { return mul_scalar(sum_all(x), 1.0 / (Real)x.numel()); }

Var mean_lastdim(const Var& x) {
  return mul_scalar(sum_lastdim(x), 1.0 / (Real)x.shape().back());
}

Var mean_leading(const Var& x) {
  const Index rows = x.numel() / x.shape().back();
  return mul_scalar(sum_leading(x), 1.0 / (Real)rows);
}

Var log_softmax_lastdim(const Var& x) {
  const Index d = x.shape().back();
  Var xc = sub(x, broadcast_lastdim(max_lastdim(x), d));
  Var lse = log(sum_lastdim(exp(xc)));
  return sub(xc, broadcast_lastdim(lse, d));
}

Var softmax_lastdim(const Var& x) { return exp(log_softmax_lastdim(x)); }

Var softplus(const Var& x) {
  return add(relu(x), log(add_scalar(exp(neg(abs(x))), 1.0)));
}

}  // namespace tpgan::nn
