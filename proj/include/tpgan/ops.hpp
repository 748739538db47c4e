#pragma once

#include <vector>

#include "tpgan/autodiff.hpp"
#include "tpgan/kernels.hpp"
#include "tpgan/tensor.hpp"

// Differentiable primitives. Every VJP is itself built from these primitives,
// so gradients can be differentiated again (exact second-order gradients).
// Shapes are strict: broadcasts are explicit ops, never implicit.
namespace tpgan::nn {

Var constant(Tensor t);
Var constant_scalar(Real v);

// elementwise, same shape
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var neg(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var sqrt(const Var& x);
Var square(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var abs(const Var& x);
Var relu(const Var& x);
Var leaky_relu(const Var& x, Real slope);
Var clamp_min(const Var& x, Real lo);

Var add_scalar(const Var& x, Real s);
Var mul_scalar(const Var& x, Real s);

// reductions and their broadcast adjoints
Var sum_all(const Var& x);                         // [...] -> [1]
Var broadcast_all(const Var& x, Shape shape);      // [1] -> shape
Var sum_lastdim(const Var& x);                     // [..., D] -> [..., 1]
Var broadcast_lastdim(const Var& x, Index d);      // [..., 1] -> [..., d]
Var max_lastdim(const Var& x);                     // [..., D] -> [..., 1]
Var sum_leading(const Var& x);                     // [..., C] -> [C]
Var broadcast_leading(const Var& x, Shape shape);  // [C] -> [..., C]
Var sum_spatial(const Var& x);                     // [N,H,W,C] -> [N,C]
Var replicate_spatial(const Var& x, Index h, Index w);  // [N,C] -> [N,h,w,C]
Var scale_rows(const Var& x, const Var& s);        // x[n,...] * s[n]
Var rows_dot(const Var& a, const Var& b);          // [N,...],[N,...] -> [N]

// shape and indexing
Var reshape(const Var& x, Shape shape);
Var transpose2d(const Var& x);
Var concat_lastdim(const Var& a, const Var& b);
Var slice_lastdim(const Var& x, Index from, Index to);
Var pad_lastdim(const Var& x, Index before, Index after);
Var take_rows(const Var& x, std::vector<Index> idx);
Var scatter_rows(const Var& x, std::vector<Index> idx, Index nrows);

Var matmul(const Var& a, const Var& b);  // [m,k] x [k,n]

// convolution family; the three ops are each other's adjoints
Var conv2d(const Var& x, const Var& w, const kernels::ConvGeom& g);
Var conv2d_input_grad(const Var& gy, const Var& w, Shape xshape, const kernels::ConvGeom& g);
Var conv2d_weight_grad(const Var& x, const Var& gy, Index kh, Index kw,
                       const kernels::ConvGeom& g);

Var upsample2(const Var& x);
Var sumpool2(const Var& x);
Var pad_spatial(const Var& x, Index top, Index bottom, Index left, Index right);
Var crop_spatial(const Var& x, Index top, Index bottom, Index left, Index right);

// composed helpers (no new primitives)
Var mean_all(const Var& x);
Var mean_lastdim(const Var& x);
Var mean_leading(const Var& x);
Var log_softmax_lastdim(const Var& x);
Var softmax_lastdim(const Var& x);
Var softplus(const Var& x);

}  // namespace tpgan::nn
