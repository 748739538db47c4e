#pragma once

#include <stdexcept>

#include "tpgan/tensor.hpp"

// Raw numeric kernels shared by forward ops and their adjoints. All image
// tensors are NHWC. Convolutions are cross-correlations (no kernel flip),
// lowered to a single whole-batch im2col buffer plus one Eigen GEMM, which
// keeps them deterministic on a single thread.
namespace tpgan::kernels {

struct ConvGeom {
  Index stride = 1;
  Index pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;

  Index out_h(Index in_h, Index kh) const {
    Index span = in_h + pad_top + pad_bottom - kh;
    if (span < 0 || span % stride != 0)
      throw std::invalid_argument("conv geometry does not tile the input height");
    return span / stride + 1;
  }
  Index out_w(Index in_w, Index kw) const {
    Index span = in_w + pad_left + pad_right - kw;
    if (span < 0 || span % stride != 0)
      throw std::invalid_argument("conv geometry does not tile the input width");
    return span / stride + 1;
  }
  static ConvGeom same3() { return ConvGeom{1, 1, 1, 1, 1}; }
  static ConvGeom down4() { return ConvGeom{2, 1, 1, 1, 1}; }
  static ConvGeom valid(Index stride = 1) { return ConvGeom{stride, 0, 0, 0, 0}; }
};

// Patch matrix of x: one row per output pixel, kh*kw*C columns.
template <typename S>
void im2col(const TensorT<S>& x, Index kh, Index kw, const ConvGeom& g,
            Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols) {
  const Shape& xs = x.shape();
  const Index n = xs[0], h = xs[1], w = xs[2], c = xs[3];
  const Index oh = g.out_h(h, kh), ow = g.out_w(w, kw);
  cols.setZero(n * oh * ow, kh * kw * c);
  const S* xp = x.data();
  for (Index in = 0; in < n; ++in) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        S* row = cols.row((in * oh + oy) * ow + ox).data();
        for (Index ky = 0; ky < kh; ++ky) {
          const Index iy = oy * g.stride + ky - g.pad_top;
          if (iy < 0 || iy >= h) continue;
          for (Index kx = 0; kx < kw; ++kx) {
            const Index ix = ox * g.stride + kx - g.pad_left;
            if (ix < 0 || ix >= w) continue;
            const S* src = xp + ((in * h + iy) * w + ix) * c;
            S* dst = row + (ky * kw + kx) * c;
            for (Index ic = 0; ic < c; ++ic) dst[ic] = src[ic];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add patch rows back into image positions.
template <typename S>
void col2im(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols,
            Index kh, Index kw, const ConvGeom& g, TensorT<S>& x) {
  const Shape& xs = x.shape();
  const Index n = xs[0], h = xs[1], w = xs[2], c = xs[3];
  const Index oh = g.out_h(h, kh), ow = g.out_w(w, kw);
  x.array().setZero();
  S* xp = x.data();
  for (Index in = 0; in < n; ++in) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        const S* row = cols.row((in * oh + oy) * ow + ox).data();
        for (Index ky = 0; ky < kh; ++ky) {
          const Index iy = oy * g.stride + ky - g.pad_top;
          if (iy < 0 || iy >= h) continue;
          for (Index kx = 0; kx < kw; ++kx) {
            const Index ix = ox * g.stride + kx - g.pad_left;
            if (ix < 0 || ix >= w) continue;
            S* dst = xp + ((in * h + iy) * w + ix) * c;
            const S* src = row + (ky * kw + kx) * c;
            for (Index ic = 0; ic < c; ++ic) dst[ic] += src[ic];
          }
        }
      }
    }
  }
}

// x: [N,H,W,Ci], w: [KH,KW,Ci,Co] -> [N,OH,OW,Co]
template <typename S>
TensorT<S> conv2d_fwd(const TensorT<S>& x, const TensorT<S>& w, const ConvGeom& g) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4)
    throw std::invalid_argument("conv2d: rank-4 input and kernel expected");
  if (xs[3] != ws[2]) throw std::invalid_argument("conv2d: channel mismatch");
  const Index kh = ws[0], kw = ws[1], co = ws[3];
  const Index n = xs[0], oh = g.out_h(xs[1], kh), ow = g.out_w(xs[2], kw);
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols;
  im2col(x, kh, kw, g, cols);
  TensorT<S> y(Shape{n, oh, ow, co});
  auto wm = w.matrix(kh * kw * ws[2], co);
  y.matrix(n * oh * ow, co).noalias() = cols * wm;
  return y;
}

// Gradient of conv2d_fwd w.r.t. x, given upstream gy: [N,OH,OW,Co] -> x shape.
template <typename S>
TensorT<S> conv2d_dx(const TensorT<S>& gy, const TensorT<S>& w, const Shape& xshape,
                     const ConvGeom& g) {
  const Shape& ws = w.shape();
  const Index kh = ws[0], kw = ws[1], ci = ws[2], co = ws[3];
  const Shape& gs = gy.shape();
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols(
      gs[0] * gs[1] * gs[2], kh * kw * ci);
  cols.noalias() = gy.matrix(gs[0] * gs[1] * gs[2], co) * w.matrix(kh * kw * ci, co).transpose();
  TensorT<S> dx(xshape);
  col2im(cols, kh, kw, g, dx);
  return dx;
}

// Gradient of conv2d_fwd w.r.t. w: [KH,KW,Ci,Co].
template <typename S>
TensorT<S> conv2d_dw(const TensorT<S>& x, const TensorT<S>& gy, Index kh, Index kw,
                     const ConvGeom& g) {
  const Shape& xs = x.shape();
  const Shape& gs = gy.shape();
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols;
  im2col(x, kh, kw, g, cols);
  TensorT<S> dw(Shape{kh, kw, xs[3], gs[3]});
  dw.matrix(kh * kw * xs[3], gs[3]).noalias() =
      cols.transpose() * gy.matrix(gs[0] * gs[1] * gs[2], gs[3]);
  return dw;
}

// Nearest-neighbour x2 upsampling, NHWC.
template <typename S>
TensorT<S> upsample2(const TensorT<S>& x) {
  const Shape& xs = x.shape();
  const Index n = xs[0], h = xs[1], w = xs[2], c = xs[3];
  TensorT<S> y(Shape{n, 2 * h, 2 * w, c});
  const S* xp = x.data();
  S* yp = y.data();
  for (Index in = 0; in < n; ++in)
    for (Index iy = 0; iy < 2 * h; ++iy)
      for (Index ix = 0; ix < 2 * w; ++ix) {
        const S* src = xp + ((in * h + iy / 2) * w + ix / 2) * c;
        S* dst = yp + ((in * 2 * h + iy) * 2 * w + ix) * c;
        for (Index ic = 0; ic < c; ++ic) dst[ic] = src[ic];
      }
  return y;
}

// Adjoint of upsample2: sum each 2x2 block.
template <typename S>
TensorT<S> sumpool2(const TensorT<S>& x) {
  const Shape& xs = x.shape();
  if (xs[1] % 2 != 0 || xs[2] % 2 != 0)
    throw std::invalid_argument("sumpool2: spatial dims must be even");
  const Index n = xs[0], h = xs[1] / 2, w = xs[2] / 2, c = xs[3];
  TensorT<S> y = TensorT<S>::zeros(Shape{n, h, w, c});
  const S* xp = x.data();
  S* yp = y.data();
  for (Index in = 0; in < n; ++in)
    for (Index iy = 0; iy < 2 * h; ++iy)
      for (Index ix = 0; ix < 2 * w; ++ix) {
        const S* src = xp + ((in * 2 * h + iy) * 2 * w + ix) * c;
        S* dst = yp + ((in * h + iy / 2) * w + ix / 2) * c;
        for (Index ic = 0; ic < c; ++ic) dst[ic] += src[ic];
      }
  return y;
}

// Area-average downsample by an integer factor (used to build image pyramids).
template <typename S>
TensorT<S> downsample_area(const TensorT<S>& x, Index factor) {
  const Shape& xs = x.shape();
  if (factor < 1 || xs[1] % factor != 0 || xs[2] % factor != 0)
    throw std::invalid_argument("downsample_area: factor must divide spatial dims");
  const Index n = xs[0], h = xs[1] / factor, w = xs[2] / factor, c = xs[3];
  TensorT<S> y = TensorT<S>::zeros(Shape{n, h, w, c});
  const S* xp = x.data();
  S* yp = y.data();
  const S inv = S(1) / S(factor * factor);
  for (Index in = 0; in < n; ++in)
    for (Index iy = 0; iy < xs[1]; ++iy)
      for (Index ix = 0; ix < xs[2]; ++ix) {
        const S* src = xp + ((in * xs[1] + iy) * xs[2] + ix) * c;
        S* dst = yp + ((in * h + iy / factor) * w + ix / factor) * c;
        for (Index ic = 0; ic < c; ++ic) dst[ic] += src[ic] * inv;
      }
  return y;
}

// Zero padding on spatial dims (adjoint is crop_spatial with same extents).
template <typename S>
TensorT<S> pad_spatial(const TensorT<S>& x, Index top, Index bottom, Index left, Index right) {
  const Shape& xs = x.shape();
  const Index n = xs[0], h = xs[1], w = xs[2], c = xs[3];
  TensorT<S> y = TensorT<S>::zeros(Shape{n, h + top + bottom, w + left + right, c});
  const S* xp = x.data();
  S* yp = y.data();
  const Index wy = w + left + right, hy = h + top + bottom;
  for (Index in = 0; in < n; ++in)
    for (Index iy = 0; iy < h; ++iy) {
      const S* src = xp + ((in * h + iy) * w) * c;
      S* dst = yp + ((in * hy + iy + top) * wy + left) * c;
      for (Index k = 0; k < w * c; ++k) dst[k] = src[k];
    }
  return y;
}

template <typename S>
TensorT<S> crop_spatial(const TensorT<S>& x, Index top, Index bottom, Index left, Index right) {
  const Shape& xs = x.shape();
  const Index n = xs[0], h = xs[1] - top - bottom, w = xs[2] - left - right, c = xs[3];
  if (h <= 0 || w <= 0) throw std::invalid_argument("crop_spatial: crop exceeds extent");
  TensorT<S> y(Shape{n, h, w, c});
  const S* xp = x.data();
  S* yp = y.data();
  for (Index in = 0; in < n; ++in)
    for (Index iy = 0; iy < h; ++iy) {
      const S* src = xp + ((in * xs[1] + iy + top) * xs[2] + left) * c;
      S* dst = yp + ((in * h + iy) * w) * c;
      for (Index k = 0; k < w * c; ++k) dst[k] = src[k];
    }
  return y;
}

}  // namespace tpgan::kernels
