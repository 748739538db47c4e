#include "tpgan/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace tpgan::img {

namespace {

unsigned char to_byte(Real v) {
  const Real t = (std::clamp(v, Real(-1), Real(1)) + 1.0) * 0.5 * 255.0;
  return (unsigned char)std::lround(t);
}

Real to_real(unsigned char b) { return (Real)b / 255.0 * 2.0 - 1.0; }

}  // namespace

Tensor load_png(const std::string& path) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&pi, path.c_str()))
    throw std::runtime_error("failed to open PNG '" + path + "': " + pi.message);
  pi.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf((size_t)PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = pi.message;
    png_image_free(&pi);
    throw std::runtime_error("failed to read PNG '" + path + "': " + msg);
  }
  const Index h = pi.height, w = pi.width;
  Tensor t(Shape{h, w, 3});
  for (Index i = 0; i < h * w * 3; ++i) t[i] = to_real(buf[(size_t)i]);
  return t;
}

void save_png(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || image.shape()[2] != 3)
    throw std::invalid_argument("save_png: expected H×W×3 image, got " + shape_str(image.shape()));
  const Index h = image.shape()[0], w = image.shape()[1];
  std::vector<unsigned char> buf((size_t)(h * w * 3));
  for (Index i = 0; i < h * w * 3; ++i) buf[(size_t)i] = to_byte(image[i]);
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = (png_uint_32)w;
  pi.height = (png_uint_32)h;
  pi.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&pi, path.c_str(), 0, buf.data(), 0, nullptr))
    throw std::runtime_error("failed to write PNG '" + path + "': " + pi.message);
}

void save_png_grid(const std::string& path, const Tensor& batch, Index cols) {
  if (batch.ndim() != 4 || batch.shape()[3] != 3)
    throw std::invalid_argument("save_png_grid: expected N×H×W×3 batch");
  const Index n = batch.shape()[0], h = batch.shape()[1], w = batch.shape()[2];
  cols = std::max<Index>(1, std::min(cols, n));
  const Index rows = (n + cols - 1) / cols;
  const Index pad = 2;
  Tensor grid = Tensor::full({rows * (h + pad) + pad, cols * (w + pad) + pad, 3}, 1.0);
  for (Index i = 0; i < n; ++i) {
    const Index gy = (i / cols) * (h + pad) + pad;
    const Index gx = (i % cols) * (w + pad) + pad;
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        for (Index c = 0; c < 3; ++c)
          grid.at(gy + y, gx + x, c) = batch.at(i, y, x, c);
  }
  save_png(path, grid);
}

Tensor resize_bilinear(const Tensor& image, Index out_h, Index out_w) {
  if (image.ndim() != 3) throw std::invalid_argument("resize: expected H×W×C image");
  const Index h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
  if (h == out_h && w == out_w) return image;
  Tensor out(Shape{out_h, out_w, c});
  const Real sy = (Real)h / (Real)out_h, sx = (Real)w / (Real)out_w;
  for (Index oy = 0; oy < out_h; ++oy) {
    const Real fy = ((Real)oy + 0.5) * sy - 0.5;
    const Index y0 = std::clamp<Index>((Index)std::floor(fy), 0, h - 1);
    const Index y1 = std::min<Index>(y0 + 1, h - 1);
    const Real wy = std::clamp<Real>(fy - (Real)y0, 0.0, 1.0);
    for (Index ox = 0; ox < out_w; ++ox) {
      const Real fx = ((Real)ox + 0.5) * sx - 0.5;
      const Index x0 = std::clamp<Index>((Index)std::floor(fx), 0, w - 1);
      const Index x1 = std::min<Index>(x0 + 1, w - 1);
      const Real wx = std::clamp<Real>(fx - (Real)x0, 0.0, 1.0);
      for (Index ic = 0; ic < c; ++ic) {
        const Real top = image.at(y0, x0, ic) * (1 - wx) + image.at(y0, x1, ic) * wx;
        const Real bot = image.at(y1, x0, ic) * (1 - wx) + image.at(y1, x1, ic) * wx;
        out.at(oy, ox, ic) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

}  // namespace tpgan::img
