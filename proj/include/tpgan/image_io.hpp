#pragma once

#include <string>

#include "tpgan/tensor.hpp"

// PNG import/export for H×W×3 tensors with values in [-1, 1].
namespace tpgan::img {

Tensor load_png(const std::string& path);
void save_png(const std::string& path, const Tensor& image);

// Tile a batch [N,H,W,3] into a grid montage with `cols` images per row.
void save_png_grid(const std::string& path, const Tensor& batch, Index cols);

// General resize (bilinear, stretches to the target aspect).
Tensor resize_bilinear(const Tensor& image, Index out_h, Index out_w);

}  // namespace tpgan::img
