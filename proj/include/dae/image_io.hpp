#pragma once

#include <string>
#include <vector>

#include "dae/tensor.hpp"

namespace dae {

/// One labelled row of a figure grid: N x C x H x W images in [0, 1], C = 1 or 3 (RGB).
struct GridRow {
  std::string label;
  Tensor images;
};

/// Lays the rows out top to bottom with a text label column on the left and
/// writes a PNG. Rows may hold different numbers of images but share H x W.
void write_grid_png(const std::string& path, const std::vector<GridRow>& rows, int scale = 2);

/// Writes a single 1 x C x H x W image.
void write_png(const std::string& path, const Tensor& image);

/// Square-ish tiling of N images into one (1 x C x rows*H x cols*W) image.
Tensor tile(const Tensor& images, int columns);

}  // namespace dae
