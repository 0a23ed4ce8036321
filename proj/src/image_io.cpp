#include "dae/image_io.hpp"

#include <algorithm>
#include <filesystem>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace dae {
namespace {

cv::Mat to_mat(const Tensor& images, int index) {
  const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (c != 1 && c != 3) throw InvalidInput("image grids need 1 or 3 channels, got " + std::to_string(c));
  cv::Mat out(h, w, CV_8UC3);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      auto& px = out.at<cv::Vec3b>(i, j);
      for (int ch = 0; ch < 3; ++ch) {
        const float v = images.at(index, c == 1 ? 0 : ch, i, j);
        // OpenCV stores BGR.
        px[2 - ch] = static_cast<unsigned char>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
      }
    }
  }
  return out;
}

void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

void write(const std::string& path, const cv::Mat& mat) {
  ensure_parent(path);
  if (!cv::imwrite(path, mat)) throw std::runtime_error("cannot write image " + path);
}

}  // namespace

void write_grid_png(const std::string& path, const std::vector<GridRow>& rows, int scale) {
  if (rows.empty()) throw InvalidInput("write_grid_png: no rows");
  const int h = rows.front().images.dim(2), w = rows.front().images.dim(3);
  int columns = 0;
  for (const auto& r : rows) {
    if (r.images.rank() != 4 || r.images.dim(2) != h || r.images.dim(3) != w) {
      throw InvalidInput("write_grid_png: row '" + r.label + "' has a different image size");
    }
    columns = std::max(columns, r.images.dim(0));
  }
  const int cell_h = h * scale, cell_w = w * scale, pad = 2;
  int label_w = 0;
  for (const auto& r : rows) {
    int base = 0;
    label_w = std::max(label_w, cv::getTextSize(r.label, cv::FONT_HERSHEY_SIMPLEX, 0.4, 1, &base).width + 8);
  }
  const int width = label_w + columns * (cell_w + pad) + pad;
  const int height = static_cast<int>(rows.size()) * (cell_h + pad) + pad;
  cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int top = pad + static_cast<int>(r) * (cell_h + pad);
    cv::putText(canvas, rows[r].label, {4, top + cell_h / 2 + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, {0, 0, 0}, 1,
                cv::LINE_AA);
    for (int k = 0; k < rows[r].images.dim(0); ++k) {
      cv::Mat cell;
      cv::resize(to_mat(rows[r].images, k), cell, {cell_w, cell_h}, 0, 0, cv::INTER_NEAREST);
      cell.copyTo(canvas(cv::Rect(label_w + pad + k * (cell_w + pad), top, cell_w, cell_h)));
    }
  }
  write(path, canvas);
}

void write_png(const std::string& path, const Tensor& image) { write(path, to_mat(image, 0)); }

Tensor tile(const Tensor& images, int columns) {
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  columns = std::max(1, std::min(columns, n));
  const int rows = (n + columns - 1) / columns;
  Tensor out({1, c, rows * h, columns * w});
  for (int b = 0; b < n; ++b) {
    const int oy = (b / columns) * h, ox = (b % columns) * w;
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) out.at(0, ch, oy + i, ox + j) = images.at(b, ch, i, j);
      }
    }
  }
  return out;
}

}  // namespace dae
