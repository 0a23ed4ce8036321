#pragma once

// Plain scalar reference implementations used to check the library. They work
// on flat std::vector<double> buffers and share no code with src/.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline double norm_to_pixel(double g, int extent) { return (g + 1.0) * 0.5 * (extent - 1); }

// Bilinear lookup with border replication. img is h x w row-major.
inline double lookup(const Vec& img, int h, int w, double gx, double gy) {
  double px = std::clamp(norm_to_pixel(gx, w), 0.0, w - 1.0);
  double py = std::clamp(norm_to_pixel(gy, h), 0.0, h - 1.0);
  int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
  int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  double ax = px - x0, ay = py - y0;
  auto v = [&](int y, int x) { return img[y * w + x]; };
  return v(y0, x0) * (1 - ax) * (1 - ay) + v(y0, x1) * ax * (1 - ay) + v(y1, x0) * (1 - ax) * ay +
         v(y1, x1) * ax * ay;
}

// src: n x c x hs x ws, grid: n x ho x wo x 2 -> n x c x ho x wo.
inline Vec sample(const Vec& src, int n, int c, int hs, int ws, const Vec& grid, int ho, int wo) {
  Vec out(static_cast<std::size_t>(n) * c * ho * wo);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      Vec plane(src.begin() + (static_cast<std::size_t>(b) * c + ch) * hs * ws,
                src.begin() + (static_cast<std::size_t>(b) * c + ch + 1) * hs * ws);
      for (int i = 0; i < ho; ++i)
        for (int j = 0; j < wo; ++j) {
          const std::size_t g = ((static_cast<std::size_t>(b) * ho + i) * wo + j) * 2;
          out[((static_cast<std::size_t>(b) * c + ch) * ho + i) * wo + j] =
              lookup(plane, hs, ws, grid[g], grid[g + 1]);
        }
    }
  return out;
}

// dx, dy: n x h x w -> grid n x h x w x 2 anchored at (-1, -1).
inline Vec integrate(const Vec& dx, const Vec& dy, int n, int h, int w) {
  Vec grid(static_cast<std::size_t>(n) * h * w * 2);
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double sx = -1.0, sy = -1.0;
        for (int k = 0; k < j; ++k) sx += dx[(static_cast<std::size_t>(b) * h + i) * w + k];
        for (int k = 0; k < i; ++k) sy += dy[(static_cast<std::size_t>(b) * h + k) * w + j];
        const std::size_t g = ((static_cast<std::size_t>(b) * h + i) * w + j) * 2;
        grid[g] = sx;
        grid[g + 1] = sy;
      }
  return grid;
}

// theta: 6 values per item; grid n x h x w x 2.
inline Vec compose(const Vec& thetas, const Vec& grid, int n, int h, int w) {
  Vec out(grid.size());
  for (int b = 0; b < n; ++b) {
    const double* t = &thetas[static_cast<std::size_t>(b) * 6];
    for (int p = 0; p < h * w; ++p) {
      const std::size_t g = (static_cast<std::size_t>(b) * h * w + p) * 2;
      out[g] = t[0] * grid[g] + t[1] * grid[g + 1] + t[2];
      out[g + 1] = t[3] * grid[g] + t[4] * grid[g + 1] + t[5];
    }
  }
  return out;
}

inline double mse(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / a.size();
}

// Anisotropic l1 total variation of n maps of h x w, summed.
inline double tv_sum(const Vec& m, int n, int h, int w) {
  double s = 0;
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double v = m[(static_cast<std::size_t>(b) * h + i) * w + j];
        if (j + 1 < w) s += std::fabs(m[(static_cast<std::size_t>(b) * h + i) * w + j + 1] - v);
        if (i + 1 < h) s += std::fabs(m[(static_cast<std::size_t>(b) * h + i + 1) * w + j] - v);
      }
  return s;
}

// Squared forward differences summed over n*c maps of h x w.
inline double grad_sq_sum(const Vec& m, int maps, int h, int w) {
  double s = 0;
  for (int b = 0; b < maps; ++b)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double v = m[(static_cast<std::size_t>(b) * h + i) * w + j];
        if (j + 1 < w) s += std::pow(m[(static_cast<std::size_t>(b) * h + i) * w + j + 1] - v, 2);
        if (i + 1 < h) s += std::pow(m[(static_cast<std::size_t>(b) * h + i + 1) * w + j] - v, 2);
      }
  return s;
}

// Mean-reduced bias penalty: affine term over n*6, field term over h*w*2.
inline double bias_reduce(const Vec& thetas, const Vec& grids, int n, int h, int w, double l2, double l2p) {
  const double id[6] = {1, 0, 0, 0, 1, 0};
  double a = 0;
  for (int b = 0; b < n; ++b)
    for (int k = 0; k < 6; ++k) a += std::pow(thetas[b * 6 + k] - id[k], 2);
  double f = 0;
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double mx = 0, my = 0;
      for (int b = 0; b < n; ++b) {
        mx += grids[((static_cast<std::size_t>(b) * h + i) * w + j) * 2] / n;
        my += grids[((static_cast<std::size_t>(b) * h + i) * w + j) * 2 + 1] / n;
      }
      f += std::pow(mx - (-1.0 + 2.0 * j / (w - 1)), 2) + std::pow(my - (-1.0 + 2.0 * i / (h - 1)), 2);
    }
  return l2 * a / (n * 6.0) + l2p * f / (h * w * 2.0);
}

// Central finite differences of f at x, one coordinate at a time.
inline Vec numeric_gradient(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-4) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Largest elementwise relative error, with `floor` guarding near-zero entries.
inline double max_relative_error(const Vec& a, const Vec& b, double floor = 1e-6) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
    worst = std::max(worst, std::fabs(a[i] - b[i]) / scale);
  }
  return worst;
}

// ||a - b|| / max(||a||, ||b||); tolerant of isolated kink crossings.
inline double norm_relative_error(const Vec& a, const Vec& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::fabs(a[i] - b[i]));
  return worst;
}

inline Vec uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Vec v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Normalized coordinates whose pixel positions stay at least `margin` pixels
// away from integer knots, so bilinear sampling is smooth around them.
inline Vec smooth_coords(std::mt19937_64& rng, std::size_t n, int extent, double margin = 0.05) {
  std::uniform_int_distribution<int> cell(0, extent - 2);
  std::uniform_real_distribution<double> frac(margin, 1.0 - margin);
  Vec v(n);
  for (auto& x : v) x = -1.0 + 2.0 * (cell(rng) + frac(rng)) / (extent - 1);
  return v;
}

}  // namespace oracle
