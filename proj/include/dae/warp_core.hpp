#pragma once

// Deformation fields: construction from clamped increments, affine composition
// and differentiable bilinear resampling.
//
// Coordinates are normalized to [-1, 1] per axis with corner alignment:
// pixel column j of a W-wide image sits at x = -1 + 2j/(W-1).
// A WarpField stores, for each output pixel p, the location W(p) at which the
// source (template) image is looked up.

#include <array>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dae/tensor.hpp"

namespace dae {

/// Upper bound of a decoded increment: 5 pixels' worth over a w-pixel side.
template <typename T = float>
constexpr T max_increment(int side) {
  return T(5) / T(side);
}

/// Increment between neighbouring pixels of the identity grid.
template <typename T = float>
constexpr T identity_increment(int side) {
  return T(2) / T(side - 1);
}

template <typename T>
struct BasicAffineParams {
  // Row-major 2x3 matrix [a b tx; c d ty].
  std::array<T, 6> theta{T(1), T(0), T(0), T(0), T(1), T(0)};

  static BasicAffineParams identity() { return {}; }

  T map_x(T x, T y) const { return theta[0] * x + theta[1] * y + theta[2]; }
  T map_y(T x, T y) const { return theta[3] * x + theta[4] * y + theta[5]; }

  bool finite() const {
    for (T v : theta) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const BasicAffineParams&, const BasicAffineParams&) = default;
};

/// Per-pixel horizontal (dx) and vertical (dy) increments, each N x H x W.
template <typename T>
struct BasicDifferentialWarp {
  BasicTensor<T> dx;
  BasicTensor<T> dy;

  int batch() const { return dx.dim(0); }
  int height() const { return dx.dim(1); }
  int width() const { return dx.dim(2); }
};

/// Absolute sampling grid, N x H x W x 2 with (x, y) in the last axis.
template <typename T>
struct BasicWarpField {
  BasicTensor<T> grid;

  BasicWarpField() = default;
  explicit BasicWarpField(BasicTensor<T> g) : grid(std::move(g)) {
    if (grid.rank() != 4 || grid.dim(3) != 2) {
      throw InvalidInput("WarpField expects N x H x W x 2, got " + shape_string(grid.shape()));
    }
  }
  BasicWarpField(int n, int h, int w) : grid({n, h, w, 2}) {}

  int batch() const { return grid.dim(0); }
  int height() const { return grid.dim(1); }
  int width() const { return grid.dim(2); }

  T& x(int n, int i, int j) { return grid.at(n, i, j, 0); }
  T& y(int n, int i, int j) { return grid.at(n, i, j, 1); }
  T x(int n, int i, int j) const { return grid.at(n, i, j, 0); }
  T y(int n, int i, int j) const { return grid.at(n, i, j, 1); }

  BasicWarpField sample(int n) const { return BasicWarpField(grid.rows(n, n + 1)); }
};

using AffineParams = BasicAffineParams<float>;
using DifferentialWarp = BasicDifferentialWarp<float>;
using WarpField = BasicWarpField<float>;

template <typename T>
T identity_coordinate(int index, int extent) {
  return extent > 1 ? static_cast<T>(-1.0 + 2.0 * index / (extent - 1)) : T(0);
}

/// W_0: grid[n, i, j] = (-1 + 2j/(W-1), -1 + 2i/(H-1)).
template <typename T = float>
BasicWarpField<T> identity_field(int n, int h, int w) {
  BasicWarpField<T> f(n, h, w);
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        f.x(b, i, j) = identity_coordinate<T>(j, w);
        f.y(b, i, j) = identity_coordinate<T>(i, h);
      }
    }
  }
  return f;
}

/// HardTanh_{0,delta}: raw decoder output (N x 2 x H x W, channel 0 = dx) to increments.
template <typename T>
BasicDifferentialWarp<T> clamp_increments(const BasicTensor<T>& raw, T delta) {
  if (raw.rank() != 4 || raw.dim(1) != 2) {
    throw InvalidInput("clamp_increments expects N x 2 x H x W, got " + shape_string(raw.shape()));
  }
  if (!raw.all_finite()) throw InvalidInput("clamp_increments: non-finite decoder output");
  const int n = raw.dim(0), h = raw.dim(2), w = raw.dim(3);
  BasicDifferentialWarp<T> d{BasicTensor<T>({n, h, w}), BasicTensor<T>({n, h, w})};
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    const T* src = raw.data() + static_cast<std::size_t>(b) * 2 * plane;
    T* dx = d.dx.data() + b * plane;
    T* dy = d.dy.data() + b * plane;
    for (std::size_t k = 0; k < plane; ++k) {
      dx[k] = std::min(std::max(src[k], T(0)), delta);
      dy[k] = std::min(std::max(src[plane + k], T(0)), delta);
    }
  }
  return d;
}

template <typename T>
BasicDifferentialWarp<T> clamp_increments(const BasicTensor<T>& raw) {
  return clamp_increments(raw, max_increment<T>(raw.dim(3)));
}

/// Gradient of clamp_increments; passes through where 0 < raw < delta.
template <typename T>
BasicTensor<T> clamp_increments_backward(const BasicTensor<T>& raw, const BasicDifferentialWarp<T>& grad,
                                         T delta) {
  BasicTensor<T> out(raw.shape());
  const int n = raw.dim(0);
  const std::size_t plane = static_cast<std::size_t>(raw.dim(2)) * raw.dim(3);
  for (int b = 0; b < n; ++b) {
    const T* src = raw.data() + static_cast<std::size_t>(b) * 2 * plane;
    T* dst = out.data() + static_cast<std::size_t>(b) * 2 * plane;
    for (std::size_t k = 0; k < plane; ++k) {
      const T rx = src[k], ry = src[plane + k];
      dst[k] = (rx > T(0) && rx < delta) ? grad.dx[b * plane + k] : T(0);
      dst[plane + k] = (ry > T(0) && ry < delta) ? grad.dy[b * plane + k] : T(0);
    }
  }
  return out;
}

/// Spatial integration: grid_x[i,j] = -1 + sum_{k<j} dx[i,k], grid_y[i,j] = -1 + sum_{k<i} dy[k,j].
/// The first column/row is anchored at -1, so uniform increments 2/(W-1) give W_0.
template <typename T>
BasicWarpField<T> integrate(const BasicDifferentialWarp<T>& d) {
  if (d.dx.rank() != 3 || !d.dx.same_shape(d.dy)) {
    throw InvalidInput("integrate: dx/dy must both be N x H x W");
  }
  const int n = d.batch(), h = d.height(), w = d.width();
  BasicWarpField<T> f(n, h, w);
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < h; ++i) {
      T acc = T(-1);
      for (int j = 0; j < w; ++j) {
        f.x(b, i, j) = acc;
        acc += d.dx.at(b, i, j);
      }
    }
    for (int j = 0; j < w; ++j) {
      T acc = T(-1);
      for (int i = 0; i < h; ++i) {
        f.y(b, i, j) = acc;
        acc += d.dy.at(b, i, j);
      }
    }
  }
  return f;
}

/// Adjoint of integrate: suffix sums of the field gradient.
template <typename T>
BasicDifferentialWarp<T> integrate_backward(const BasicWarpField<T>& grad) {
  const int n = grad.batch(), h = grad.height(), w = grad.width();
  BasicDifferentialWarp<T> d{BasicTensor<T>({n, h, w}), BasicTensor<T>({n, h, w})};
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < h; ++i) {
      T acc = T(0);
      for (int j = w - 1; j >= 0; --j) {
        d.dx.at(b, i, j) = acc;
        acc += grad.x(b, i, j);
      }
    }
    for (int j = 0; j < w; ++j) {
      T acc = T(0);
      for (int i = h - 1; i >= 0; --i) {
        d.dy.at(b, i, j) = acc;
        acc += grad.y(b, i, j);
      }
    }
  }
  return d;
}

/// out(p) = A(local(p)). `thetas` holds one transform per batch item, or a
/// single transform broadcast to every item.
template <typename T>
BasicWarpField<T> compose(std::span<const BasicAffineParams<T>> thetas, const BasicWarpField<T>& local) {
  const int n = local.batch(), h = local.height(), w = local.width();
  if (thetas.size() != 1 && thetas.size() != static_cast<std::size_t>(n)) {
    throw InvalidInput("compose: expected 1 or N affine transforms");
  }
  BasicWarpField<T> out(n, h, w);
  for (int b = 0; b < n; ++b) {
    const auto& a = thetas[thetas.size() == 1 ? 0 : b];
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const T x = local.x(b, i, j), y = local.y(b, i, j);
        out.x(b, i, j) = a.map_x(x, y);
        out.y(b, i, j) = a.map_y(x, y);
      }
    }
  }
  return out;
}

template <typename T>
BasicWarpField<T> compose(const BasicAffineParams<T>& theta, const BasicWarpField<T>& local) {
  return compose(std::span<const BasicAffineParams<T>>(&theta, 1), local);
}

/// Gradients of compose with respect to per-item affine parameters and the local field.
template <typename T>
void compose_backward(std::span<const BasicAffineParams<T>> thetas, const BasicWarpField<T>& local,
                      const BasicWarpField<T>& grad_out, std::vector<BasicAffineParams<T>>& grad_thetas,
                      BasicWarpField<T>& grad_local) {
  const int n = local.batch(), h = local.height(), w = local.width();
  grad_thetas.assign(thetas.size(), BasicAffineParams<T>{{T(0), T(0), T(0), T(0), T(0), T(0)}});
  grad_local = BasicWarpField<T>(n, h, w);
  for (int b = 0; b < n; ++b) {
    const std::size_t t = thetas.size() == 1 ? 0 : static_cast<std::size_t>(b);
    const auto& a = thetas[t].theta;
    auto& g = grad_thetas[t].theta;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const T x = local.x(b, i, j), y = local.y(b, i, j);
        const T gx = grad_out.x(b, i, j), gy = grad_out.y(b, i, j);
        g[0] += gx * x;
        g[1] += gx * y;
        g[2] += gx;
        g[3] += gy * x;
        g[4] += gy * y;
        g[5] += gy;
        grad_local.x(b, i, j) = a[0] * gx + a[3] * gy;
        grad_local.y(b, i, j) = a[1] * gx + a[4] * gy;
      }
    }
  }
}

/// grid[i,j] = theta (x_id, y_id, 1)^T for each transform.
template <typename T>
BasicWarpField<T> affine_grid(std::span<const BasicAffineParams<T>> thetas, int h, int w) {
  return compose(thetas, identity_field<T>(static_cast<int>(thetas.size()), h, w));
}

template <typename T>
BasicWarpField<T> affine_grid(const BasicAffineParams<T>& theta, int h, int w) {
  return compose(theta, identity_field<T>(1, h, w));
}

namespace detail {

// Continuous pixel coordinate for a normalized coordinate, clamped to the border.
// Returns the lower tap, the interpolation weight and d(pixel)/d(normalized), which
// is zero when the coordinate was clamped.
template <typename T>
struct Tap {
  int lo;
  int hi;
  T frac;
  T scale;
};

template <typename T>
Tap<T> tap(T g, int extent) {
  if (extent == 1) return {0, 0, T(0), T(0)};
  const T half = T(extent - 1) / T(2);
  T p = (g + T(1)) * half;
  T scale = half;
  if (std::isnan(p)) return {0, 1, p, scale};  // propagate, never index with NaN
  if (p < T(0)) {
    p = T(0);
    scale = T(0);
  } else if (p > T(extent - 1)) {
    p = T(extent - 1);
    scale = T(0);
  }
  int lo = static_cast<int>(std::floor(p));
  lo = std::min(lo, extent - 2);
  return {lo, lo + 1, p - T(lo), scale};
}

}  // namespace detail

/// out[n,c,i,j] = bilinear lookup of source[n,c] at field[n,i,j]; coordinates
/// outside [-1, 1] are clamped to the border.
template <typename T>
BasicTensor<T> bilinear_sample(const BasicTensor<T>& source, const BasicWarpField<T>& field) {
  if (source.rank() != 4) throw InvalidInput("bilinear_sample: source must be N x C x H x W");
  if (source.dim(0) != field.batch()) {
    throw InvalidInput("bilinear_sample: batch size mismatch (" + std::to_string(source.dim(0)) + " vs " +
                       std::to_string(field.batch()) + ")");
  }
  const int n = source.dim(0), c = source.dim(1), hs = source.dim(2), ws = source.dim(3);
  const int ho = field.height(), wo = field.width();
  BasicTensor<T> out({n, c, ho, wo});
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        const auto tx = detail::tap(field.x(b, i, j), ws);
        const auto ty = detail::tap(field.y(b, i, j), hs);
        for (int ch = 0; ch < c; ++ch) {
          const T v00 = source.at(b, ch, ty.lo, tx.lo);
          const T v01 = source.at(b, ch, ty.lo, tx.hi);
          const T v10 = source.at(b, ch, ty.hi, tx.lo);
          const T v11 = source.at(b, ch, ty.hi, tx.hi);
          const T top = v00 + (v01 - v00) * tx.frac;
          const T bottom = v10 + (v11 - v10) * tx.frac;
          out.at(b, ch, i, j) = top + (bottom - top) * ty.frac;
        }
      }
    }
  }
  return out;
}

template <typename T>
struct SampleGradients {
  BasicTensor<T> source;
  BasicWarpField<T> field;
};

template <typename T>
SampleGradients<T> bilinear_sample_backward(const BasicTensor<T>& source, const BasicWarpField<T>& field,
                                            const BasicTensor<T>& grad_out) {
  const int n = source.dim(0), c = source.dim(1), hs = source.dim(2), ws = source.dim(3);
  const int ho = field.height(), wo = field.width();
  if (grad_out.shape() != Shape{n, c, ho, wo}) {
    throw InvalidInput("bilinear_sample_backward: gradient shape " + shape_string(grad_out.shape()));
  }
  SampleGradients<T> g{BasicTensor<T>(source.shape()), BasicWarpField<T>(n, ho, wo)};
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        const auto tx = detail::tap(field.x(b, i, j), ws);
        const auto ty = detail::tap(field.y(b, i, j), hs);
        const T fx = tx.frac, fy = ty.frac;
        T gx = T(0), gy = T(0);
        for (int ch = 0; ch < c; ++ch) {
          const T go = grad_out.at(b, ch, i, j);
          if (go == T(0)) continue;
          const T v00 = source.at(b, ch, ty.lo, tx.lo);
          const T v01 = source.at(b, ch, ty.lo, tx.hi);
          const T v10 = source.at(b, ch, ty.hi, tx.lo);
          const T v11 = source.at(b, ch, ty.hi, tx.hi);
          g.source.at(b, ch, ty.lo, tx.lo) += go * (1 - fx) * (1 - fy);
          g.source.at(b, ch, ty.lo, tx.hi) += go * fx * (1 - fy);
          g.source.at(b, ch, ty.hi, tx.lo) += go * (1 - fx) * fy;
          g.source.at(b, ch, ty.hi, tx.hi) += go * fx * fy;
          gx += go * ((v01 - v00) * (1 - fy) + (v11 - v10) * fy);
          gy += go * ((v10 - v00) * (1 - fx) + (v11 - v01) * fx);
        }
        g.field.x(b, i, j) = gx * tx.scale;
        g.field.y(b, i, j) = gy * ty.scale;
      }
    }
  }
  return g;
}

/// Elementwise mean over the batch axis; result has batch size 1.
template <typename T>
BasicWarpField<T> mean_field(const BasicWarpField<T>& fields) {
  if (fields.grid.empty() || fields.batch() == 0) throw InvalidInput("mean_field: empty batch");
  const int n = fields.batch(), h = fields.height(), w = fields.width();
  BasicWarpField<T> out(1, h, w);
  const std::size_t len = static_cast<std::size_t>(h) * w * 2;
  std::vector<double> acc(len, 0.0);
  for (int b = 0; b < n; ++b) {
    const T* src = fields.grid.data() + b * len;
    for (std::size_t k = 0; k < len; ++k) acc[k] += src[k];
  }
  for (std::size_t k = 0; k < len; ++k) out.grid[k] = static_cast<T>(acc[k] / n);
  return out;
}

/// Residual-grid ablation: local(p) = W_0(p) + raw(p), no monotonicity constraint.
template <typename T>
BasicWarpField<T> residual_field(const BasicTensor<T>& raw) {
  const int n = raw.dim(0), h = raw.dim(2), w = raw.dim(3);
  BasicWarpField<T> f = identity_field<T>(n, h, w);
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        f.x(b, i, j) += raw.at(b, 0, i, j);
        f.y(b, i, j) += raw.at(b, 1, i, j);
      }
    }
  }
  return f;
}

template <typename T>
BasicTensor<T> residual_field_backward(const BasicWarpField<T>& grad) {
  const int n = grad.batch(), h = grad.height(), w = grad.width();
  BasicTensor<T> out({n, 2, h, w});
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        out.at(b, 0, i, j) = grad.x(b, i, j);
        out.at(b, 1, i, j) = grad.y(b, i, j);
      }
    }
  }
  return out;
}

// DAEW wire format: "DAEW", u32 version, u32 N, u32 H, u32 W, then N*H*W*2
// little-endian float32 values in (x, y) pair order.
inline constexpr std::uint32_t kWarpFileVersion = 1;

void write_fields(std::ostream& os, const WarpField& fields);
void write_fields(const std::string& path, const WarpField& fields);
WarpField read_fields(std::istream& is);
WarpField read_fields(const std::string& path);

}  // namespace dae
