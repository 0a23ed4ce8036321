#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dae {

/// Raised when an operation receives arguments that violate its preconditions
/// (wrong shapes, non-finite values, empty batches).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a requested operation is not available for the model configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

/// Cache-line aligned storage. Vectorized kernels pick their peeling from the
/// base address, so a fixed alignment keeps results bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major array. Images are stored NCHW, warp fields N x H x W x 2.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    for (int d : shape_) {
      if (d < 0) throw InvalidInput("negative tensor dimension in " + shape_string(shape_));
    }
    data_.assign(count(shape_), fill);
  }

  static std::size_t count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  AlignedVector<T>& storage() { return data_; }
  const AlignedVector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // 4-D accessors (NCHW or NHWC depending on the tensor's role).
  T& at(int a, int b, int c, int d) { return data_[offset(a, b, c, d)]; }
  const T& at(int a, int b, int c, int d) const { return data_[offset(a, b, c, d)]; }
  T& at(int a, int b) { return data_[static_cast<std::size_t>(a) * shape_[1] + b]; }
  const T& at(int a, int b) const { return data_[static_cast<std::size_t>(a) * shape_[1] + b]; }
  // 3-D accessors.
  T& at(int a, int b, int c) { return data_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c]; }
  const T& at(int a, int b, int c) const {
    return data_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }

  std::size_t offset(int a, int b, int c, int d) const {
    return ((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  BasicTensor reshaped(Shape shape) const {
    if (count(shape) != data_.size()) {
      throw InvalidInput("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    BasicTensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  bool same_shape(const BasicTensor& other) const { return shape_ == other.shape_; }

  /// Slice [begin, end) along the leading dimension.
  BasicTensor rows(int begin, int end) const {
    Shape s = shape_;
    s[0] = end - begin;
    BasicTensor out(s);
    const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
    std::copy(data_.begin() + begin * stride, data_.begin() + end * stride, out.data_.begin());
    return out;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  BasicTensor& operator+=(const BasicTensor& other) {
    require_same_shape(other, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  BasicTensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void require_same_shape(const BasicTensor& other, const char* what) const {
    if (shape_ != other.shape_) {
      throw InvalidInput(std::string(what) + ": shape mismatch " + shape_string(shape_) + " vs " +
                         shape_string(other.shape_));
    }
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  AlignedVector<T> data_;
};

using Tensor = BasicTensor<float>;

/// Concatenate along the channel axis (dim 1) of rank-4 tensors with equal N, H, W.
template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts) {
  if (parts.empty()) throw InvalidInput("concat_channels: no inputs");
  const BasicTensor<T>& first = *parts.front();
  const int n = first.dim(0), h = first.dim(2), w = first.dim(3);
  int channels = 0;
  for (const auto* p : parts) {
    if (p->rank() != 4 || p->dim(0) != n || p->dim(2) != h || p->dim(3) != w) {
      throw InvalidInput("concat_channels: incompatible shape " + shape_string(p->shape()));
    }
    channels += p->dim(1);
  }
  BasicTensor<T> out({n, channels, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    T* dst = out.data() + static_cast<std::size_t>(b) * channels * plane;
    for (const auto* p : parts) {
      const std::size_t len = static_cast<std::size_t>(p->dim(1)) * plane;
      std::copy_n(p->data() + b * len, len, dst);
      dst += len;
    }
  }
  return out;
}

/// Extract channels [begin, begin + count) of a rank-4 tensor.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int begin, int count) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (begin < 0 || count < 0 || begin + count > c) throw InvalidInput("slice_channels: range out of bounds");
  BasicTensor<T> out({n, count, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    std::copy_n(x.data() + (static_cast<std::size_t>(b) * c + begin) * plane, count * plane,
                out.data() + static_cast<std::size_t>(b) * count * plane);
  }
  return out;
}

/// Add `part` into channels [begin, begin + part.C) of `x`.
template <typename T>
void accumulate_channels(BasicTensor<T>& x, int begin, const BasicTensor<T>& part) {
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const int count = part.dim(1);
  for (int b = 0; b < n; ++b) {
    T* dst = x.data() + (static_cast<std::size_t>(b) * c + begin) * plane;
    const T* src = part.data() + static_cast<std::size_t>(b) * count * plane;
    for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
  }
}

}  // namespace dae
