#include "dae/nn/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

namespace dae::nn {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using ConstMapR = Eigen::Map<const MatR>;

int conv_out(int in, int kernel, int stride, int padding) { return (in + 2 * padding - kernel) / stride + 1; }

// cols is (channels * k * k) x (out_h * out_w).
void im2col(const float* img, int channels, int h, int w, int k, int stride, int pad, int out_h, int out_w,
            float* cols) {
  const int out_plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* row = cols + ((c * k + ky) * k + kx) * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill_n(row + oy * out_w, out_w, 0.0f);
            continue;
          }
          const float* src = img + (c * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            row[oy * out_w + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-add of cols back into an image (adjoint of im2col). img must be zeroed.
void col2im(const float* cols, int channels, int h, int w, int k, int stride, int pad, int out_h, int out_w,
            float* img) {
  const int out_plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* row = cols + ((c * k + ky) * k + kx) * out_plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          float* dst = img + (c * h + iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

void normal_init(Tensor& t, float stddev, Rng& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& v : t.values()) v = dist(rng);
}

void require_rank4(const Tensor& x, int channels, const char* who) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw InvalidInput(std::string(who) + ": expected N x " + std::to_string(channels) + " x H x W input, got " +
                       shape_string(x.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng, bool bias)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      has_bias_(bias),
      weight_({out_channels, in_channels, kernel, kernel}),
      bias_({out_channels}) {
  normal_init(weight_.value, 0.02f, rng);
}

Tensor Conv2d::forward(const Tensor& input) {
  require_rank4(input, in_, "Conv2d");
  input_ = input;
  const int n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const int oh = conv_out(h, kernel_, stride_, padding_), ow = conv_out(w, kernel_, stride_, padding_);
  const int ckk = in_ * kernel_ * kernel_, plane = oh * ow;
  Tensor out({n, out_, oh, ow});
  AlignedVector<float> cols(static_cast<std::size_t>(ckk) * plane);
  ConstMapR wmat(weight_.value.data(), out_, ckk);
  for (int b = 0; b < n; ++b) {
    im2col(input.data() + static_cast<std::size_t>(b) * in_ * h * w, in_, h, w, kernel_, stride_, padding_, oh, ow,
           cols.data());
    MapR y(out.data() + static_cast<std::size_t>(b) * out_ * plane, out_, plane);
    y.noalias() = wmat * ConstMapR(cols.data(), ckk, plane);
    if (has_bias_) {
      for (int c = 0; c < out_; ++c) y.row(c).array() += bias_.value[c];
    }
  }
  return out;
}

Tensor Conv2d::backward(const Tensor& grad_output) {
  const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
  const int oh = grad_output.dim(2), ow = grad_output.dim(3);
  const int ckk = in_ * kernel_ * kernel_, plane = oh * ow;
  Tensor grad_input(input_.shape());
  AlignedVector<float> cols(static_cast<std::size_t>(ckk) * plane);
  ConstMapR wmat(weight_.value.data(), out_, ckk);
  MapR gw(weight_.grad.data(), out_, ckk);
  for (int b = 0; b < n; ++b) {
    ConstMapR gy(grad_output.data() + static_cast<std::size_t>(b) * out_ * plane, out_, plane);
    im2col(input_.data() + static_cast<std::size_t>(b) * in_ * h * w, in_, h, w, kernel_, stride_, padding_, oh, ow,
           cols.data());
    gw.noalias() += gy * ConstMapR(cols.data(), ckk, plane).transpose();
    if (has_bias_) {
      for (int c = 0; c < out_; ++c) bias_.grad[c] += gy.row(c).sum();
    }
    MapR(cols.data(), ckk, plane).noalias() = wmat.transpose() * gy;
    col2im(cols.data(), in_, h, w, kernel_, stride_, padding_, oh, ow,
           grad_input.data() + static_cast<std::size_t>(b) * in_ * h * w);
  }
  return grad_input;
}

void Conv2d::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight_});
  if (has_bias_) out.push_back({prefix + "bias", &bias_});
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng,
                                 bool bias)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      has_bias_(bias),
      weight_({in_channels, out_channels, kernel, kernel}),
      bias_({out_channels}) {
  normal_init(weight_.value, 0.02f, rng);
}

Tensor ConvTranspose2d::forward(const Tensor& input) {
  require_rank4(input, in_, "ConvTranspose2d");
  input_ = input;
  const int n = input.dim(0), h = input.dim(2), w = input.dim(3);
  const int oh = (h - 1) * stride_ - 2 * padding_ + kernel_, ow = (w - 1) * stride_ - 2 * padding_ + kernel_;
  const int okk = out_ * kernel_ * kernel_, plane = h * w;
  Tensor out({n, out_, oh, ow});
  AlignedVector<float> cols(static_cast<std::size_t>(okk) * plane);
  ConstMapR wmat(weight_.value.data(), in_, okk);
  for (int b = 0; b < n; ++b) {
    MapR(cols.data(), okk, plane).noalias() =
        wmat.transpose() * ConstMapR(input.data() + static_cast<std::size_t>(b) * in_ * plane, in_, plane);
    float* y = out.data() + static_cast<std::size_t>(b) * out_ * oh * ow;
    col2im(cols.data(), out_, oh, ow, kernel_, stride_, padding_, h, w, y);
    if (has_bias_) {
      for (int c = 0; c < out_; ++c) {
        float* p = y + static_cast<std::size_t>(c) * oh * ow;
        for (int k = 0; k < oh * ow; ++k) p[k] += bias_.value[c];
      }
    }
  }
  return out;
}

Tensor ConvTranspose2d::backward(const Tensor& grad_output) {
  const int n = input_.dim(0), h = input_.dim(2), w = input_.dim(3);
  const int oh = grad_output.dim(2), ow = grad_output.dim(3);
  const int okk = out_ * kernel_ * kernel_, plane = h * w;
  Tensor grad_input(input_.shape());
  AlignedVector<float> cols(static_cast<std::size_t>(okk) * plane);
  ConstMapR wmat(weight_.value.data(), in_, okk);
  MapR gw(weight_.grad.data(), in_, okk);
  for (int b = 0; b < n; ++b) {
    const float* gy = grad_output.data() + static_cast<std::size_t>(b) * out_ * oh * ow;
    im2col(gy, out_, oh, ow, kernel_, stride_, padding_, h, w, cols.data());
    ConstMapR gcols(cols.data(), okk, plane);
    ConstMapR x(input_.data() + static_cast<std::size_t>(b) * in_ * plane, in_, plane);
    gw.noalias() += x * gcols.transpose();
    MapR(grad_input.data() + static_cast<std::size_t>(b) * in_ * plane, in_, plane).noalias() = wmat * gcols;
    if (has_bias_) {
      for (int c = 0; c < out_; ++c) {
        const float* p = gy + static_cast<std::size_t>(c) * oh * ow;
        float s = 0.0f;
        for (int k = 0; k < oh * ow; ++k) s += p[k];
        bias_.grad[c] += s;
      }
    }
  }
  return grad_input;
}

void ConvTranspose2d::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight_});
  if (has_bias_) out.push_back({prefix + "bias", &bias_});
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, float momentum, float eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_({channels}, 1.0f),
      beta_({channels}, 0.0f),
      running_mean_({channels}, 0.0f, false),
      running_var_({channels}, 1.0f, false) {}

Tensor BatchNorm2d::forward(const Tensor& input) {
  require_rank4(input, channels_, "BatchNorm2d");
  const int n = input.dim(0);
  const std::size_t plane = static_cast<std::size_t>(input.dim(2)) * input.dim(3);
  const double count = static_cast<double>(n) * plane;
  normalized_ = Tensor(input.shape());
  inv_std_.assign(channels_, 0.0f);
  cached_training_ = training_;
  Tensor out(input.shape());
  for (int c = 0; c < channels_; ++c) {
    float mean, var;
    if (training_) {
      double s = 0.0, s2 = 0.0;
      for (int b = 0; b < n; ++b) {
        const float* p = input.data() + (static_cast<std::size_t>(b) * channels_ + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) s += p[k];
      }
      const double m = s / count;
      for (int b = 0; b < n; ++b) {
        const float* p = input.data() + (static_cast<std::size_t>(b) * channels_ + c) * plane;
        for (std::size_t k = 0; k < plane; ++k) s2 += (p[k] - m) * (p[k] - m);
      }
      mean = static_cast<float>(m);
      var = static_cast<float>(s2 / count);
      const float unbiased = count > 1 ? static_cast<float>(s2 / (count - 1)) : var;
      running_mean_.value[c] = (1 - momentum_) * running_mean_.value[c] + momentum_ * mean;
      running_var_.value[c] = (1 - momentum_) * running_var_.value[c] + momentum_ * unbiased;
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const float inv = 1.0f / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    for (int b = 0; b < n; ++b) {
      const std::size_t base = (static_cast<std::size_t>(b) * channels_ + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const float xh = (input[base + k] - mean) * inv;
        normalized_[base + k] = xh;
        out[base + k] = gamma_.value[c] * xh + beta_.value[c];
      }
    }
  }
  return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_output) {
  const int n = grad_output.dim(0);
  const std::size_t plane = static_cast<std::size_t>(grad_output.dim(2)) * grad_output.dim(3);
  const double count = static_cast<double>(n) * plane;
  Tensor grad_input(grad_output.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (int b = 0; b < n; ++b) {
      const std::size_t base = (static_cast<std::size_t>(b) * channels_ + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum_dy += grad_output[base + k];
        sum_dy_xh += grad_output[base + k] * normalized_[base + k];
      }
    }
    gamma_.grad[c] += static_cast<float>(sum_dy_xh);
    beta_.grad[c] += static_cast<float>(sum_dy);
    const float g = gamma_.value[c] * inv_std_[c];
    for (int b = 0; b < n; ++b) {
      const std::size_t base = (static_cast<std::size_t>(b) * channels_ + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        if (cached_training_) {
          grad_input[base + k] = static_cast<float>(
              g * (grad_output[base + k] - sum_dy / count - normalized_[base + k] * sum_dy_xh / count));
        } else {
          grad_input[base + k] = g * grad_output[base + k];
        }
      }
    }
  }
  return grad_input;
}

void BatchNorm2d::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &gamma_});
  out.push_back({prefix + "bias", &beta_});
  out.push_back({prefix + "running_mean", &running_mean_});
  out.push_back({prefix + "running_var", &running_var_});
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features, Rng& rng)
    : in_(in_features), out_(out_features), weight_({out_features, in_features}), bias_({out_features}) {
  const float bound = in_features > 0 ? 1.0f / std::sqrt(static_cast<float>(in_features)) : 0.0f;
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (auto& v : weight_.value.values()) v = dist(rng);
  for (auto& v : bias_.value.values()) v = dist(rng);
}

Tensor Linear::forward(const Tensor& input) {
  const int n = input.dim(0);
  if (static_cast<int>(input.size()) != n * in_) {
    throw InvalidInput("Linear: expected " + std::to_string(in_) + " features per sample, got " +
                       shape_string(input.shape()));
  }
  input_ = input;
  Tensor out({n, out_});
  MapR y(out.data(), n, out_);
  y.noalias() = ConstMapR(input.data(), n, in_) * ConstMapR(weight_.value.data(), out_, in_).transpose();
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < out_; ++o) y(b, o) += bias_.value[o];
  }
  return out;
}

Tensor Linear::backward(const Tensor& grad_output) {
  const int n = input_.dim(0);
  ConstMapR gy(grad_output.data(), n, out_);
  ConstMapR x(input_.data(), n, in_);
  MapR(weight_.grad.data(), out_, in_).noalias() += gy.transpose() * x;
  for (int b = 0; b < n; ++b) {
    for (int o = 0; o < out_; ++o) bias_.grad[o] += gy(b, o);
  }
  Tensor grad_input(input_.shape());
  MapR(grad_input.data(), n, in_).noalias() = gy * ConstMapR(weight_.value.data(), out_, in_);
  return grad_input;
}

void Linear::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight_});
  out.push_back({prefix + "bias", &bias_});
}

// ----------------------------------------------------------- activations

Tensor LeakyReLU::forward(const Tensor& input) {
  input_ = input;
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0 ? input[i] : slope_ * input[i];
  return out;
}

Tensor LeakyReLU::backward(const Tensor& grad_output) {
  Tensor g(grad_output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = input_[i] > 0 ? grad_output[i] : slope_ * grad_output[i];
  return g;
}

Tensor ReLU::forward(const Tensor& input) {
  input_ = input;
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0 ? input[i] : 0.0f;
  return out;
}

Tensor ReLU::backward(const Tensor& grad_output) {
  Tensor g(grad_output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = input_[i] > 0 ? grad_output[i] : 0.0f;
  return g;
}

Tensor Tanh::forward(const Tensor& input) {
  output_ = Tensor(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) output_[i] = std::tanh(input[i]);
  return output_;
}

Tensor Tanh::backward(const Tensor& grad_output) {
  Tensor g(grad_output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_output[i] * (1.0f - output_[i] * output_[i]);
  return g;
}

Tensor Sigmoid::forward(const Tensor& input) {
  output_ = Tensor(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) output_[i] = 1.0f / (1.0f + std::exp(-input[i]));
  return output_;
}

Tensor Sigmoid::backward(const Tensor& grad_output) {
  Tensor g(grad_output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_output[i] * output_[i] * (1.0f - output_[i]);
  return g;
}

Tensor Clamp::forward(const Tensor& input) {
  input_ = input;
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = std::min(std::max(input[i], lo_), hi_);
  return out;
}

Tensor Clamp::backward(const Tensor& grad_output) {
  Tensor g(grad_output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (input_[i] > lo_ && input_[i] < hi_) ? grad_output[i] : 0.0f;
  return g;
}

// ------------------------------------------------------------- MaxPool2d

Tensor MaxPool2d::forward(const Tensor& input) {
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % size_ != 0 || w % size_ != 0) throw InvalidInput("MaxPool2d: input size not divisible by window");
  const int oh = h / size_, ow = w / size_;
  input_shape_ = input.shape();
  Tensor out({n, c, oh, ow});
  argmax_.assign(out.size(), 0);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          float best = -std::numeric_limits<float>::infinity();
          std::size_t arg = 0;
          for (int dy = 0; dy < size_; ++dy) {
            for (int dx = 0; dx < size_; ++dx) {
              const std::size_t idx = input.offset(b, ch, oy * size_ + dy, ox * size_ + dx);
              if (input[idx] > best) {
                best = input[idx];
                arg = idx;
              }
            }
          }
          const std::size_t o = out.offset(b, ch, oy, ox);
          out[o] = best;
          argmax_[o] = arg;
        }
      }
    }
  }
  return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_output) {
  Tensor g(input_shape_);
  for (std::size_t i = 0; i < grad_output.size(); ++i) g[argmax_[i]] += grad_output[i];
  return g;
}

// ------------------------------------------------------------ Sequential

Tensor Sequential::forward(const Tensor& input) {
  trace_.clear();
  Tensor x = input;
  for (auto& [name, layer] : layers_) {
    x = layer->forward(x);
    trace_.emplace_back(name, x.shape());
  }
  return x;
}

Tensor Sequential::backward(const Tensor& grad_output) {
  Tensor g = grad_output;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->second->backward(g);
  return g;
}

void Sequential::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  for (auto& [name, layer] : layers_) layer->collect_parameters(prefix + name + ".", out);
}

void Sequential::set_training(bool on) {
  training_ = on;
  for (auto& entry : layers_) entry.second->set_training(on);
}

// ------------------------------------------------------------ DenseBlock

DenseBlock::DenseBlock(Kind kind, int channels, int units, Rng& rng) : channels_(channels) {
  for (int i = 0; i < units; ++i) {
    auto unit = std::make_unique<Sequential>();
    const int in = channels * (i + 1);
    unit->emplace<BatchNorm2d>("bn", in);
    unit->emplace<ReLU>("relu");
    if (kind == Kind::encoder) {
      unit->emplace<Conv2d>("conv", in, channels, 3, 1, 1, rng);
    } else {
      unit->emplace<ConvTranspose2d>("convt", in, channels, 3, 1, 1, rng);
    }
    units_.push_back(std::move(unit));
  }
}

Tensor DenseBlock::forward(const Tensor& input) {
  require_rank4(input, channels_, "DenseBlock");
  std::vector<Tensor> features{input};
  for (auto& unit : units_) {
    std::vector<const Tensor*> parts;
    for (const auto& f : features) parts.push_back(&f);
    const Tensor joined = concat_channels<float>(parts);
    features.push_back(unit->forward(joined));
  }
  return features.back();
}

Tensor DenseBlock::backward(const Tensor& grad_output) {
  const int k = static_cast<int>(units_.size());
  if (k == 0) return grad_output;
  Shape feature_shape = grad_output.shape();
  std::vector<Tensor> grads(k + 1, Tensor(feature_shape));
  grads[k] = grad_output;
  for (int i = k - 1; i >= 0; --i) {
    const Tensor g_in = units_[i]->backward(grads[i + 1]);
    for (int f = 0; f <= i; ++f) accumulate_channels(grads[f], 0, slice_channels(g_in, f * channels_, channels_));
  }
  return grads[0];
}

void DenseBlock::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  for (std::size_t i = 0; i < units_.size(); ++i) {
    units_[i]->collect_parameters(prefix + "unit" + std::to_string(i) + ".", out);
  }
}

void DenseBlock::set_training(bool on) {
  training_ = on;
  for (auto& u : units_) u->set_training(on);
}

}  // namespace dae::nn
