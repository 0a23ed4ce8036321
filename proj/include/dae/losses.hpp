#pragma once

// Objective terms of the deforming autoencoder family. Every term takes an
// optional gradient output so the same code path serves evaluation and training.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dae/model_config.hpp"
#include "dae/tensor.hpp"
#include "dae/warp_core.hpp"

namespace dae {

enum class Reduction { mean, sum };

struct LossWeights {
  double smooth = 1e-6;        // lambda_1
  double bias_affine = 0.01;   // lambda_2
  double bias_field = 0.01;    // lambda_2'
  double shade = 1e-6;         // lambda_3
  double adversarial = 0.1;    // lambda_4
  double class_weight = 1.0;
  Reduction reduction = Reduction::mean;             // reconstruction and bias-reduce
  Reduction regularizer_reduction = Reduction::sum;  // smooth and shade

  void validate() const;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

namespace detail {
template <typename T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}
}  // namespace detail

/// Mean squared error over all elements (or the plain sum of squares).
template <typename T>
T recon_l2(const BasicTensor<T>& output, const BasicTensor<T>& input, std::type_identity_t<BasicTensor<T>>* grad = nullptr,
           Reduction reduction = Reduction::mean) {
  output.require_same_shape(input, "recon_l2");
  const T norm = reduction == Reduction::mean ? T(output.size()) : T(1);
  T acc = T(0);
  for (std::size_t i = 0; i < output.size(); ++i) {
    const T d = output[i] - input[i];
    acc += d * d;
  }
  if (grad) {
    *grad = BasicTensor<T>(output.shape());
    for (std::size_t i = 0; i < output.size(); ++i) (*grad)[i] = T(2) * (output[i] - input[i]) / norm;
  }
  return acc / norm;
}

namespace detail {

// Sum of |forward differences| of an N x H x W map along both axes, with gradient.
template <typename T>
T abs_variation(const BasicTensor<T>& m, BasicTensor<T>* grad, T scale) {
  const int n = m.dim(0), h = m.dim(1), w = m.dim(2);
  T acc = T(0);
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        if (j + 1 < w) {
          const T d = m.at(b, i, j + 1) - m.at(b, i, j);
          acc += std::abs(d);
          if (grad) {
            grad->at(b, i, j + 1) += scale * sign(d);
            grad->at(b, i, j) -= scale * sign(d);
          }
        }
        if (i + 1 < h) {
          const T d = m.at(b, i + 1, j) - m.at(b, i, j);
          acc += std::abs(d);
          if (grad) {
            grad->at(b, i + 1, j) += scale * sign(d);
            grad->at(b, i, j) -= scale * sign(d);
          }
        }
      }
    }
  }
  return acc;
}

}  // namespace detail

/// lambda_1 (|grad dx|_1 + |grad dy|_1) on the increment maps; the mean
/// reduction divides by N*H*W.
template <typename T>
T smooth_tv(const BasicDifferentialWarp<T>& d, std::type_identity_t<T> lambda,
            std::type_identity_t<BasicDifferentialWarp<T>>* grad = nullptr,
            Reduction reduction = Reduction::mean) {
  const T norm = reduction == Reduction::mean ? T(d.dx.size()) : T(1);
  const T scale = lambda / norm;
  if (grad) *grad = {BasicTensor<T>(d.dx.shape()), BasicTensor<T>(d.dy.shape())};
  const T tv = detail::abs_variation(d.dx, grad ? &grad->dx : nullptr, scale) +
               detail::abs_variation(d.dy, grad ? &grad->dy : nullptr, scale);
  return scale * tv;
}

/// lambda_2 |S_A - S_0|^2 + lambda_2' |mean(W) - W_0|^2.
/// Mean reduction averages the affine term over N*6 entries and the field term
/// over H*W*2 entries.
template <typename T>
T bias_reduce(std::span<const BasicAffineParams<T>> thetas, const BasicWarpField<T>& fields,
              std::type_identity_t<T> lambda_affine, std::type_identity_t<T> lambda_field, std::vector<BasicAffineParams<T>>* grad_thetas = nullptr,
              BasicWarpField<T>* grad_fields = nullptr, Reduction reduction = Reduction::mean) {
  if (thetas.empty() || fields.grid.empty() || fields.batch() == 0) {
    throw InvalidInput("bias_reduce: empty batch");
  }
  const auto s0 = BasicAffineParams<T>::identity().theta;
  const T affine_norm = reduction == Reduction::mean ? T(thetas.size() * 6) : T(1);
  T affine = T(0);
  if (grad_thetas) grad_thetas->assign(thetas.size(), BasicAffineParams<T>{});
  for (std::size_t n = 0; n < thetas.size(); ++n) {
    for (int k = 0; k < 6; ++k) {
      const T d = thetas[n].theta[k] - s0[k];
      affine += d * d;
      if (grad_thetas) (*grad_thetas)[n].theta[k] = T(2) * lambda_affine * d / affine_norm;
    }
  }

  const int n = fields.batch(), h = fields.height(), w = fields.width();
  const auto mean = mean_field(fields);
  const auto identity = identity_field<T>(1, h, w);
  const std::size_t len = static_cast<std::size_t>(h) * w * 2;
  const T field_norm = reduction == Reduction::mean ? T(len) : T(1);
  T field = T(0);
  if (grad_fields) *grad_fields = BasicWarpField<T>(n, h, w);
  for (std::size_t k = 0; k < len; ++k) {
    const T d = mean.grid[k] - identity.grid[k];
    field += d * d;
    if (grad_fields) {
      const T g = T(2) * lambda_field * d / (field_norm * T(n));
      for (int b = 0; b < n; ++b) grad_fields->grid[b * len + k] = g;
    }
  }
  return lambda_affine * affine / affine_norm + lambda_field * field / field_norm;
}

/// lambda_3 * sum of squared forward differences of an N x C x H x W shading map.
template <typename T>
T shade_smooth(const BasicTensor<T>& shading, std::type_identity_t<T> lambda,
               std::type_identity_t<BasicTensor<T>>* grad = nullptr,
               Reduction reduction = Reduction::mean) {
  const int n = shading.dim(0), c = shading.dim(1), h = shading.dim(2), w = shading.dim(3);
  const T norm = reduction == Reduction::mean ? T(shading.size()) : T(1);
  const T scale = lambda / norm;
  if (grad) *grad = BasicTensor<T>(shading.shape());
  T acc = T(0);
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const T v = shading.at(b, ch, i, j);
          if (j + 1 < w) {
            const T d = shading.at(b, ch, i, j + 1) - v;
            acc += d * d;
            if (grad) {
              grad->at(b, ch, i, j + 1) += T(2) * scale * d;
              grad->at(b, ch, i, j) -= T(2) * scale * d;
            }
          }
          if (i + 1 < h) {
            const T d = shading.at(b, ch, i + 1, j) - v;
            acc += d * d;
            if (grad) {
              grad->at(b, ch, i + 1, j) += T(2) * scale * d;
              grad->at(b, ch, i, j) -= T(2) * scale * d;
            }
          }
        }
      }
    }
  }
  return scale * acc;
}

/// Mean squared forward-difference magnitude per pixel, |grad X|^2 averaged.
template <typename T>
T mean_gradient_energy(const BasicTensor<T>& image) {
  return shade_smooth(image, T(1), nullptr, Reduction::mean);
}

/// Least-squares GAN terms on patch logits.
template <typename T>
struct AdversarialTerms {
  T generator = T(0);      // mean((D(fake) - 1)^2)
  T discriminator = T(0);  // 0.5 mean((D(real) - 1)^2) + 0.5 mean(D(fake)^2)
  BasicTensor<T> grad_generator_fake;
  BasicTensor<T> grad_discriminator_real;
  BasicTensor<T> grad_discriminator_fake;
};

template <typename T>
AdversarialTerms<T> adversarial_pair(const BasicTensor<T>& real_logits, const BasicTensor<T>& fake_logits) {
  AdversarialTerms<T> t;
  t.grad_generator_fake = BasicTensor<T>(fake_logits.shape());
  t.grad_discriminator_fake = BasicTensor<T>(fake_logits.shape());
  t.grad_discriminator_real = BasicTensor<T>(real_logits.shape());
  const T nf = T(fake_logits.size()), nr = T(real_logits.size());
  T g_sum = T(0), fake_sq = T(0), real_sq = T(0);
  for (std::size_t i = 0; i < fake_logits.size(); ++i) {
    const T f = fake_logits[i];
    g_sum += (f - 1) * (f - 1);
    fake_sq += f * f;
    t.grad_generator_fake[i] = T(2) * (f - 1) / nf;
    t.grad_discriminator_fake[i] = f / nf;
  }
  for (std::size_t i = 0; i < real_logits.size(); ++i) {
    const T r = real_logits[i];
    real_sq += (r - 1) * (r - 1);
    t.grad_discriminator_real[i] = (r - 1) / nr;
  }
  t.generator = g_sum / nf;
  t.discriminator = T(0.5) * real_sq / nr + T(0.5) * fake_sq / nf;
  return t;
}

/// Softmax cross-entropy averaged over the batch; logits are N x K.
template <typename T>
T cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels,
                std::type_identity_t<BasicTensor<T>>* grad = nullptr) {
  const int n = logits.dim(0);
  const int k = static_cast<int>(logits.size() / std::max(n, 1));
  if (static_cast<int>(labels.size()) != n) throw InvalidInput("cross_entropy: label count mismatch");
  if (grad) *grad = BasicTensor<T>(logits.shape());
  T acc = T(0);
  for (int b = 0; b < n; ++b) {
    const T* row = logits.data() + static_cast<std::size_t>(b) * k;
    if (labels[b] < 0 || labels[b] >= k) throw InvalidInput("cross_entropy: label out of range");
    T mx = row[0];
    for (int c = 1; c < k; ++c) mx = std::max(mx, row[c]);
    T z = T(0);
    for (int c = 0; c < k; ++c) z += std::exp(row[c] - mx);
    acc += std::log(z) + mx - row[labels[b]];
    if (grad) {
      for (int c = 0; c < k; ++c) {
        (*grad)[static_cast<std::size_t>(b) * k + c] =
            (std::exp(row[c] - mx) / z - (c == labels[b] ? T(1) : T(0))) / T(n);
      }
    }
  }
  return acc / T(n);
}

/// Component values for one step; absent terms are std::nullopt.
struct LossParts {
  std::optional<double> recon;
  std::optional<double> smooth;
  std::optional<double> bias;
  std::optional<double> shade;
  std::optional<double> adv_g;
  std::optional<double> adv_d;
  std::optional<double> ce;
};

struct LossReport {
  long step = 0;
  double total = 0;
  double recon = 0;
  double smooth = 0;
  double bias = 0;
  double shade = 0;
  double adv_g = 0;
  double adv_d = 0;
  double ce = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

/// Weighted total per variant:
///   dae:          recon + smooth + bias
///   class_aware:  + class_weight * ce
///   intrinsic:    + shade
/// plus lambda_4 * adv_g whenever an adversarial term is supplied.
/// smooth, bias and shade already carry their lambda weights.
LossReport aggregate(Variant variant, const LossParts& parts, const LossWeights& weights);

}  // namespace dae
