#include "dae/nn/adam.hpp"

#include <cmath>

namespace dae::nn {

Adam::Adam(const std::vector<NamedParameter>& params, AdamOptions options) : options_(options) {
  for (const auto& p : params) {
    if (!p.param->trainable) continue;
    params_.push_back(p);
    m_.emplace_back(p.param->value.shape());
    v_.emplace_back(p.param->value.shape());
  }
}

void Adam::step() {
  ++steps_;
  const float b1 = options_.beta1, b2 = options_.beta2;
  const float c1 = 1.0f - std::pow(b1, static_cast<float>(steps_));
  const float c2 = 1.0f - std::pow(b2, static_cast<float>(steps_));
  const float lr = options_.learning_rate;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k].param;
    float* m = m_[k].data();
    float* v = v_[k].data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const float g = p.grad[i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
    }
  }
}

void Adam::zero_grad() { nn::zero_grad(params_); }

void zero_grad(const std::vector<NamedParameter>& params) {
  for (const auto& p : params) {
    if (p.param->trainable) p.param->grad.fill(0.0f);
  }
}

}  // namespace dae::nn
