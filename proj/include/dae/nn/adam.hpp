#pragma once

#include <vector>

#include "dae/nn/layers.hpp"

namespace dae::nn {

struct AdamOptions {
  float learning_rate = 2e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Adam over the trainable subset of a parameter list.
class Adam {
 public:
  Adam(const std::vector<NamedParameter>& params, AdamOptions options);

  void step();
  void zero_grad();

  long steps() const { return steps_; }
  void set_steps(long s) { steps_ = s; }
  const AdamOptions& options() const { return options_; }
  void set_learning_rate(float lr) { options_.learning_rate = lr; }

  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  std::vector<NamedParameter> params_;
  AdamOptions options_;
  std::vector<Tensor> m_, v_;
  long steps_ = 0;
};

void zero_grad(const std::vector<NamedParameter>& params);

}  // namespace dae::nn
