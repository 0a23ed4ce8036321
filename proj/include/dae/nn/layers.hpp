#pragma once

// Minimal layer engine: each layer caches what it needs during forward() and
// consumes an output gradient in backward(), accumulating parameter gradients.
// A forward/backward pair must not be interleaved with another forward on the
// same layer instance.

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dae/tensor.hpp"

namespace dae::nn {

using Rng = std::mt19937_64;

struct Parameter {
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Shape shape, float fill = 0.0f, bool train = true)
      : value(shape, fill), grad(train ? Tensor(shape) : Tensor()), trainable(train) {}
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& input) = 0;
  virtual Tensor backward(const Tensor& grad_output) = 0;
  virtual void collect_parameters(const std::string& /*prefix*/, std::vector<NamedParameter>& /*out*/) {}
  virtual void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

 protected:
  bool training_ = true;
};

class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng, bool bias = true);
  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_output) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  int in_, out_, kernel_, stride_, padding_;
  bool has_bias_;
  Parameter weight_;  // out x in x k x k
  Parameter bias_;
  Tensor input_;
};

/// Fractionally strided convolution; output side = (in - 1) * stride - 2 * padding + kernel.
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int padding, Rng& rng,
                  bool bias = true);
  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_output) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  int in_, out_, kernel_, stride_, padding_;
  bool has_bias_;
  Parameter weight_;  // in x out x k x k
  Parameter bias_;
  Tensor input_;
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f);
  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_output) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

 private:
  int channels_;
  float momentum_, eps_;
  Parameter gamma_, beta_;
  Parameter running_mean_, running_var_;
  Tensor normalized_;
  std::vector<float> inv_std_;
  bool cached_training_ = true;
};

/// Fully connected layer on the flattened per-sample input; output is N x out.
class Linear : public Layer {
 public:
  Linear(int in_features, int out_features, Rng& rng);
  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_output) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;

  Parameter& weight() { return weight_; }  // out x in
  Parameter& bias() { return bias_; }

 private:
  int in_, out_;
  Parameter weight_, bias_;
  Tensor input_;
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(float slope) : slope_(slope) {}
  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_output) override;

 private:
  float slope_;
  Tensor input_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_output) override;

 private:
  Tensor input_;
};

class Tanh : public Layer {
 public:
  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_output) override;

 private:
  Tensor output_;
};

class Sigmoid : public Layer {
 public:
  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_output) override;

 private:
  Tensor output_;
};

/// Hard clamp to [lo, hi]; gradient flows only strictly inside the interval.
class Clamp : public Layer {
 public:
  Clamp(float lo, float hi) : lo_(lo), hi_(hi) {}
  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_output) override;

 private:
  float lo_, hi_;
  Tensor input_;
};

/// Non-overlapping max pooling with window = stride = size.
class MaxPool2d : public Layer {
 public:
  explicit MaxPool2d(int size) : size_(size) {}
  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_output) override;

 private:
  int size_;
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

class Sequential : public Layer {
 public:
  template <typename L, typename... Args>
  L& emplace(std::string name, Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.emplace_back(std::move(name), std::move(layer));
    return ref;
  }
  void add(std::string name, std::unique_ptr<Layer> layer) { layers_.emplace_back(std::move(name), std::move(layer)); }

  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_output) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;
  void set_training(bool on) override;

  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_.at(i).second; }
  const std::string& name(std::size_t i) const { return layers_.at(i).first; }

  /// Output shape of each direct child after the latest forward().
  const std::vector<std::pair<std::string, Shape>>& trace() const { return trace_; }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> layers_;
  std::vector<std::pair<std::string, Shape>> trace_;
};

/// Dense block without bottleneck 1x1 convolutions: unit i sees the block input
/// concatenated with the outputs of units 0..i-1 (n * (i + 1) channels) and emits
/// n channels through BN-ReLU-3x3 (transposed) convolution. The block returns the
/// output of its last unit, so it maps n channels to n channels at fixed size.
class DenseBlock : public Layer {
 public:
  enum class Kind { encoder, decoder };

  DenseBlock(Kind kind, int channels, int units, Rng& rng);
  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_output) override;
  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) override;
  void set_training(bool on) override;

 private:
  int channels_;
  std::vector<std::unique_ptr<Sequential>> units_;
};

}  // namespace dae::nn
