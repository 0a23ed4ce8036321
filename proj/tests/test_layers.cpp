#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "dae/nn/adam.hpp"
#include "dae/nn/layers.hpp"
#include "helpers.hpp"

using namespace dae;
using namespace dae::nn;
using testutil::from_vec;
using testutil::to_vec;

namespace {

Tensor random_tensor(std::mt19937_64& rng, const Shape& shape, double lo = -1, double hi = 1) {
  return from_vec<float>(shape, oracle::uniform(rng, Tensor::count(shape), lo, hi));
}

double weighted_sum(const Tensor& out, const Tensor& w) {
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(out[i]) * w[i];
  return s;
}

// Checks input and parameter gradients of `layer` against central differences
// of sum(w * layer(x)). Composite layers with many ReLU kinks compare whole
// gradient vectors instead of single entries.
void check_layer(Layer& layer, Tensor x, double tol = 2e-2, float h = 1e-2f, bool normwise = false) {
  std::mt19937_64 rng(99);
  const Tensor out = layer.forward(x);
  const Tensor w = random_tensor(rng, out.shape());
  std::vector<NamedParameter> params;
  layer.collect_parameters("", params);
  zero_grad(params);
  const Tensor gx = layer.backward(w);

  auto numeric = [&](float& slot) {
    const float keep = slot;
    slot = keep + h;
    const double up = weighted_sum(layer.forward(x), w);
    slot = keep - h;
    const double down = weighted_sum(layer.forward(x), w);
    slot = keep;
    return (up - down) / (2 * h);
  };
  oracle::Vec num_x(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) num_x[i] = numeric(x[i]);
  auto error = [&](const oracle::Vec& a, const oracle::Vec& n) {
    if (!normwise) return oracle::max_relative_error(a, n, 1e-2);
    // Biases feeding batch norm have an exactly zero gradient; only noise remains.
    if (oracle::max_abs_diff(a, n) < 1e-3) return 0.0;
    return oracle::norm_relative_error(a, n);
  };
  EXPECT_LE(error(to_vec(gx), num_x), tol);
  for (auto& p : params) {
    if (!p.param->trainable) continue;
    oracle::Vec num(p.param->value.size());
    for (std::size_t i = 0; i < num.size(); ++i) num[i] = numeric(p.param->value[i]);
    EXPECT_LE(error(to_vec(p.param->grad), num), tol) << p.name;
  }
}

}  // namespace

TEST(Conv2d, OutputShapeAndGradients) {
  Rng rng(1);
  std::mt19937_64 data(1);
  Conv2d conv(3, 4, 4, 2, 1, rng);
  EXPECT_EQ(conv.forward(random_tensor(data, {2, 3, 8, 8})).shape(), (Shape{2, 4, 4, 4}));
  check_layer(conv, random_tensor(data, {2, 3, 6, 6}));
}

TEST(Conv2d, MatchesDirectConvolution) {
  Rng rng(2);
  std::mt19937_64 data(2);
  Conv2d conv(2, 3, 3, 1, 1, rng);
  const Tensor x = random_tensor(data, {1, 2, 5, 5});
  const Tensor y = conv.forward(x);
  auto& wt = conv.weight().value;
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        double s = conv.bias().value[o];
        for (int c = 0; c < 2; ++c)
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
              const int yi = i + ki - 1, xj = j + kj - 1;
              if (yi < 0 || yi >= 5 || xj < 0 || xj >= 5) continue;
              s += wt.at(o, c, ki, kj) * x.at(0, c, yi, xj);
            }
        EXPECT_NEAR(y.at(0, o, i, j), s, 1e-5);
      }
}

TEST(ConvTranspose2d, OutputShapeAndGradients) {
  Rng rng(3);
  std::mt19937_64 data(3);
  ConvTranspose2d up(3, 2, 4, 2, 1, rng);
  EXPECT_EQ(up.forward(random_tensor(data, {2, 3, 4, 4})).shape(), (Shape{2, 2, 8, 8}));
  ConvTranspose2d first(5, 2, 4, 1, 0, rng);
  EXPECT_EQ(first.forward(random_tensor(data, {1, 5, 1, 1})).shape(), (Shape{1, 2, 4, 4}));
  check_layer(up, random_tensor(data, {2, 3, 3, 3}));
}

TEST(ConvTranspose2d, IsAdjointOfConv) {
  // <conv(x), y> == <x, convT(y)> for shared weights and no bias.
  Rng rng(4);
  std::mt19937_64 data(4);
  Conv2d conv(2, 3, 4, 2, 1, rng, false);
  ConvTranspose2d convt(3, 2, 4, 2, 1, rng, false);
  const auto& wc = conv.weight().value;
  auto& wt = convt.weight().value;
  for (int o = 0; o < 3; ++o)
    for (int c = 0; c < 2; ++c)
      for (int k = 0; k < 16; ++k) wt.at(o, c, k / 4, k % 4) = wc.at(o, c, k / 4, k % 4);
  const Tensor x = random_tensor(data, {1, 2, 8, 8}), y = random_tensor(data, {1, 3, 4, 4});
  EXPECT_NEAR(weighted_sum(conv.forward(x), y), weighted_sum(convt.forward(y), x), 1e-4);
}

TEST(BatchNorm2d, TrainingGradientsAndEvalUsesRunningStats) {
  std::mt19937_64 data(5);
  BatchNorm2d bn(3);
  check_layer(bn, random_tensor(data, {4, 3, 3, 3}, -2, 3), 3e-2);
  const Tensor x = random_tensor(data, {4, 3, 2, 2});
  const Tensor y = bn.forward(x);
  for (int c = 0; c < 3; ++c) {
    double m = 0;
    for (int b = 0; b < 4; ++b)
      for (int k = 0; k < 4; ++k) m += y.at(b, c, k / 2, k % 2);
    EXPECT_NEAR(m / 16, 0.0, 1e-5);
  }
  bn.set_training(false);
  const Tensor a = bn.forward(x.rows(0, 1));
  const Tensor b = bn.forward(x).rows(0, 1);
  EXPECT_EQ(a, b);
}

TEST(Linear, Gradients) {
  Rng rng(6);
  std::mt19937_64 data(6);
  Linear fc(5, 3, rng);
  EXPECT_EQ(fc.forward(random_tensor(data, {2, 5, 1, 1})).shape(), (Shape{2, 3}));
  check_layer(fc, random_tensor(data, {2, 5}));
}

TEST(Activations, Gradients) {
  std::mt19937_64 data(7);
  LeakyReLU lrelu(0.2f);
  ReLU relu;
  Tanh tanh_layer;
  Sigmoid sigmoid;
  for (Layer* l : std::initializer_list<Layer*>{&lrelu, &relu, &tanh_layer, &sigmoid}) {
    Tensor x = random_tensor(data, {2, 2, 3, 3});
    for (auto& v : x.values()) v += v < 0 ? -0.1f : 0.1f;
    check_layer(*l, x);
  }
}

TEST(Clamp, RangeAndGradient) {
  Clamp c(0.0f, 1.0f);
  Tensor x({1, 1, 1, 4});
  x[0] = -0.5f;
  x[1] = 0.5f;
  x[2] = 1.5f;
  x[3] = 0.25f;
  const Tensor y = c.forward(x);
  EXPECT_EQ(y[0], 0.0f);
  EXPECT_EQ(y[1], 0.5f);
  EXPECT_EQ(y[2], 1.0f);
  const Tensor g = c.backward(Tensor({1, 1, 1, 4}, 1.0f));
  EXPECT_EQ(g[0], 0.0f);
  EXPECT_EQ(g[1], 1.0f);
  EXPECT_EQ(g[2], 0.0f);
}

TEST(MaxPool2d, ForwardAndRouting) {
  MaxPool2d pool(2);
  Tensor x({1, 1, 2, 4});
  for (int i = 0; i < 8; ++i) x[i] = static_cast<float>((i * 5) % 8);
  const Tensor y = pool.forward(x);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(y[0], 5.0f);
  EXPECT_EQ(y[1], 7.0f);
  const Tensor g = pool.backward(Tensor({1, 1, 1, 2}, 1.0f));
  double total = 0;
  for (float v : g.values()) total += v;
  EXPECT_EQ(total, 2.0);
  std::mt19937_64 data(8);
  std::vector<int> order(64);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), data);
  Tensor distinct({2, 2, 4, 4});
  for (int i = 0; i < 64; ++i) distinct[i] = 0.1f * order[i];
  check_layer(pool, distinct);
}

TEST(DenseBlock, ShapeAndGradients) {
  Rng rng(9);
  std::mt19937_64 data(9);
  DenseBlock enc(DenseBlock::Kind::encoder, 2, 3, rng);
  EXPECT_EQ(enc.forward(random_tensor(data, {2, 2, 4, 4})).shape(), (Shape{2, 2, 4, 4}));
  check_layer(enc, random_tensor(data, {3, 2, 3, 3}), 8e-2, 3e-3f, true);
  DenseBlock dec(DenseBlock::Kind::decoder, 2, 2, rng);
  EXPECT_EQ(dec.forward(random_tensor(data, {2, 2, 4, 4})).shape(), (Shape{2, 2, 4, 4}));
}

TEST(Sequential, TraceAndParameterNames) {
  Rng rng(10);
  Sequential s;
  s.emplace<Conv2d>("conv", 1, 2, 4, 2, 1, rng);
  s.emplace<BatchNorm2d>("bn", 2);
  s.emplace<ReLU>("act");
  s.forward(Tensor({1, 1, 8, 8}, 0.5f));
  ASSERT_EQ(s.trace().size(), 3u);
  EXPECT_EQ(s.trace()[0].second, (Shape{1, 2, 4, 4}));
  std::vector<NamedParameter> params;
  s.collect_parameters("net.", params);
  std::vector<std::string> names;
  for (const auto& p : params) names.push_back(p.name);
  EXPECT_NE(std::find(names.begin(), names.end(), "net.conv.weight"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "net.bn.running_mean"), names.end());
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p({3}, 1.0f);
  std::vector<NamedParameter> params{{"p", &p}};
  Adam opt(params, AdamOptions{});
  p.grad[0] = 0.5f;
  p.grad[1] = -2.0f;
  p.grad[2] = 0.0f;
  opt.step();
  EXPECT_NEAR(p.value[0], 1.0f - 2e-4f, 1e-7);
  EXPECT_NEAR(p.value[1], 1.0f + 2e-4f, 1e-7);
  EXPECT_EQ(p.value[2], 1.0f);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, ZeroLearningRateLeavesParameters) {
  Parameter p({4}, 0.3f);
  std::vector<NamedParameter> params{{"p", &p}};
  AdamOptions o;
  o.learning_rate = 0.0f;
  Adam opt(params, o);
  p.grad.fill(1.0f);
  opt.step();
  for (float v : p.value.values()) EXPECT_EQ(v, 0.3f);
}
