#include <gtest/gtest.h>

#include <random>

#include "dae/losses.hpp"
#include "dae/networks.hpp"
#include "dae/nn/adam.hpp"
#include "helpers.hpp"

using namespace dae;
using testutil::from_vec;
using testutil::to_vec;

namespace {

Tensor random_images(std::uint64_t seed, int n, int c = 1) {
  std::mt19937_64 rng(seed);
  return from_vec<float>({n, c, 64, 64}, oracle::uniform(rng, static_cast<std::size_t>(n) * c * 64 * 64, 0, 1));
}

// Trace rows as (h, w, c) like the architecture tables.
std::vector<std::array<int, 3>> hwc(const nn::Sequential& net) {
  std::vector<std::array<int, 3>> rows;
  for (const auto& [name, s] : net.trace()) rows.push_back({s[2], s[3], s[1]});
  return rows;
}

using Rows = std::vector<std::array<int, 3>>;

}  // namespace

TEST(ConvEncoder, ShapeTraceFollowsTable) {
  nn::Rng rng(1);
  auto enc = make_conv_encoder(3, 96, 0.2f, rng);
  const Tensor z = enc->forward(random_images(1, 2, 3));
  EXPECT_EQ(hwc(*enc), (Rows{{32, 32, 32}, {16, 16, 64}, {8, 8, 128}, {4, 4, 256}, {1, 1, 96}}));
  for (float v : z.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(ConvDecoder, ShapeTraceAndUnitRange) {
  nn::Rng rng(2);
  auto dec = make_conv_decoder(40, 3, true, rng);
  std::mt19937_64 data(2);
  const Tensor out = dec->forward(from_vec<float>({2, 40, 1, 1}, oracle::uniform(data, 80, 0, 1)));
  EXPECT_EQ(hwc(*dec), (Rows{{4, 4, 256}, {8, 8, 128}, {16, 16, 64}, {32, 32, 32}, {64, 64, 32}, {64, 64, 3}}));
  for (float v : out.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(DenseEncoder, ShapeTraceFollowsTable) {
  nn::Rng rng(3);
  auto enc = make_dense_encoder(3, 96, rng);
  enc->forward(random_images(3, 2, 3));
  EXPECT_EQ(hwc(*enc), (Rows{{32, 32, 32},
                             {32, 32, 32},
                             {16, 16, 64},
                             {16, 16, 64},
                             {8, 8, 128},
                             {8, 8, 128},
                             {4, 4, 256},
                             {4, 4, 256},
                             {1, 1, 96}}));
}

TEST(DenseDecoder, ShapeTraceFollowsTable) {
  nn::Rng rng(4);
  auto dec = make_dense_decoder(32, 3, true, rng);
  std::mt19937_64 data(4);
  dec->forward(from_vec<float>({2, 32, 1, 1}, oracle::uniform(data, 64, 0, 1)));
  EXPECT_EQ(hwc(*dec), (Rows{{4, 4, 256},
                             {4, 4, 256},
                             {8, 8, 128},
                             {8, 8, 128},
                             {16, 16, 64},
                             {16, 16, 64},
                             {32, 32, 32},
                             {32, 32, 32},
                             {64, 64, 32},
                             {64, 64, 3}}));
}

TEST(LatentCode, PartitionArithmeticAndOrder) {
  ModelConfig cfg;
  cfg.z_texture = 32;
  cfg.z_affine = 32;
  cfg.z_warp = 32;
  EXPECT_EQ(cfg.latent_dim(), 96);
  Tensor z({1, 96});
  for (int k = 0; k < 96; ++k) z[k] = static_cast<float>(k);
  const auto code = LatentCode::split(z, cfg);
  EXPECT_EQ(code.texture.dim(1), 32);
  EXPECT_EQ(code.affine.dim(1), 32);
  EXPECT_EQ(code.warp.dim(1), 32);
  EXPECT_EQ(code.texture[0], 0.0f);
  EXPECT_EQ(code.affine[0], 32.0f);
  EXPECT_EQ(code.warp[0], 64.0f);
  EXPECT_EQ(code.concat(cfg), z);

  cfg.variant = Variant::class_aware;
  cfg.z_class = 8;
  cfg.num_classes = 10;
  Tensor zc({1, cfg.latent_dim()});
  for (int k = 0; k < zc.dim(1); ++k) zc[k] = static_cast<float>(k);
  const auto c2 = LatentCode::split(zc, cfg);
  EXPECT_EQ(c2.class_code[0], 32.0f);  // [Z_T | Z_C | Z_A | Z_W]
  EXPECT_EQ(c2.affine[0], 40.0f);
}

TEST(DaeModel, IdenticalImagesGiveIdenticalLatents) {
  ModelConfig cfg;
  DaeModel model(cfg, 5);
  Tensor x = random_images(5, 1);
  Tensor pair({2, 1, 64, 64});
  std::copy_n(x.data(), x.size(), pair.data());
  std::copy_n(x.data(), x.size(), pair.data() + x.size());
  const auto z = model.encode(pair).concat(cfg);
  for (int k = 0; k < cfg.latent_dim(); ++k) EXPECT_EQ(z[k], z[cfg.latent_dim() + k]);
}

TEST(DaeModel, RejectsWrongInputSize) {
  DaeModel model(ModelConfig{}, 1);
  EXPECT_THROW(model.forward(Tensor({1, 1, 32, 32})), InvalidInput);
  EXPECT_THROW(model.forward(Tensor({1, 3, 64, 64})), InvalidInput);
}

TEST(DaeModel, IdentityPipelineReproducesTexture) {
  ModelConfig cfg;
  DaeModel model(cfg, 6);
  model.set_training(false);
  auto out = model.forward(random_images(6, 2));
  const auto local = integrate(DifferentialWarp{Tensor({2, 64, 64}, identity_increment<float>(64)),
                                                Tensor({2, 64, 64}, identity_increment<float>(64))});
  const auto recon = bilinear_sample(out.texture, compose(AffineParams::identity(), local));
  EXPECT_LE(oracle::max_abs_diff(to_vec(recon), to_vec(out.texture)), 1e-6);
}

TEST(DaeModel, StartsNearIdentity) {
  DaeModel model(ModelConfig{}, 7);
  model.set_training(false);
  const auto out = model.forward(random_images(7, 2));
  EXPECT_LE(oracle::max_abs_diff(to_vec(out.field.grid), to_vec(identity_field(2, 64, 64).grid)), 0.05);
  for (const auto& t : out.thetas) EXPECT_EQ(t, AffineParams::identity());
}

TEST(DaeModel, ZeroTextureCodeGivesInputIndependentTexture) {
  ModelConfig cfg;
  cfg.z_texture = 0;
  DaeModel model(cfg, 8);
  model.set_training(false);
  const auto a = model.forward(random_images(8, 1));
  const auto b = model.forward(random_images(9, 1));
  EXPECT_EQ(a.texture, b.texture);
}

TEST(DaeModel, ClassHead) {
  ModelConfig cfg;
  cfg.variant = Variant::class_aware;
  cfg.z_class = 16;
  cfg.num_classes = 10;
  DaeModel model(cfg, 9);
  const Tensor zc({3, 16}, 0.5f);
  const Tensor logits = model.class_head(zc);
  EXPECT_EQ(logits.shape(), (Shape{3, 10}));
  for (int k = 0; k < 10; ++k) EXPECT_EQ(logits.at(0, k), logits.at(2, k));
  DaeModel plain(ModelConfig{}, 9);
  EXPECT_THROW(plain.class_head(zc), ConfigError);
  const auto out = model.forward(random_images(10, 3));
  EXPECT_EQ(out.class_logits.shape(), (Shape{3, 10}));
}

TEST(DaeModel, IntrinsicHadamardIdentity) {
  ModelConfig cfg;
  cfg.variant = Variant::intrinsic;
  cfg.channels = 3;
  DaeModel model(cfg, 10);
  const auto out = model.forward(random_images(11, 2, 3));
  for (std::size_t i = 0; i < out.texture.size(); ++i) {
    EXPECT_NEAR(out.texture[i], out.shading[i] * out.albedo[i], 1e-6);
  }
  // With S or A forced to one, T equals the other factor.
  Tensor ones(out.shading.shape(), 1.0f);
  for (std::size_t i = 0; i < ones.size(); ++i) {
    EXPECT_EQ(ones[i] * out.albedo[i], out.albedo[i]);
    EXPECT_EQ(out.shading[i] * ones[i], out.shading[i]);
  }
}

TEST(DaeModel, ResidualGridVariantRuns) {
  ModelConfig cfg;
  cfg.residual_grid = true;
  DaeModel model(cfg, 11);
  const auto out = model.forward(random_images(12, 2));
  EXPECT_TRUE(out.increments.dx.empty());
  EXPECT_LE(oracle::max_abs_diff(to_vec(out.local.grid), to_vec(identity_field(2, 64, 64).grid)), 0.05);
}

TEST(DaeModel, TrainingSmokeStaysFiniteAndInRange) {
  ModelConfig cfg;
  cfg.z_texture = 4;
  cfg.z_affine = 4;
  cfg.z_warp = 4;
  DaeModel model(cfg, 12);
  auto params = model.parameters();
  nn::Adam opt(params, nn::AdamOptions{1e-3f});
  const Tensor x = random_images(13, 2);
  for (int step = 0; step < 100; ++step) {
    opt.zero_grad();
    const auto out = model.forward(x);
    ASSERT_TRUE(out.reconstruction.all_finite()) << "step " << step;
    for (float v : out.reconstruction.values()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
    DaeGradients g;
    recon_l2(out.reconstruction, x, &g.reconstruction);
    model.backward(g);
    opt.step();
  }
  for (const auto& p : params) EXPECT_TRUE(p.param->value.all_finite()) << p.name;
}

TEST(DaeModel, EndToEndGradientMatchesFiniteDifferences) {
  // Reconstruction loss derivative w.r.t. one encoder weight and one warp-head bias.
  ModelConfig cfg;
  cfg.z_texture = 2;
  cfg.z_affine = 2;
  cfg.z_warp = 2;
  DaeModel model(cfg, 13);
  model.set_training(false);
  const Tensor x = random_images(14, 1);
  auto loss = [&] { return oracle::mse(to_vec(model.forward(x).reconstruction), to_vec(x)); };
  auto params = model.parameters();
  // Dead ReLU regions put the zero-initialized output bias exactly on the clamp's
  // lower edge, where central differences are one-sided.
  for (auto& p : params) {
    if (p.name == "texture_decoder.output.convt.bias") p.param->value.fill(0.3f);
  }
  nn::zero_grad(params);
  DaeGradients g;
  recon_l2(model.forward(x).reconstruction, x, &g.reconstruction);
  model.backward(g);
  int checked = 0;
  for (auto& p : params) {
    if (!p.param->trainable) continue;
    if (p.name != "texture_decoder.output.convt.bias" && p.name != "affine_head.bias") continue;
    for (std::size_t i = 0; i < std::min<std::size_t>(p.param->value.size(), 3); ++i) {
      float& v = p.param->value[i];
      const float keep = v, h = 1e-2f;
      v = keep + h;
      const double up = loss();
      v = keep - h;
      const double down = loss();
      v = keep;
      const double num = (up - down) / (2 * h);
      EXPECT_NEAR(p.param->grad[i], num, 2e-2 * std::max(std::abs(num), 1e-3)) << p.name << "[" << i << "]";
      ++checked;
    }
  }
  EXPECT_GT(checked, 0);
}

TEST(PatchDiscriminator, LogitMapShape) {
  PatchDiscriminator d(3, 1);
  d.set_training(false);
  const Tensor x = random_images(15, 2, 3);
  const Tensor l = d.forward(x);
  EXPECT_EQ(l.shape(), (Shape{2, 1, kPatchLogitSide, kPatchLogitSide}));
  EXPECT_GT(kPatchLogitSide, 1);
  EXPECT_EQ(l, d.forward(x));
}
