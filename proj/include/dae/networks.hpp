#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dae/model_config.hpp"
#include "dae/nn/layers.hpp"
#include "dae/tensor.hpp"
#include "dae/warp_core.hpp"

namespace dae {

enum class LatentPart { texture, shading, albedo, class_code, affine, warp };

std::string to_string(LatentPart p);
LatentPart parse_latent_part(const std::string& s);

/// Encoder output split into its partitions, each N x dim.
/// Concatenation order: [Z_T | Z_C | Z_A | Z_W]; the intrinsic variant uses
/// [Z_shading | Z_albedo | Z_C | Z_A | Z_W].
struct LatentCode {
  Tensor texture;
  Tensor shading;
  Tensor albedo;
  Tensor class_code;
  Tensor affine;
  Tensor warp;

  int batch() const { return warp.rank() ? warp.dim(0) : 0; }
  Tensor& part(LatentPart p);
  const Tensor& part(LatentPart p) const;

  static LatentCode split(const Tensor& z, const ModelConfig& cfg);
  Tensor concat(const ModelConfig& cfg) const;
};

// Appendix-style backbones. Encoders map N x C x 64 x 64 to N x Nz x 1 x 1 in
// (0, 1); decoders map N x d x 1 x 1 to N x C x 64 x 64. Each top-level child of
// the returned Sequential is one row of the architecture tables.
std::unique_ptr<nn::Sequential> make_conv_encoder(int channels, int latent_dim, float leaky_slope, nn::Rng& rng);
std::unique_ptr<nn::Sequential> make_conv_decoder(int input_dim, int out_channels, bool clamp_unit, nn::Rng& rng);
std::unique_ptr<nn::Sequential> make_dense_encoder(int channels, int latent_dim, nn::Rng& rng);
std::unique_ptr<nn::Sequential> make_dense_decoder(int input_dim, int out_channels, bool clamp_unit, nn::Rng& rng);

/// Spatial side of the discriminator's logit map for 64 x 64 inputs.
inline constexpr int kPatchLogitSide = 7;

/// Patch-wise real/fake discriminator: three stride-2 conv blocks and a 4x4 head.
class PatchDiscriminator {
 public:
  PatchDiscriminator(int channels, std::uint64_t seed);
  Tensor forward(const Tensor& images);
  Tensor backward(const Tensor& grad_logits);
  std::vector<nn::NamedParameter> parameters();
  void set_training(bool on) { net_->set_training(on); }
  nn::Sequential& network() { return *net_; }

 private:
  std::unique_ptr<nn::Sequential> net_;
};

struct DaeOutputs {
  Tensor reconstruction;  // image frame
  Tensor texture;         // template frame; S o A for the intrinsic variant
  Tensor shading;         // intrinsic only
  Tensor albedo;          // intrinsic only
  Tensor raw_warp;        // N x 2 x H x W warp decoder output before clamping
  DifferentialWarp increments;
  WarpField local;        // integrated (or residual) non-rigid field
  WarpField field;        // affine o local, used for resampling
  std::vector<AffineParams> thetas;
  Tensor class_logits;    // class_aware only
  LatentCode latents;
};

/// Loss gradients with respect to the exposed intermediate products; empty
/// members are treated as zero.
struct DaeGradients {
  Tensor reconstruction;
  Tensor texture;
  Tensor shading;
  Tensor albedo;
  DifferentialWarp increments;
  WarpField local;
  std::vector<AffineParams> thetas;
  Tensor class_logits;
};

/// Deforming autoencoder covering the plain, class-aware and intrinsic variants.
class DaeModel {
 public:
  DaeModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  LatentCode encode(const Tensor& images);
  DaeOutputs decode(const LatentCode& z);
  DaeOutputs forward(const Tensor& images);

  /// Called with the outputs of every decode (training and evaluation alike).
  void set_forward_observer(std::function<void(const DaeOutputs&)> f) { observer_ = std::move(f); }

  /// Back-propagates through the latest forward() and accumulates parameter gradients.
  void backward(const DaeGradients& grads);

  /// Class logits from Z_C; throws ConfigError for variants without a class code.
  Tensor class_head(const Tensor& z_class);

  std::vector<nn::NamedParameter> parameters();
  void set_training(bool on);
  bool training() const { return training_; }

  nn::Sequential& encoder() { return *encoder_; }
  nn::Sequential& texture_decoder() { return *texture_decoder_; }
  nn::Sequential& warp_decoder() { return *warp_decoder_; }

 private:
  Tensor appearance_input(const Tensor& code, const LatentCode& z) const;
  Tensor warp_input(const LatentCode& z) const;

  ModelConfig cfg_;
  bool training_ = true;
  std::unique_ptr<nn::Sequential> encoder_;
  std::unique_ptr<nn::Sequential> texture_decoder_;  // also the shading decoder for the intrinsic variant
  std::unique_ptr<nn::Sequential> albedo_decoder_;
  std::unique_ptr<nn::Sequential> warp_decoder_;
  std::unique_ptr<nn::Linear> affine_head_;
  std::unique_ptr<nn::Linear> classifier_;

  DaeOutputs cache_;
  std::function<void(const DaeOutputs&)> observer_;
  bool has_cache_ = false;
  bool encoded_ = false;
};

}  // namespace dae
