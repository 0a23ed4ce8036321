#pragma once

#include <string>

#include <json.hpp>

namespace dae {

enum class Variant { dae, class_aware, intrinsic };
enum class Backbone { conv, dense };

std::string to_string(Variant v);
std::string to_string(Backbone b);
Variant parse_variant(const std::string& s);
Backbone parse_backbone(const std::string& s);

/// Architecture and latent layout of a deforming autoencoder.
struct ModelConfig {
  Variant variant = Variant::dae;
  Backbone backbone = Backbone::conv;
  int image_side = 64;
  int channels = 1;

  int z_texture = 32;  // may be 0
  int z_affine = 32;
  int z_warp = 32;
  int z_class = 0;     // class_aware only
  int z_shading = 16;  // intrinsic only
  int z_albedo = 16;   // intrinsic only
  int num_classes = 0;

  bool use_affine = true;
  bool use_integral = true;
  bool residual_grid = false;
  bool use_adversarial = false;
  float leaky_slope = 0.2f;

  /// Total encoder output size Nz.
  int latent_dim() const;
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace dae
