#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dae/datasets.hpp"
#include "dae/image_io.hpp"
#include "dae/networks.hpp"
#include "dae/nn/adam.hpp"
#include "dae/nn/layers.hpp"

namespace dae {

// ---------------------------------------------------------------- fields

/// Full sampling fields (affine o local) for every image, computed in
/// evaluation mode. The model's training flag is restored afterwards.
WarpField extract_fields(DaeModel& model, const Tensor& images, int batch_size = 64);

// ------------------------------------------------------------- regressor

struct RegressorConfig {
  int input_dim = 64 * 64 * 2;
  int hidden = 100;
  int output = 10;
  double learning_rate = 1e-3;
  int epochs = 200;
  int batch_size = 64;
  double validation_fraction = 0.1;
  int patience = 20;  // epochs without validation improvement before stopping
  int plateau_patience = 10;  // epochs without improvement before the step size is cut
  double plateau_factor = 0.5;
  std::uint64_t seed = 0;
  int side = 64;      // landmark pixel frame

  void validate() const;
};

void to_json(nlohmann::json& j, const RegressorConfig& c);

struct RegressorFit {
  int epochs_run = 0;
  int best_epoch = 0;
  double best_validation_l1 = 0;  // pixels, mean over coordinates
  double final_training_l1 = 0;   // pixels
};

/// Two-layer perceptron from a flattened field (normalized coordinates, centred
/// on the training mean) to five landmarks in pixel units.
class LandmarkRegressor {
 public:
  explicit LandmarkRegressor(const RegressorConfig& cfg);

  const RegressorConfig& config() const { return cfg_; }

  /// N x input_dim normalized fields -> N x 10 normalized coordinates
  /// ordered x1 y1 x2 y2 ... x5 y5.
  Tensor forward(const Tensor& flat_fields);
  Tensor backward(const Tensor& grad);
  std::vector<nn::NamedParameter> parameters();

  std::vector<LandmarkSet> predict(const WarpField& fields);

  /// Per-coordinate mean subtracted from every input row (1 x input_dim, or
  /// empty for none). fit_landmark_regressor sets it to the training mean.
  void set_input_mean(Tensor mean);
  const Tensor& input_mean() const { return input_mean_; }

 private:
  RegressorConfig cfg_;
  Tensor input_mean_;
  nn::Rng rng_;
  nn::Linear hidden_;
  nn::ReLU act_;
  nn::Linear out_;
};

/// Trains a regressor with L1 loss and validation early stopping; the best
/// validation weights are kept. Only the regressor's own parameters change.
std::unique_ptr<LandmarkRegressor> fit_landmark_regressor(const WarpField& fields,
                                                          std::span<const LandmarkSet> landmarks,
                                                          const RegressorConfig& cfg, RegressorFit* fit = nullptr);

// ---------------------------------------------------------------- metric

/// Mean Euclidean error over the five landmarks as a percentage of the
/// distance between the two eyes of `truth`.
double interocular_error(const LandmarkSet& pred, const LandmarkSet& truth);

struct EvalReport {
  std::string protocol;  // "regressor" or "template"
  double mean_error = 0;  // percent of inter-ocular distance
  std::array<double, 5> per_landmark{};
  std::size_t count = 0;

  nlohmann::json to_json() const;
  std::string csv() const;
};

EvalReport evaluate_landmarks(std::span<const LandmarkSet> pred, std::span<const LandmarkSet> truth,
                              const std::string& protocol);

// ---------------------------------------------------------- interpolation

struct Interpolation {
  std::vector<double> lambdas;  // 1 -> source, 0 -> target parts
  Tensor reconstructions;       // steps x C x H x W
  Tensor textures;
  Tensor shading;               // intrinsic only
  Tensor albedo;                // intrinsic only
};

/// Z(lambda) = lambda * Z_src + (1 - lambda) * Z_tgt on the selected parts;
/// all other parts stay at the source values. lambda runs from 1 to 0.
Interpolation interpolate_latents(DaeModel& model, const Tensor& source, const Tensor& target,
                                  std::span<const LatentPart> parts, int steps);

/// Horizontal mirror of N x C x H x W images.
Tensor mirror(const Tensor& images);

// ------------------------------------------------------------- alignment

struct AlignmentDiagnostics {
  Tensor average_input;     // 1 x C x H x W
  Tensor average_texture;   // 1 x C x H x W
  Tensor texture_variance;  // 1 x C x H x W, per pixel over the set
  Tensor input_variance;
  double mean_texture_variance = 0;
  double mean_input_variance = 0;
  WarpField mean_field;     // 1 x H x W x 2
  // First few items for figure rows.
  Tensor inputs;
  Tensor reconstructions;
  Tensor textures;
  Tensor warped_by_mean;    // textures resampled with the mean field
};

AlignmentDiagnostics alignment_diagnostics(DaeModel& model, const Tensor& images, int preview = 8,
                                           int batch_size = 64);

/// Average decoded texture per class label: K x C x H x W (classes without
/// images stay zero).
Tensor class_average_textures(DaeModel& model, const Tensor& images, std::span<const int> labels, int num_classes,
                              int batch_size = 64);

/// Rows in the order: inputs, reconstructions, textures warped by the mean
/// field, average input, average texture.
std::vector<GridRow> alignment_rows(const AlignmentDiagnostics& d);

/// Decomposition panels, evaluation mode. Intrinsic: input, shading, albedo,
/// texture, shading warped, albedo warped, reconstruction. Otherwise: input,
/// texture, reconstruction.
std::vector<GridRow> decomposition_rows(DaeModel& model, const Tensor& images);

// --------------------------------------------------- template annotations

/// Maps landmarks annotated on the template (average texture, pixel units)
/// into each image: for every field, finds the image position whose sampling
/// coordinate equals the template point (nearest grid node, then Newton
/// refinement on the bilinear interpolant).
std::vector<LandmarkSet> map_template_landmarks(const LandmarkSet& template_points, const WarpField& fields);

/// Image position (pixels) whose field value is `target` (normalized), for batch item `index`.
Point2 invert_field(const WarpField& fields, int index, Point2 target);

}  // namespace dae
