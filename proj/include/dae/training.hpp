#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dae/image_io.hpp"
#include "dae/losses.hpp"
#include "dae/model_config.hpp"
#include "dae/networks.hpp"
#include "dae/nn/adam.hpp"

namespace dae {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 5e-5;
  std::uint64_t seed = 0;
  ModelConfig model;
  LossWeights weights;
  int checkpoint_every = 1;  // epochs
  std::string output_dir = "runs/dae";
  int sample_count = 8;      // images per row of the per-epoch sample grid

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Thrown when a step produces a non-finite loss or parameter.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, LossReport report) : std::runtime_error(what), report_(report) {}
  const LossReport& report() const { return report_; }

 private:
  LossReport report_;
};

/// Discriminator and its optimizer for the adversarial schedule.
struct Adversary {
  PatchDiscriminator& discriminator;
  nn::Adam& optimizer;
};

/// One optimization step on `batch`. With an adversary: one discriminator
/// update on (batch, detached reconstruction), then one generator update.
/// `labels` is required for the class-aware variant and ignored otherwise.
LossReport train_step(DaeModel& model, const Tensor& batch, std::span<const int> labels, const LossWeights& weights,
                      nn::Adam& optimizer, Adversary* adversary = nullptr);

struct TrainingData {
  Tensor images;            // N x C x H x W
  std::vector<int> labels;  // empty or N entries
};

/// Owns the model, discriminator and optimizer state of one run.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  const TrainConfig& config() const { return cfg_; }
  DaeModel& model() { return *model_; }
  PatchDiscriminator* discriminator() { return disc_.get(); }
  nn::Adam& optimizer() { return *opt_; }

  long step() const { return step_; }
  int epoch() const { return epoch_; }

  /// Single step; writes a diagnostic dump under output_dir/diagnostics and
  /// rethrows if the result is non-finite.
  LossReport train_step(const Tensor& batch, std::span<const int> labels = {});

  /// One pass over `data` in a seeded order derived from (seed, epoch).
  /// `on_step` sees every report; returning false stops the epoch early
  /// (the epoch counter is then not advanced).
  bool run_epoch(const TrainingData& data, const std::function<bool(const LossReport&)>& on_step = {});

  void save_checkpoint(const std::string& path) const;
  /// Restores parameters, optimizer moments, step and epoch. The checkpoint's
  /// model configuration must equal this trainer's.
  void load_checkpoint(const std::string& path);

  /// Batch order for `epoch` (deterministic in seed and epoch).
  std::vector<std::size_t> epoch_order(std::size_t n, int epoch) const;

 private:
  TrainConfig cfg_;
  std::unique_ptr<DaeModel> model_;
  std::unique_ptr<PatchDiscriminator> disc_;
  std::unique_ptr<nn::Adam> opt_;
  std::unique_ptr<nn::Adam> disc_opt_;
  long step_ = 0;
  int epoch_ = 0;
};

/// Contents of a checkpoint file independent of any trainer.
struct Checkpoint {
  TrainConfig config;
  long step = 0;
  int epoch = 0;
  long optimizer_steps = 0;
  long discriminator_steps = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

Checkpoint read_checkpoint(const std::string& path);

/// Model restored from a checkpoint in evaluation mode.
std::unique_ptr<DaeModel> load_model(const std::string& checkpoint_path);

struct LoopOptions {
  bool resume = true;          // continue from the newest checkpoint in output_dir
  long stop_after_steps = -1;  // abort once this global step is reached (crash simulation)
  bool write_samples = true;
  std::function<void(const LossReport&)> on_step;
};

struct LoopResult {
  std::vector<LossReport> history;  // steps run by this invocation
  std::string final_checkpoint;     // empty if stopped early
  int epochs_completed = 0;
  long steps = 0;
  bool stopped = false;
};

/// Full run: seeded training, metrics.csv, per-epoch sample grids,
/// checkpoints every `checkpoint_every` epochs plus a final one.
///   output_dir/metrics.csv
///   output_dir/checkpoints/epoch_XXXX.daec, output_dir/final.daec
///   output_dir/samples/epoch_XXXX.png
LoopResult train_loop(const TrainConfig& cfg, const TrainingData& data, const LoopOptions& options = {});

/// Newest epoch checkpoint under output_dir, or empty.
std::string latest_checkpoint(const std::string& output_dir);

/// Rows of a sample grid for the first images of `batch` (evaluation mode):
/// input, texture, reconstruction, plus shading and albedo for the intrinsic variant.
std::vector<GridRow> sample_rows(DaeModel& model, const Tensor& batch);

}  // namespace dae
