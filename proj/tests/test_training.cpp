#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "dae/training.hpp"
#include "helpers.hpp"

using namespace dae;
using testutil::from_vec;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model() {
  ModelConfig m;
  m.z_texture = 4;
  m.z_affine = 4;
  m.z_warp = 8;
  return m;
}

Tensor toy_images(std::uint64_t seed, int n, int c = 1) {
  // Smooth blobs at random offsets: structured enough that alignment helps.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> off(-8, 8), rad(8, 14);
  Tensor x({n, c, 64, 64});
  for (int b = 0; b < n; ++b) {
    const double cx = 32 + off(rng), cy = 32 + off(rng), r = rad(rng);
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < 64; ++i)
        for (int j = 0; j < 64; ++j) {
          const double d2 = (j - cx) * (j - cx) + (i - cy) * (i - cy);
          x.at(b, ch, i, j) = static_cast<float>(std::exp(-d2 / (2 * r * r)));
        }
  }
  return x;
}

std::vector<Tensor> snapshot(const std::vector<nn::NamedParameter>& params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(p.param->value);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

TrainConfig loop_config(const std::string& dir) {
  TrainConfig cfg;
  cfg.model = small_model();
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 21;
  cfg.output_dir = dir;
  cfg.sample_count = 2;
  return cfg;
}

}  // namespace

TEST(TrainStep, ZeroLearningRateLeavesParameters) {
  DaeModel model(small_model(), 1);
  auto params = model.parameters();
  nn::AdamOptions o;
  o.learning_rate = 0.0f;
  nn::Adam opt(params, o);
  const auto before = snapshot(params);
  const LossReport r = train_step(model, toy_images(2, 4), {}, LossWeights{}, opt);
  EXPECT_TRUE(std::isfinite(r.total));
  EXPECT_GT(r.recon, 0.0);
  EXPECT_EQ(r.step, 1);
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].param->trainable) {
      EXPECT_EQ(params[k].param->value, before[k]) << params[k].name;
    }
  }
}

TEST(TrainStep, TwoStepsDoNotIncreaseLossOnFixedBatch) {
  int non_increasing = 0;
  const int trials = 50;
  for (int t = 0; t < trials; ++t) {
    DaeModel model(small_model(), 100 + t);
    nn::AdamOptions o;
    o.learning_rate = 5e-5f;
    nn::Adam opt(model.parameters(), o);
    const Tensor batch = toy_images(500 + t, 2);
    const double before = train_step(model, batch, {}, LossWeights{}, opt).total;
    train_step(model, batch, {}, LossWeights{}, opt);
    const double after = train_step(model, batch, {}, LossWeights{}, opt).total;
    if (after <= before) ++non_increasing;
  }
  EXPECT_GE(non_increasing, 48) << non_increasing << " of " << trials;
}

TEST(TrainStep, ClassAwareReportsCrossEntropy) {
  ModelConfig m = small_model();
  m.variant = Variant::class_aware;
  m.z_class = 4;
  m.num_classes = 3;
  DaeModel model(m, 3);
  nn::Adam opt(model.parameters(), nn::AdamOptions{});
  const std::vector<int> labels{0, 2, 1};
  const LossReport r = train_step(model, toy_images(4, 3), labels, LossWeights{}, opt);
  EXPECT_GT(r.ce, 0.0);
  EXPECT_NEAR(r.total, r.recon + r.smooth + r.bias + r.ce, 1e-9);
  EXPECT_THROW(train_step(model, toy_images(4, 3), {}, LossWeights{}, opt), InvalidInput);
}

TEST(TrainStep, IntrinsicReportsShade) {
  ModelConfig m = small_model();
  m.variant = Variant::intrinsic;
  m.channels = 3;
  m.z_shading = 4;
  m.z_albedo = 4;
  DaeModel model(m, 5);
  nn::Adam opt(model.parameters(), nn::AdamOptions{});
  LossWeights w;
  w.shade = 1.0;
  const LossReport r = train_step(model, toy_images(6, 2, 3), {}, w, opt);
  EXPECT_GT(r.shade, 0.0);
  EXPECT_NEAR(r.total, r.recon + r.smooth + r.bias + r.shade, 1e-9);
}

TEST(TrainStep, AdversarialUpdatesBothPlayers) {
  ModelConfig m = small_model();
  m.use_adversarial = true;
  DaeModel model(m, 7);
  PatchDiscriminator disc(1, 8);
  nn::Adam opt(model.parameters(), nn::AdamOptions{});
  nn::Adam dopt(disc.parameters(), nn::AdamOptions{});
  const auto d_before = snapshot(disc.parameters());
  Adversary adv{disc, dopt};
  const LossReport r = train_step(model, toy_images(9, 2), {}, LossWeights{}, opt, &adv);
  EXPECT_GT(r.adv_g, 0.0);
  EXPECT_GT(r.adv_d, 0.0);
  EXPECT_NEAR(r.total, r.recon + r.smooth + r.bias + 0.1 * r.adv_g, 1e-9);
  EXPECT_EQ(dopt.steps(), 1);
  const auto d_params = disc.parameters();
  bool changed = false;
  for (std::size_t k = 0; k < d_params.size(); ++k) changed |= !(d_params[k].param->value == d_before[k]);
  EXPECT_TRUE(changed);
}

TEST(TrainStep, NonFiniteLossAbortsWithDiagnostics) {
  const std::string dir = testutil::scratch_dir("nonfinite");
  TrainConfig cfg = loop_config(dir);
  Trainer trainer(cfg);
  Tensor batch = toy_images(10, 2);
  batch[5] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(trainer.train_step(batch), NonFiniteError);
  EXPECT_TRUE(fs::exists(fs::path(dir) / "diagnostics" / "step_1" / "report.json"));
  EXPECT_TRUE(fs::exists(fs::path(dir) / "diagnostics" / "step_1" / "batch.f32"));
  EXPECT_EQ(trainer.step(), 0);
}

TEST(Checkpoint, RoundTripRestoresParametersAndOutputs) {
  const std::string dir = testutil::scratch_dir("ckpt");
  TrainConfig cfg = loop_config(dir);
  Trainer a(cfg);
  const Tensor batch = toy_images(11, 4);
  a.train_step(batch);
  a.train_step(batch);
  const std::string path = dir + "/a.daec";
  a.save_checkpoint(path);

  Trainer b(cfg);
  b.load_checkpoint(path);
  EXPECT_EQ(b.step(), a.step());
  EXPECT_EQ(b.optimizer().steps(), a.optimizer().steps());
  const auto pa = a.model().parameters(), pb = b.model().parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k].param->value, pb[k].param->value) << pa[k].name;
  for (std::size_t k = 0; k < a.optimizer().first_moments().size(); ++k) {
    EXPECT_EQ(a.optimizer().first_moments()[k], b.optimizer().first_moments()[k]);
    EXPECT_EQ(a.optimizer().second_moments()[k], b.optimizer().second_moments()[k]);
  }

  a.model().set_training(false);
  auto loaded = load_model(path);
  const Tensor ra = a.model().forward(batch).reconstruction;
  const Tensor rb = loaded->forward(batch).reconstruction;
  for (std::size_t i = 0; i < ra.size(); ++i) ASSERT_NEAR(ra[i], rb[i], 1e-7);

  // Identical continuation after restore.
  a.model().set_training(true);
  EXPECT_EQ(a.train_step(batch).total, b.train_step(batch).total);
}

TEST(Checkpoint, RejectsWrongConfigVersionAndForeignFiles) {
  const std::string dir = testutil::scratch_dir("ckpt_bad");
  TrainConfig cfg = loop_config(dir);
  Trainer a(cfg);
  const std::string path = dir + "/a.daec";
  a.save_checkpoint(path);

  TrainConfig other = cfg;
  other.model.z_warp = 16;
  Trainer b(other);
  EXPECT_THROW(b.load_checkpoint(path), ConfigError);

  std::string bytes = slurp(path);
  const std::uint32_t bumped = kCheckpointVersion + 1;
  std::memcpy(bytes.data() + 4, &bumped, sizeof bumped);
  const std::string wrong_version = dir + "/v.daec";
  std::ofstream(wrong_version, std::ios::binary) << bytes;
  EXPECT_THROW(read_checkpoint(wrong_version), ConfigError);

  const std::string foreign = dir + "/f.daec";
  std::ofstream(foreign) << "not a checkpoint";
  EXPECT_THROW(read_checkpoint(foreign), InvalidInput);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.epochs = 3;
  c.model.variant = Variant::intrinsic;
  c.weights.shade = 0.5;
  const TrainConfig back = nlohmann::json(c).get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
  nlohmann::json bad = c;
  bad["epochs"] = 0;
  EXPECT_THROW(bad.get<TrainConfig>(), InvalidInput);
  nlohmann::json unknown = c;
  unknown["epohcs"] = 3;
  EXPECT_THROW(unknown.get<TrainConfig>(), InvalidInput);
}

TEST(TrainLoop, SeededRunsProduceIdenticalMetrics) {
  const TrainingData data{toy_images(12, 8), {}};
  const std::string d1 = testutil::scratch_dir("loop1"), d2 = testutil::scratch_dir("loop2");
  const LoopResult r1 = train_loop(loop_config(d1), data);
  const LoopResult r2 = train_loop(loop_config(d2), data);
  EXPECT_EQ(r1.steps, 4);
  EXPECT_EQ(slurp(fs::path(d1) / "metrics.csv"), slurp(fs::path(d2) / "metrics.csv"));
  EXPECT_TRUE(fs::exists(fs::path(d1) / "final.daec"));
  EXPECT_TRUE(fs::exists(fs::path(d1) / "checkpoints" / "epoch_0001.daec"));
  EXPECT_TRUE(fs::exists(fs::path(d1) / "samples" / "epoch_0002.png"));
  std::istringstream csv(slurp(fs::path(d1) / "metrics.csv"));
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, LossReport::csv_header());
}

TEST(TrainLoop, CrashAndResumeReplaysTrajectory) {
  const TrainingData data{toy_images(13, 8), {}};
  const std::string full = testutil::scratch_dir("resume_full"), crashed = testutil::scratch_dir("resume_crash");
  TrainConfig cfg = loop_config(full);
  cfg.epochs = 3;
  train_loop(cfg, data);

  cfg.output_dir = crashed;
  LoopOptions crash;
  crash.stop_after_steps = 3;  // mid-way through the second epoch
  const LoopResult partial = train_loop(cfg, data, crash);
  EXPECT_TRUE(partial.stopped);
  EXPECT_EQ(latest_checkpoint(crashed), (fs::path(crashed) / "checkpoints" / "epoch_0001.daec").string());
  const LoopResult resumed = train_loop(cfg, data);
  ASSERT_FALSE(resumed.history.empty());
  EXPECT_EQ(resumed.history.front().step, 3);  // continues after the saved step 2
  EXPECT_EQ(slurp(fs::path(full) / "metrics.csv"), slurp(fs::path(crashed) / "metrics.csv"));

  auto a = load_model((fs::path(full) / "final.daec").string());
  auto b = load_model((fs::path(crashed) / "final.daec").string());
  const auto pa = a->parameters(), pb = b->parameters();
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_EQ(pa[k].param->value, pb[k].param->value) << pa[k].name;
}

TEST(TrainLoop, RejectsMismatchedData) {
  const std::string dir = testutil::scratch_dir("loop_bad");
  EXPECT_THROW(train_loop(loop_config(dir), TrainingData{toy_images(1, 4, 3), {}}), InvalidInput);
  TrainConfig cfg = loop_config(dir);
  cfg.model.variant = Variant::class_aware;
  cfg.model.z_class = 2;
  cfg.model.num_classes = 2;
  EXPECT_THROW(train_loop(cfg, TrainingData{toy_images(1, 4), {}}), InvalidInput);
}
