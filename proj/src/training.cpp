#include "dae/training.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace dae {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

// ------------------------------------------------------------------ config

void TrainConfig::validate() const {
  if (epochs <= 0) throw InvalidInput("epochs must be positive");
  if (batch_size <= 0) throw InvalidInput("batch_size must be positive");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidInput("learning_rate must be finite and non-negative");
  }
  if (checkpoint_every <= 0) throw InvalidInput("checkpoint_every must be positive");
  if (sample_count < 0) throw InvalidInput("sample_count must be non-negative");
  if (output_dir.empty()) throw InvalidInput("output_dir must not be empty");
  model.validate();
  weights.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"seed", c.seed},
                     {"model", c.model},
                     {"weights", c.weights},
                     {"checkpoint_every", c.checkpoint_every},
                     {"output_dir", c.output_dir},
                     {"sample_count", c.sample_count}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> known = {"epochs", "batch_size", "learning_rate", "seed",       "model",
                                              "weights", "checkpoint_every", "output_dir", "sample_count"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw InvalidInput("unknown training config key '" + key + "'");
  }
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("weights")) c.weights = j.at("weights").get<LossWeights>();
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.output_dir = j.value("output_dir", c.output_dir);
  c.sample_count = j.value("sample_count", c.sample_count);
  c.validate();
}

// -------------------------------------------------------------------- step

namespace {

bool all_finite(const std::vector<nn::NamedParameter>& params, std::string* bad) {
  for (const auto& p : params) {
    if (!p.param->value.all_finite()) {
      if (bad) *bad = p.name;
      return false;
    }
  }
  return true;
}

}  // namespace

LossReport train_step(DaeModel& model, const Tensor& batch, std::span<const int> labels, const LossWeights& weights,
                      nn::Adam& optimizer, Adversary* adversary) {
  const ModelConfig& cfg = model.config();
  if (batch.rank() != 4 || batch.dim(1) != cfg.channels || batch.dim(2) != cfg.image_side ||
      batch.dim(3) != cfg.image_side) {
    throw InvalidInput("train_step: batch shape " + shape_string(batch.shape()) + " does not match the model");
  }
  const int n = batch.dim(0);
  if (cfg.variant == Variant::class_aware && static_cast<int>(labels.size()) != n) {
    throw InvalidInput("train_step: class-aware training needs one label per image");
  }
  model.set_training(true);
  DaeOutputs out = model.forward(batch);
  LossParts parts;

  if (adversary) {
    PatchDiscriminator& d = adversary->discriminator;
    d.set_training(true);
    adversary->optimizer.zero_grad();
    const Tensor real = d.forward(batch);
    const Tensor fake = d.forward(out.reconstruction);
    const auto terms = adversarial_pair(real, fake);
    d.backward(terms.grad_discriminator_fake);
    d.forward(batch);
    d.backward(terms.grad_discriminator_real);
    parts.adv_d = terms.discriminator;
    if (!std::isfinite(terms.discriminator)) {
      LossReport r;
      r.adv_d = terms.discriminator;
      throw NonFiniteError("non-finite discriminator loss", r);
    }
    adversary->optimizer.step();
  }

  DaeGradients g;
  parts.recon = recon_l2(out.reconstruction, batch, &g.reconstruction, weights.reduction);
  if (cfg.use_integral && !cfg.residual_grid) {
    parts.smooth = smooth_tv(out.increments, static_cast<float>(weights.smooth), &g.increments,
                             weights.regularizer_reduction);
  } else {
    parts.smooth = 0.0;
  }
  parts.bias = bias_reduce(std::span<const AffineParams>(out.thetas), out.local, static_cast<float>(weights.bias_affine),
                           static_cast<float>(weights.bias_field), &g.thetas, &g.local, weights.reduction);
  if (cfg.variant == Variant::intrinsic) {
    parts.shade = shade_smooth(out.shading, static_cast<float>(weights.shade), &g.shading,
                               weights.regularizer_reduction);
  }
  if (cfg.variant == Variant::class_aware) {
    parts.ce = cross_entropy(out.class_logits, labels, &g.class_logits);
    g.class_logits *= static_cast<float>(weights.class_weight);
  }
  if (adversary) {
    PatchDiscriminator& d = adversary->discriminator;
    const Tensor fake = d.forward(out.reconstruction);
    const auto terms = adversarial_pair(fake, fake);
    Tensor grad = terms.grad_generator_fake;
    grad *= static_cast<float>(weights.adversarial);
    g.reconstruction += d.backward(grad);
    adversary->optimizer.zero_grad();
    parts.adv_g = terms.generator;
  }

  LossReport report = aggregate(cfg.variant, parts, weights);
  report.step = optimizer.steps() + 1;
  if (!std::isfinite(report.total)) throw NonFiniteError("non-finite loss", report);

  optimizer.zero_grad();
  model.backward(g);
  optimizer.step();

  std::string bad;
  if (!all_finite(optimizer.parameters(), &bad)) throw NonFiniteError("non-finite parameter " + bad, report);
  return report;
}

// ----------------------------------------------------------------- trainer

namespace {

constexpr std::uint64_t kDiscriminatorSeedOffset = 0x5eedULL;

nn::AdamOptions adam_options(double lr) {
  nn::AdamOptions o;
  o.learning_rate = static_cast<float>(lr);
  return o;
}

void write_floats(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!os) throw std::runtime_error("cannot write " + path);
}

}  // namespace

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  model_ = std::make_unique<DaeModel>(cfg_.model, cfg_.seed);
  opt_ = std::make_unique<nn::Adam>(model_->parameters(), adam_options(cfg_.learning_rate));
  if (cfg_.model.use_adversarial) {
    disc_ = std::make_unique<PatchDiscriminator>(cfg_.model.channels, cfg_.seed + kDiscriminatorSeedOffset);
    disc_opt_ = std::make_unique<nn::Adam>(disc_->parameters(), adam_options(cfg_.learning_rate));
  }
}

LossReport Trainer::train_step(const Tensor& batch, std::span<const int> labels) {
  try {
    LossReport r;
    if (disc_) {
      Adversary adv{*disc_, *disc_opt_};
      r = dae::train_step(*model_, batch, labels, cfg_.weights, *opt_, &adv);
    } else {
      r = dae::train_step(*model_, batch, labels, cfg_.weights, *opt_);
    }
    step_ = r.step;
    return r;
  } catch (const NonFiniteError& e) {
    const fs::path dir = fs::path(cfg_.output_dir) / "diagnostics" / ("step_" + std::to_string(step_ + 1));
    fs::create_directories(dir);
    const LossReport& r = e.report();
    nlohmann::json j{{"error", e.what()},
                     {"step", step_ + 1},
                     {"epoch", epoch_},
                     {"batch_shape", batch.shape()},
                     {"components",
                      {{"total", r.total},
                       {"recon", r.recon},
                       {"smooth", r.smooth},
                       {"bias", r.bias},
                       {"shade", r.shade},
                       {"adv_g", r.adv_g},
                       {"adv_d", r.adv_d},
                       {"ce", r.ce}}}};
    std::ofstream(dir / "report.json") << j.dump(2) << "\n";
    write_floats((dir / "batch.f32").string(), batch);
    throw NonFiniteError(std::string(e.what()) + " at step " + std::to_string(step_ + 1) + " (diagnostics in " +
                             dir.string() + ")",
                         r);
  }
}

std::vector<std::size_t> Trainer::epoch_order(std::size_t n, int epoch) const {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

bool Trainer::run_epoch(const TrainingData& data, const std::function<bool(const LossReport&)>& on_step) {
  const int n = data.images.dim(0);
  const auto order = epoch_order(static_cast<std::size_t>(n), epoch_);
  const std::size_t item = data.images.size() / static_cast<std::size_t>(n);
  Shape shape = data.images.shape();
  for (int start = 0; start < n; start += cfg_.batch_size) {
    const int count = std::min(cfg_.batch_size, n - start);
    // Batch norm statistics need at least two samples.
    if (count < 2 && n >= 2) break;
    shape[0] = count;
    Tensor batch(shape);
    std::vector<int> labels;
    for (int k = 0; k < count; ++k) {
      const std::size_t src = order[static_cast<std::size_t>(start + k)];
      std::copy_n(data.images.data() + src * item, item, batch.data() + static_cast<std::size_t>(k) * item);
      if (!data.labels.empty()) labels.push_back(data.labels[src]);
    }
    const LossReport r = train_step(batch, labels);
    if (on_step && !on_step(r)) return false;
  }
  ++epoch_;
  return true;
}

// -------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[4] = {'D', 'A', 'E', 'C'};

void add_moments(std::vector<std::pair<std::string, const Tensor*>>& out, const std::string& prefix,
                 const nn::Adam& opt) {
  for (std::size_t k = 0; k < opt.parameters().size(); ++k) {
    out.emplace_back(prefix + "m/" + opt.parameters()[k].name, &opt.first_moments()[k]);
    out.emplace_back(prefix + "v/" + opt.parameters()[k].name, &opt.second_moments()[k]);
  }
}

void restore(Tensor& dst, const Checkpoint& ck, const std::string& name) {
  const Tensor& src = ck.tensor(name);
  if (src.shape() != dst.shape()) {
    throw ConfigError("checkpoint tensor " + name + " has shape " + shape_string(src.shape()) + ", expected " +
                      shape_string(dst.shape()));
  }
  dst = src;
}

void restore_moments(nn::Adam& opt, const std::string& prefix, const Checkpoint& ck) {
  for (std::size_t k = 0; k < opt.parameters().size(); ++k) {
    restore(opt.first_moments()[k], ck, prefix + "m/" + opt.parameters()[k].name);
    restore(opt.second_moments()[k], ck, prefix + "v/" + opt.parameters()[k].name);
  }
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& p : model_->parameters()) tensors.emplace_back("model/" + p.name, &p.param->value);
  add_moments(tensors, "adam/", *opt_);
  if (disc_) {
    for (const auto& p : disc_->parameters()) tensors.emplace_back("disc/" + p.name, &p.param->value);
    add_moments(tensors, "disc_adam/", *disc_opt_);
  }
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    index.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->size();
  }
  const nlohmann::json header{{"config", cfg_},
                              {"step", step_},
                              {"epoch", epoch_},
                              {"adam_steps", opt_->steps()},
                              {"disc_adam_steps", disc_opt_ ? disc_opt_->steps() : 0},
                              {"tensors", index}};
  const std::string text = header.dump();

  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    os.write(kMagic, 4);
    os.write(reinterpret_cast<const char*>(&version), sizeof version);
    os.write(reinterpret_cast<const char*>(&len), sizeof len);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors) {
      os.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, target);
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw ConfigError("checkpoint has no tensor named " + name);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open checkpoint " + path);
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw InvalidInput(path + " is not a DAE checkpoint");
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint " + path + " has version " + std::to_string(version) + ", this build reads version " +
                      std::to_string(kCheckpointVersion));
  }
  is.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(len));
  if (!is) throw InvalidInput("truncated checkpoint header in " + path);
  const auto header = nlohmann::json::parse(text);
  Checkpoint ck;
  ck.config = header.at("config").get<TrainConfig>();
  ck.step = header.at("step").get<long>();
  ck.epoch = header.at("epoch").get<int>();
  ck.optimizer_steps = header.at("adam_steps").get<long>();
  ck.discriminator_steps = header.at("disc_adam_steps").get<long>();
  for (const auto& entry : header.at("tensors")) {
    Tensor t(entry.at("shape").get<Shape>());
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!is) throw InvalidInput("truncated checkpoint data in " + path);
    ck.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

void Trainer::load_checkpoint(const std::string& path) {
  const Checkpoint ck = read_checkpoint(path);
  if (!(ck.config.model == cfg_.model)) {
    throw ConfigError("checkpoint " + path + " was written for model " + nlohmann::json(ck.config.model).dump() +
                      ", not " + nlohmann::json(cfg_.model).dump());
  }
  for (const auto& p : model_->parameters()) restore(p.param->value, ck, "model/" + p.name);
  restore_moments(*opt_, "adam/", ck);
  opt_->set_steps(ck.optimizer_steps);
  if (disc_) {
    for (const auto& p : disc_->parameters()) restore(p.param->value, ck, "disc/" + p.name);
    restore_moments(*disc_opt_, "disc_adam/", ck);
    disc_opt_->set_steps(ck.discriminator_steps);
  }
  step_ = ck.step;
  epoch_ = ck.epoch;
}

std::unique_ptr<DaeModel> load_model(const std::string& checkpoint_path) {
  const Checkpoint ck = read_checkpoint(checkpoint_path);
  auto model = std::make_unique<DaeModel>(ck.config.model, ck.config.seed);
  for (const auto& p : model->parameters()) restore(p.param->value, ck, "model/" + p.name);
  model->set_training(false);
  return model;
}

// -------------------------------------------------------------------- loop

namespace {

std::string epoch_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04d", epoch);
  return buf;
}

// Keeps the header and every row whose step is at most `step`.
void truncate_metrics(const fs::path& path, long step) {
  std::ifstream is(path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(is, line)) {
    if (keep.empty()) {
      keep.push_back(line);
      continue;
    }
    if (!line.empty() && std::stol(line.substr(0, line.find(','))) <= step) keep.push_back(line);
  }
  is.close();
  std::ofstream os(path, std::ios::trunc);
  for (const auto& l : keep) os << l << "\n";
}

}  // namespace

std::string latest_checkpoint(const std::string& output_dir) {
  const fs::path dir = fs::path(output_dir) / "checkpoints";
  if (!fs::is_directory(dir)) return {};
  std::string best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("epoch_", 0) == 0 && e.path().extension() == ".daec" && name > fs::path(best).filename().string()) {
      best = e.path().string();
    }
  }
  return best;
}

std::vector<GridRow> sample_rows(DaeModel& model, const Tensor& batch) {
  const bool was_training = model.training();
  model.set_training(false);
  const DaeOutputs out = model.forward(batch);
  model.set_training(was_training);
  std::vector<GridRow> rows{{"input", batch}, {"texture", out.texture}, {"reconstruction", out.reconstruction}};
  if (model.config().variant == Variant::intrinsic) {
    rows.push_back({"shading", out.shading});
    rows.push_back({"albedo", out.albedo});
  }
  return rows;
}

LoopResult train_loop(const TrainConfig& cfg, const TrainingData& data, const LoopOptions& options) {
  cfg.validate();
  const auto& m = cfg.model;
  if (data.images.rank() != 4 || data.images.dim(0) == 0 || data.images.dim(1) != m.channels ||
      data.images.dim(2) != m.image_side || data.images.dim(3) != m.image_side) {
    throw InvalidInput("training data shape " + shape_string(data.images.shape()) + " does not match the model");
  }
  if (!data.labels.empty() && static_cast<int>(data.labels.size()) != data.images.dim(0)) {
    throw InvalidInput("training data has " + std::to_string(data.labels.size()) + " labels for " +
                       std::to_string(data.images.dim(0)) + " images");
  }
  if (m.variant == Variant::class_aware && data.labels.empty()) {
    throw InvalidInput("class-aware training needs labels");
  }

  const fs::path out(cfg.output_dir);
  fs::create_directories(out / "checkpoints");
  std::ofstream(out / "config.json") << nlohmann::json(cfg).dump(2) << "\n";

  Trainer trainer(cfg);
  const fs::path metrics = out / "metrics.csv";
  const std::string resume_from = options.resume ? latest_checkpoint(cfg.output_dir) : std::string();
  if (!resume_from.empty()) {
    trainer.load_checkpoint(resume_from);
    if (fs::exists(metrics)) truncate_metrics(metrics, trainer.step());
  }
  if (resume_from.empty() || !fs::exists(metrics)) {
    std::ofstream(metrics, std::ios::trunc) << LossReport::csv_header() << "\n";
  }
  std::ofstream csv(metrics, std::ios::app);

  LoopResult result;
  const int sample_n = std::min(cfg.sample_count, data.images.dim(0));
  const Tensor sample_batch = sample_n > 0 ? data.images.rows(0, sample_n) : Tensor();

  while (trainer.epoch() < cfg.epochs) {
    const bool finished = trainer.run_epoch(data, [&](const LossReport& r) {
      csv << r.csv_row() << "\n";
      csv.flush();
      result.history.push_back(r);
      if (options.on_step) options.on_step(r);
      return !(options.stop_after_steps >= 0 && r.step >= options.stop_after_steps);
    });
    result.steps = trainer.step();
    if (!finished) {
      result.stopped = true;
      result.epochs_completed = trainer.epoch();
      return result;
    }
    if (options.write_samples && sample_n > 0) {
      write_grid_png((out / "samples" / (epoch_name(trainer.epoch()) + ".png")).string(),
                     sample_rows(trainer.model(), sample_batch));
    }
    if (trainer.epoch() % cfg.checkpoint_every == 0 || trainer.epoch() == cfg.epochs) {
      trainer.save_checkpoint((out / "checkpoints" / (epoch_name(trainer.epoch()) + ".daec")).string());
    }
  }
  result.final_checkpoint = (out / "final.daec").string();
  trainer.save_checkpoint(result.final_checkpoint);
  result.epochs_completed = trainer.epoch();
  result.steps = trainer.step();
  return result;
}

}  // namespace dae
