#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "app.hpp"
#include "dae/evaluation.hpp"
#include "dae/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dae::app {
namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;

// Values shared by every subcommand; each may come from the config file.
struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::string dataset;
  int limit = -1;
  std::string checkpoint;
};

// Keys a config file may carry next to the training configuration.
const char* const kRunKeys[] = {"dataset", "limit", "landmarks", "interleaved", "regressor"};

struct Context {
  CLI::App* sub = nullptr;
  Common common;
  json file = json::object();  // parsed --config, if any
  std::vector<std::string> argv;
  std::optional<Manifest> manifest;

  Manifest& begin(const std::string& dir, const std::string& command, const json& config, std::uint64_t seed) {
    manifest.emplace(dir, command, argv);
    manifest->set_config(config, seed);
    return *manifest;
  }

  bool given(const std::string& flag) const { return sub->count(flag) > 0; }

  // Flag value if given, else the config file's value, else the fallback.
  template <typename T>
  T pick(const std::string& flag, const char* key, const T& flag_value, const T& fallback) const {
    if (given(flag)) return flag_value;
    if (file.contains(key)) return file.at(key).get<T>();
    return fallback;
  }

  std::uint64_t seed() const { return pick<std::uint64_t>("--seed", "seed", common.seed, 0); }
  std::string output_dir(const std::string& fallback) const {
    return pick<std::string>("--output-dir", "output_dir", common.output_dir, fallback);
  }
  std::string dataset() const { return pick<std::string>("--dataset", "dataset", common.dataset, ""); }
  int limit() const { return pick<int>("--limit", "limit", common.limit, -1); }
};

void add_common(CLI::App* sub, Common& c, bool with_checkpoint, bool with_dataset) {
  sub->add_option("--config", c.config, "JSON or TOML config file (flags win)");
  sub->add_option("--seed", c.seed, "Seed for every stochastic choice");
  sub->add_option("--output-dir", c.output_dir, "Directory receiving all outputs");
  if (with_checkpoint) sub->add_option("--checkpoint", c.checkpoint, "Model checkpoint (.daec)");
  if (with_dataset) {
    sub->add_option("--dataset", c.dataset,
                    "mnist[:D] | deformed-mnist[:D] | synthetic-faces[:N] | dataset cache dir | image folder");
    sub->add_option("--limit", c.limit, "Use only the first N images");
  }
}

std::string require(const std::string& value, const char* what) {
  if (value.empty()) throw InvalidInput(std::string("missing ") + what);
  return value;
}

std::vector<LatentPart> parse_parts(const std::string& list) {
  std::vector<LatentPart> parts;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) parts.push_back(parse_latent_part(item));
  }
  if (parts.empty()) throw InvalidInput("no latent parts selected");
  return parts;
}

LandmarkSet read_template_landmarks(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot read template landmarks " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  LandmarkSet t;
  if (text.find('[') != std::string::npos) {
    const auto j = json::parse(text);
    if (!j.is_array() || j.size() != 5) throw InvalidInput(path + ": expected five [x, y] pairs");
    for (int k = 0; k < 5; ++k) t.points[k] = {j[k].at(0).get<double>(), j[k].at(1).get<double>()};
    return t;
  }
  std::istringstream in(text);
  for (int k = 0; k < 5; ++k) {
    if (!(in >> t.points[k].x >> t.points[k].y)) throw InvalidInput(path + ": expected x1 y1 ... x5 y5");
  }
  return t;
}

Tensor subset(const Tensor& x, const std::vector<std::size_t>& idx) {
  Shape s = x.shape();
  s[0] = static_cast<int>(idx.size());
  Tensor out(s);
  const std::size_t len = x.size() / x.dim(0);
  for (std::size_t k = 0; k < idx.size(); ++k) std::copy_n(x.data() + idx[k] * len, len, out.data() + k * len);
  return out;
}

WarpField subset(const WarpField& f, const std::vector<std::size_t>& idx) {
  WarpField out;
  out.grid = subset(f.grid, idx);
  return out;
}

template <typename T>
std::vector<T> subset(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

// ------------------------------------------------------------ subcommands

struct GenOptions {
  int digit = -1;
  int copies = 1;
  int waves = 2;
  double amp_lo = 1, amp_hi = 3, freq_lo = 1, freq_hi = 3;
};

int cmd_gen(Context& ctx, const GenOptions& o) {
  const std::string out = ctx.output_dir("runs/deformed-mnist");
  DeformSpec spec;
  spec.seed = ctx.seed();
  spec.copies = o.copies;
  spec.num_waves = o.waves;
  spec.amp_lo = o.amp_lo;
  spec.amp_hi = o.amp_hi;
  spec.freq_lo = o.freq_lo;
  spec.freq_hi = o.freq_hi;
  spec.validate();
  const json config{{"deform", spec}, {"digit", o.digit}, {"limit", ctx.limit()}, {"mnist_dir", mnist_dir()}};
  Manifest& manifest = ctx.begin(out, "gen-deformed-mnist", config, spec.seed);
  manifest.start();

  LabeledImages base = load_mnist();
  if (o.digit >= 0) base = select_label(base, o.digit);
  const int limit = ctx.limit();
  if (limit >= 0 && limit < static_cast<int>(base.labels.size())) {
    base = {base.images.rows(0, limit), std::vector<int>(base.labels.begin(), base.labels.begin() + limit)};
  }
  const DeformedDataset gen = generate_deformed_mnist(spec, base.images, base.labels);
  DatasetCache cache;
  cache.images = gen.images;
  cache.labels = gen.labels;
  for (std::size_t i = 0; i < gen.labels.size(); ++i) cache.ids.push_back(std::to_string(i));
  cache.partition.assign(gen.labels.size(), 0);
  cache.spec = config;
  cache.spec_hash = config_hash(config);
  const std::string data_dir = (fs::path(out) / "dataset").string();
  write_cache(data_dir, cache);
  write_grid_png((fs::path(out) / "preview.png").string(),
                 {{"deformed", gen.images.rows(0, std::min(16, gen.images.dim(0)))}});
  manifest.set("dataset_dir", data_dir);
  manifest.set("count", gen.images.dim(0));
  manifest.finish(true);
  std::cout << json{{"dataset_dir", data_dir}, {"count", gen.images.dim(0)}}.dump() << '\n';
  return 0;
}

struct TrainFlags {
  int epochs = 0;
  int batch_size = 0;
  double lr = 0;
  int checkpoint_every = 0;
  std::string variant, backbone;
  int zt = -1, za = -1, zw = -1, zc = -1;
  bool adversarial = false;
  bool residual_grid = false;
  bool no_resume = false;
  long stop_after = -1;
};

// Training configuration as JSON: config file first, then flags.
json resolve_train_json(const Context& ctx, const TrainFlags& f) {
  json j = json::object();
  for (const auto& [k, v] : ctx.file.items()) {
    if (std::find(std::begin(kRunKeys), std::end(kRunKeys), k) == std::end(kRunKeys)) j[k] = v;
  }
  if (!j.contains("model")) j["model"] = json::object();
  json& m = j["model"];
  if (ctx.given("--seed")) j["seed"] = ctx.common.seed;
  if (ctx.given("--output-dir")) j["output_dir"] = ctx.common.output_dir;
  if (ctx.given("--epochs")) j["epochs"] = f.epochs;
  if (ctx.given("--batch-size")) j["batch_size"] = f.batch_size;
  if (ctx.given("--lr")) j["learning_rate"] = f.lr;
  if (ctx.given("--checkpoint-every")) j["checkpoint_every"] = f.checkpoint_every;
  if (ctx.given("--variant")) m["variant"] = to_string(parse_variant(f.variant));
  if (ctx.given("--backbone")) m["backbone"] = to_string(parse_backbone(f.backbone));
  if (ctx.given("--zt")) m["z_texture"] = f.zt;
  if (ctx.given("--za")) m["z_affine"] = f.za;
  if (ctx.given("--zw")) m["z_warp"] = f.zw;
  if (ctx.given("--zc")) m["z_class"] = f.zc;
  if (ctx.given("--adversarial")) m["use_adversarial"] = f.adversarial;
  if (ctx.given("--residual-grid")) m["residual_grid"] = f.residual_grid;
  return j;
}

int cmd_train(Context& ctx, const TrainFlags& f) {
  json cj = resolve_train_json(ctx, f);
  DatasetOptions dopts;
  dopts.seed = cj.value("seed", std::uint64_t{0});
  dopts.channels = cj["model"].value("channels", 1);
  dopts.limit = ctx.limit();
  const std::string spec = require(ctx.dataset(), "--dataset");
  const Dataset data = load_dataset(spec, dopts);
  json& m = cj["model"];
  if (m.value("variant", "") == "class_aware" && m.value("num_classes", 0) == 0 && !data.labels.empty()) {
    m["num_classes"] = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
  }
  const TrainConfig cfg = cj.get<TrainConfig>();

  json config = cfg;
  config["dataset"] = spec;
  config["limit"] = dopts.limit;
  Manifest& manifest = ctx.begin(cfg.output_dir, "train", config, cfg.seed);
  manifest.set("dataset_spec", data.spec);
  manifest.start();

  LoopOptions lo;
  lo.resume = !f.no_resume;
  lo.stop_after_steps = f.stop_after;
  const TrainingData td{data.images, cfg.model.variant == Variant::class_aware ? data.labels : std::vector<int>{}};
  const LoopResult r = train_loop(cfg, td, lo);
  json summary{{"steps", r.steps}, {"epochs_completed", r.epochs_completed}, {"stopped", r.stopped},
               {"final_checkpoint", r.final_checkpoint}};
  if (!r.history.empty()) {
    const LossReport& h = r.history.back();
    summary["last"] = {{"step", h.step}, {"total", h.total}, {"recon", h.recon}};
  }
  manifest.set("result", summary);
  manifest.finish(true);
  std::cout << summary.dump() << '\n';
  return 0;
}

struct EvalFlags {
  bool regressor = false;
  std::string template_file;
  std::string landmarks;
  bool interleaved = false;
  std::string test_dataset;
  double test_fraction = 0.2;
  int regressor_epochs = 200;
  bool save_fields = false;
};

int cmd_eval(Context& ctx, const EvalFlags& f) {
  const std::string out = ctx.output_dir("runs/eval-landmarks");
  const std::string ckpt = require(ctx.common.checkpoint, "--checkpoint");
  auto model = load_model(ckpt);
  const bool use_template = !f.template_file.empty();
  if (use_template && f.regressor) throw InvalidInput("choose either --regressor or --template");
  const std::uint64_t seed = ctx.seed();

  DatasetOptions dopts;
  dopts.seed = seed;
  dopts.channels = model->config().channels;
  dopts.limit = ctx.limit();
  dopts.landmarks = ctx.pick<std::string>("--landmarks", "landmarks", f.landmarks, "");
  dopts.interleaved = ctx.pick<bool>("--interleaved", "interleaved", f.interleaved, false);
  const std::string spec = require(ctx.dataset(), "--dataset");

  RegressorConfig rc;
  rc.seed = seed;
  rc.epochs = f.regressor_epochs;
  if (ctx.file.contains("regressor")) {
    const auto& r = ctx.file.at("regressor");
    rc.epochs = ctx.given("--regressor-epochs") ? f.regressor_epochs : r.value("epochs", rc.epochs);
    rc.learning_rate = r.value("learning_rate", rc.learning_rate);
    rc.patience = r.value("patience", rc.patience);
    rc.batch_size = r.value("batch_size", rc.batch_size);
  }
  json config{{"checkpoint", ckpt},          {"dataset", spec},         {"protocol", use_template ? "template" : "regressor"},
              {"test_dataset", f.test_dataset}, {"test_fraction", f.test_fraction}, {"regressor", rc},
              {"landmarks", dopts.landmarks}, {"limit", dopts.limit}};
  Manifest& manifest = ctx.begin(out, "eval-landmarks", config, seed);
  manifest.start();

  const Dataset data = load_dataset(spec, dopts);
  if (data.landmarks.empty()) throw InvalidInput("dataset '" + spec + "' has no landmarks (use --landmarks)");
  const WarpField fields = extract_fields(*model, data.images);

  WarpField test_fields;
  std::vector<LandmarkSet> test_truth, train_truth;
  WarpField train_fields;
  if (!f.test_dataset.empty()) {
    const Dataset test = load_dataset(f.test_dataset, dopts);
    if (test.landmarks.empty()) throw InvalidInput("test dataset has no landmarks");
    test_fields = extract_fields(*model, test.images);
    test_truth = test.landmarks;
    train_fields = fields;
    train_truth = data.landmarks;
  } else if (use_template) {
    test_fields = fields;
    test_truth = data.landmarks;
  } else {
    if (!(f.test_fraction > 0 && f.test_fraction < 1)) throw InvalidInput("--test-fraction must be in (0, 1)");
    const double frac[] = {1 - f.test_fraction, f.test_fraction};
    const auto parts = split(static_cast<std::size_t>(fields.batch()), frac, seed);
    train_fields = subset(fields, parts[0]);
    train_truth = subset(data.landmarks, parts[0]);
    test_fields = subset(fields, parts[1]);
    test_truth = subset(data.landmarks, parts[1]);
  }

  std::vector<LandmarkSet> pred;
  EvalReport report;
  if (use_template) {
    pred = map_template_landmarks(read_template_landmarks(f.template_file), test_fields);
    report = evaluate_landmarks(pred, test_truth, "template");
  } else {
    RegressorFit fit;
    auto reg = fit_landmark_regressor(train_fields, train_truth, rc, &fit);
    pred = reg->predict(test_fields);
    report = evaluate_landmarks(pred, test_truth, "regressor");
    manifest.set("regressor_fit", {{"epochs_run", fit.epochs_run},
                                   {"best_epoch", fit.best_epoch},
                                   {"best_validation_l1_px", fit.best_validation_l1}});
  }
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "eval_report.json") << report.to_json().dump(2) << '\n';
  std::ofstream(fs::path(out) / "eval_report.csv") << report.csv();
  if (f.save_fields) write_fields((fs::path(out) / "fields.daew").string(), test_fields);
  manifest.set("report", report.to_json());
  manifest.finish(true);
  std::cout.precision(4);
  std::cout << "mean inter-ocular error: " << std::fixed << report.mean_error << "% (" << report.protocol
            << ", n=" << report.count << ")\n";
  return 0;
}

struct InterpFlags {
  std::string source, target;
  int source_index = -1, target_index = -1;
  bool mirror_target = false;
  std::string parts = "texture";
  int steps = 8;
};

int cmd_interpolate(Context& ctx, const InterpFlags& f) {
  const std::string out = ctx.output_dir("runs/interpolate");
  const std::string ckpt = require(ctx.common.checkpoint, "--checkpoint");
  auto model = load_model(ckpt);
  const auto parts = parse_parts(f.parts);
  const int side = model->config().image_side, channels = model->config().channels;
  json config{{"checkpoint", ckpt}, {"parts", f.parts}, {"steps", f.steps}, {"source", f.source},
              {"target", f.target}, {"mirror", f.mirror_target}, {"dataset", ctx.dataset()},
              {"source_index", f.source_index}, {"target_index", f.target_index}};
  Manifest& manifest = ctx.begin(out, "interpolate", config, ctx.seed());
  manifest.start();

  Tensor src, tgt;
  if (!f.source.empty()) {
    src = load_image(f.source, side, channels);
    if (!f.target.empty()) tgt = load_image(f.target, side, channels);
  } else {
    DatasetOptions dopts;
    dopts.seed = ctx.seed();
    dopts.channels = channels;
    const Dataset data = load_dataset(require(ctx.dataset(), "--source or --dataset"), dopts);
    auto pick = [&](int i) {
      if (i < 0 || i >= data.images.dim(0)) throw InvalidInput("image index " + std::to_string(i) + " out of range");
      return data.images.rows(i, i + 1);
    };
    src = pick(std::max(f.source_index, 0));
    if (f.target_index >= 0) tgt = pick(f.target_index);
  }
  if (f.mirror_target) {
    if (!tgt.empty()) throw InvalidInput("--mirror replaces the target; do not pass one");
    tgt = mirror(src);
  }
  if (tgt.empty()) throw InvalidInput("missing interpolation target (--target, --target-index or --mirror)");

  const Interpolation r = interpolate_latents(*model, src, tgt, parts, f.steps);
  std::vector<GridRow> rows{{"source / target", Tensor()}, {"reconstruction", r.reconstructions}};
  Tensor ends({2, src.dim(1), side, side});
  std::copy_n(src.data(), src.size(), ends.data());
  std::copy_n(tgt.data(), tgt.size(), ends.data() + src.size());
  rows[0].images = ends;
  rows.push_back({"texture", r.textures});
  if (!r.shading.empty()) rows.push_back({"shading", r.shading});
  if (!r.albedo.empty()) rows.push_back({"albedo", r.albedo});
  write_grid_png((fs::path(out) / "interpolation.png").string(), rows);
  std::ofstream(fs::path(out) / "interpolation.json") << json{{"lambdas", r.lambdas}, {"parts", f.parts}}.dump(2)
                                                      << '\n';
  manifest.finish(true);
  std::cout << json{{"grid", (fs::path(out) / "interpolation.png").string()}, {"steps", f.steps}}.dump() << '\n';
  return 0;
}

int cmd_decompose(Context& ctx, const std::vector<std::string>& images) {
  const std::string out = ctx.output_dir("runs/decompose");
  const std::string ckpt = require(ctx.common.checkpoint, "--checkpoint");
  auto model = load_model(ckpt);
  const int side = model->config().image_side, channels = model->config().channels;
  json config{{"checkpoint", ckpt}, {"images", images}, {"dataset", ctx.dataset()}, {"limit", ctx.limit()}};
  Manifest& manifest = ctx.begin(out, "decompose", config, ctx.seed());
  manifest.start();

  Tensor x;
  if (!images.empty()) {
    x = Tensor({static_cast<int>(images.size()), channels, side, side});
    for (std::size_t i = 0; i < images.size(); ++i) {
      const Tensor one = load_image(images[i], side, channels);
      std::copy_n(one.data(), one.size(), x.data() + i * one.size());
    }
  } else {
    DatasetOptions dopts;
    dopts.seed = ctx.seed();
    dopts.channels = channels;
    dopts.limit = ctx.limit() < 0 ? 8 : ctx.limit();
    x = load_dataset(require(ctx.dataset(), "--image or --dataset"), dopts).images;
  }
  const std::vector<GridRow> rows = decomposition_rows(*model, x);
  const std::string grid = (fs::path(out) / "decompose.png").string();
  write_grid_png(grid, rows);
  manifest.finish(true);
  std::cout << json{{"grid", grid}, {"images", x.dim(0)}}.dump() << '\n';
  return 0;
}

int cmd_diagnostics(Context& ctx, int preview) {
  const std::string out = ctx.output_dir("runs/diagnostics");
  const std::string ckpt = require(ctx.common.checkpoint, "--checkpoint");
  auto model = load_model(ckpt);
  DatasetOptions dopts;
  dopts.seed = ctx.seed();
  dopts.channels = model->config().channels;
  dopts.limit = ctx.limit();
  const std::string spec = require(ctx.dataset(), "--dataset");
  json config{{"checkpoint", ckpt}, {"dataset", spec}, {"limit", dopts.limit}, {"preview", preview}};
  Manifest& manifest = ctx.begin(out, "diagnostics", config, dopts.seed);
  manifest.start();

  const Dataset data = load_dataset(spec, dopts);
  const AlignmentDiagnostics d = alignment_diagnostics(*model, data.images, preview);
  write_grid_png((fs::path(out) / "alignment.png").string(), alignment_rows(d));
  write_grid_png((fs::path(out) / "samples.png").string(),
                 sample_rows(*model, data.images.rows(0, std::min(preview, data.images.dim(0)))));
  json stats{{"images", data.images.dim(0)},
             {"mean_input_variance", d.mean_input_variance},
             {"mean_texture_variance", d.mean_texture_variance}};
  const auto& mc = model->config();
  if (mc.variant == Variant::class_aware && !data.labels.empty()) {
    const Tensor avg = class_average_textures(*model, data.images, data.labels, mc.num_classes);
    write_grid_png((fs::path(out) / "class_textures.png").string(), {{"class average texture", avg}});
  }
  std::ofstream(fs::path(out) / "diagnostics.json") << stats.dump(2) << '\n';
  manifest.set("result", stats);
  manifest.finish(true);
  std::cout << stats.dump() << '\n';
  return 0;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const NonFiniteError*>(&e)) return "non_finite";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const InvalidInput*>(&e)) return "invalid_input";
  if (dynamic_cast<const json::exception*>(&e)) return "config";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "io";
  return "runtime";
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Deforming autoencoders: training, evaluation and figure grids", "dae"};
  app.require_subcommand(1, 1);
  app.allow_extras(false);

  Context ctx;
  for (int i = 0; i < argc; ++i) ctx.argv.emplace_back(argv[i]);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-deformed-mnist", "Write a deformed MNIST dataset cache");
  add_common(gen_cmd, ctx.common, false, false);
  gen_cmd->add_option("--limit", ctx.common.limit, "Use only the first N base images");
  gen_cmd->add_option("--digit", gen.digit, "Keep one digit class (default: all)")->check(CLI::Range(-1, 9));
  gen_cmd->add_option("--copies", gen.copies, "Distorted copies per base image");
  gen_cmd->add_option("--waves", gen.waves, "Sinusoids per axis");
  gen_cmd->add_option("--amp-lo", gen.amp_lo, "Smallest amplitude (pixels)");
  gen_cmd->add_option("--amp-hi", gen.amp_hi, "Largest amplitude (pixels)");
  gen_cmd->add_option("--freq-lo", gen.freq_lo, "Lowest frequency (cycles per image)");
  gen_cmd->add_option("--freq-hi", gen.freq_hi, "Highest frequency (cycles per image)");

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_common(train_cmd, ctx.common, false, true);
  train_cmd->add_option("--epochs", tf.epochs);
  train_cmd->add_option("--batch-size", tf.batch_size);
  train_cmd->add_option("--lr", tf.lr, "Adam learning rate");
  train_cmd->add_option("--checkpoint-every", tf.checkpoint_every, "Epochs between checkpoints");
  train_cmd->add_option("--variant", tf.variant, "dae | class_aware | intrinsic");
  train_cmd->add_option("--backbone", tf.backbone, "conv | dense");
  train_cmd->add_option("--zt", tf.zt, "Texture latent size");
  train_cmd->add_option("--za", tf.za, "Affine latent size");
  train_cmd->add_option("--zw", tf.zw, "Warp latent size");
  train_cmd->add_option("--zc", tf.zc, "Class latent size");
  train_cmd->add_flag("--adversarial,!--no-adversarial", tf.adversarial, "PatchGAN loss on the reconstruction");
  train_cmd->add_flag("--residual-grid,!--no-residual-grid", tf.residual_grid,
                      "Decode the field directly instead of integrating increments");
  train_cmd->add_flag("--no-resume", tf.no_resume, "Ignore existing checkpoints in the output directory");
  train_cmd->add_option("--stop-after-steps", tf.stop_after, "Abort once this global step is reached")
      ->group("");

  EvalFlags ef;
  auto* eval_cmd = app.add_subcommand("eval-landmarks", "Landmark localisation from deformation fields");
  add_common(eval_cmd, ctx.common, true, true);
  eval_cmd->add_flag("--regressor", ef.regressor, "Train a regressor on the fields (default protocol)");
  eval_cmd->add_option("--template", ef.template_file, "Landmarks annotated on the average texture");
  eval_cmd->add_option("--landmarks", ef.landmarks, "Landmark file for an image-folder dataset");
  eval_cmd->add_flag("--interleaved", ef.interleaved, "Landmark file lists x y pairs");
  eval_cmd->add_option("--test-dataset", ef.test_dataset, "Held-out dataset (default: seeded split)");
  eval_cmd->add_option("--test-fraction", ef.test_fraction, "Held-out share when splitting");
  eval_cmd->add_option("--regressor-epochs", ef.regressor_epochs);
  eval_cmd->add_flag("--save-fields", ef.save_fields, "Write the test fields as fields.daew");

  InterpFlags inf;
  auto* interp_cmd = app.add_subcommand("interpolate", "Latent interpolation grid");
  add_common(interp_cmd, ctx.common, true, true);
  interp_cmd->add_option("--source", inf.source, "Source image file");
  interp_cmd->add_option("--target", inf.target, "Target image file");
  interp_cmd->add_option("--source-index", inf.source_index, "Source index into --dataset");
  interp_cmd->add_option("--target-index", inf.target_index, "Target index into --dataset");
  interp_cmd->add_flag("--mirror", inf.mirror_target, "Use the mirrored source as target");
  interp_cmd->add_option("--parts", inf.parts, "Comma list of texture,warp,affine,shading,albedo,class");
  interp_cmd->add_option("--steps", inf.steps, "Number of lambda values from 1 to 0");

  std::vector<std::string> images;
  auto* dec_cmd = app.add_subcommand("decompose", "Shading / albedo / texture panels");
  add_common(dec_cmd, ctx.common, true, true);
  dec_cmd->add_option("--image", images, "Image file (repeatable)");

  int preview = 8;
  auto* diag_cmd = app.add_subcommand("diagnostics", "Alignment statistics and grids");
  add_common(diag_cmd, ctx.common, true, true);
  diag_cmd->add_option("--preview", preview, "Images shown per row");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  ctx.sub = app.get_subcommands().front();
  const std::string name = ctx.sub->get_name();
  try {
    if (!ctx.common.config.empty()) ctx.file = read_config_file(ctx.common.config);
    if (name == "gen-deformed-mnist") return cmd_gen(ctx, gen);
    if (name == "train") return cmd_train(ctx, tf);
    if (name == "eval-landmarks") return cmd_eval(ctx, ef);
    if (name == "interpolate") return cmd_interpolate(ctx, inf);
    if (name == "decompose") return cmd_decompose(ctx, images);
    return cmd_diagnostics(ctx, preview);
  } catch (const std::exception& e) {
    if (ctx.manifest) {
      try {
        ctx.manifest->finish(false, e.what());
      } catch (const std::exception&) {
      }
    }
    std::cerr << json{{"error", e.what()}, {"kind", error_kind(e)}, {"command", name}}.dump() << '\n';
    return kExitError;
  }
}

}  // namespace dae::app

int main(int argc, char** argv) { return dae::app::run(argc, argv); }
