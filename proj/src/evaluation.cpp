#include "dae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace dae {
namespace {

// Restores a model's training flag on scope exit.
class EvalMode {
 public:
  explicit EvalMode(DaeModel& m) : model_(m), was_(m.training()) { model_.set_training(false); }
  ~EvalMode() { model_.set_training(was_); }
  EvalMode(const EvalMode&) = delete;
  EvalMode& operator=(const EvalMode&) = delete;

 private:
  DaeModel& model_;
  bool was_;
};

void check_images(const DaeModel& model, const Tensor& images, const char* what) {
  const auto& c = model.config();
  if (images.rank() != 4 || images.dim(1) != c.channels || images.dim(2) != c.image_side ||
      images.dim(3) != c.image_side) {
    throw InvalidInput(std::string(what) + ": images " + shape_string(images.shape()) + " do not match the model");
  }
}

double to_normalized(double pixel, int side) { return 2.0 * pixel / (side - 1) - 1.0; }
double to_pixel(double g, int side) { return (g + 1.0) * 0.5 * (side - 1); }

}  // namespace

// ---------------------------------------------------------------- fields

WarpField extract_fields(DaeModel& model, const Tensor& images, int batch_size) {
  check_images(model, images, "extract_fields");
  EvalMode guard(model);
  const int n = images.dim(0), side = model.config().image_side;
  WarpField out(n, side, side);
  const std::size_t len = static_cast<std::size_t>(side) * side * 2;
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    const DaeOutputs o = model.forward(images.rows(start, end));
    std::copy_n(o.field.grid.data(), (end - start) * len, out.grid.data() + start * len);
  }
  return out;
}

// ------------------------------------------------------------- regressor

void RegressorConfig::validate() const {
  if (input_dim <= 0 || hidden <= 0 || output != 10) throw InvalidInput("regressor dims must be positive with 10 outputs");
  if (!(learning_rate > 0) || epochs <= 0 || batch_size <= 0 || patience <= 0 || plateau_patience <= 0 ||
      !(plateau_factor > 0 && plateau_factor <= 1)) {
    throw InvalidInput("regressor optimisation settings must be positive");
  }
  if (validation_fraction < 0 || validation_fraction >= 1) throw InvalidInput("validation_fraction must be in [0, 1)");
}

void to_json(nlohmann::json& j, const RegressorConfig& c) {
  j = nlohmann::json{{"input_dim", c.input_dim},   {"hidden", c.hidden},
                     {"output", c.output},         {"loss", "l1"},
                     {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
                     {"batch_size", c.batch_size}, {"validation_fraction", c.validation_fraction},
                     {"patience", c.patience},     {"plateau_patience", c.plateau_patience},
                     {"plateau_factor", c.plateau_factor}, {"seed", c.seed}};
}

LandmarkRegressor::LandmarkRegressor(const RegressorConfig& cfg)
    : cfg_((cfg.validate(), cfg)), rng_(cfg.seed), hidden_(cfg.input_dim, cfg.hidden, rng_), out_(cfg.hidden, cfg.output, rng_) {}

Tensor LandmarkRegressor::forward(const Tensor& flat_fields) {
  if (input_mean_.empty()) return out_.forward(act_.forward(hidden_.forward(flat_fields)));
  Tensor x = flat_fields;
  const std::size_t row = input_mean_.size();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] -= input_mean_[i % row];
  return out_.forward(act_.forward(hidden_.forward(x)));
}

void LandmarkRegressor::set_input_mean(Tensor mean) {
  if (!mean.empty() && mean.size() != static_cast<std::size_t>(cfg_.input_dim)) {
    throw InvalidInput("LandmarkRegressor: input mean has " + std::to_string(mean.size()) + " values, expected " +
                       std::to_string(cfg_.input_dim));
  }
  input_mean_ = std::move(mean);
}

Tensor LandmarkRegressor::backward(const Tensor& grad) { return hidden_.backward(act_.backward(out_.backward(grad))); }

std::vector<nn::NamedParameter> LandmarkRegressor::parameters() {
  std::vector<nn::NamedParameter> p;
  hidden_.collect_parameters("hidden.", p);
  out_.collect_parameters("output.", p);
  return p;
}

namespace {

Tensor flatten_fields(const WarpField& fields) {
  return fields.grid.reshaped({fields.batch(), static_cast<int>(fields.grid.size() / std::max(fields.batch(), 1))});
}

Tensor landmark_targets(std::span<const LandmarkSet> sets, int side) {
  Tensor t({static_cast<int>(sets.size()), 10});
  for (std::size_t b = 0; b < sets.size(); ++b) {
    for (int k = 0; k < 5; ++k) {
      t[b * 10 + 2 * k] = static_cast<float>(to_normalized(sets[b].points[k].x, side));
      t[b * 10 + 2 * k + 1] = static_cast<float>(to_normalized(sets[b].points[k].y, side));
    }
  }
  return t;
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  Shape s = x.shape();
  s[0] = static_cast<int>(idx.size());
  Tensor out(s);
  const std::size_t row = x.size() / x.dim(0);
  for (std::size_t k = 0; k < idx.size(); ++k) std::copy_n(x.data() + idx[k] * row, row, out.data() + k * row);
  return out;
}

// Mean absolute error in pixels over all coordinates.
double l1_pixels(const Tensor& pred, const Tensor& target, int side, Tensor* grad) {
  double acc = 0;
  if (grad) *grad = Tensor(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - target[i];
    acc += std::abs(d);
    if (grad) (*grad)[i] = static_cast<float>((d > 0) - (d < 0)) / static_cast<float>(pred.size());
  }
  return acc / pred.size() * 0.5 * (side - 1);
}

}  // namespace

std::vector<LandmarkSet> LandmarkRegressor::predict(const WarpField& fields) {
  const Tensor y = forward(flatten_fields(fields));
  std::vector<LandmarkSet> out(static_cast<std::size_t>(fields.batch()));
  for (std::size_t b = 0; b < out.size(); ++b) {
    for (int k = 0; k < 5; ++k) {
      out[b].points[k] = {to_pixel(y[b * 10 + 2 * k], cfg_.side), to_pixel(y[b * 10 + 2 * k + 1], cfg_.side)};
    }
  }
  return out;
}

std::unique_ptr<LandmarkRegressor> fit_landmark_regressor(const WarpField& fields,
                                                          std::span<const LandmarkSet> landmarks,
                                                          const RegressorConfig& cfg, RegressorFit* fit) {
  cfg.validate();
  const int n = fields.batch();
  if (n == 0 || static_cast<int>(landmarks.size()) != n) {
    throw InvalidInput("fit_landmark_regressor: " + std::to_string(n) + " fields but " +
                       std::to_string(landmarks.size()) + " landmark sets");
  }
  const Tensor x = flatten_fields(fields);
  if (x.dim(1) != cfg.input_dim) {
    throw InvalidInput("fit_landmark_regressor: field size " + std::to_string(x.dim(1)) + " != input_dim " +
                       std::to_string(cfg.input_dim));
  }
  const Tensor y = landmark_targets(landmarks, cfg.side);

  auto reg = std::make_unique<LandmarkRegressor>(cfg);
  // Every field carries roughly the identity grid; centring leaves only the
  // per-image variation for the first layer.
  Tensor mean({1, cfg.input_dim});
  {
    std::vector<double> acc(static_cast<std::size_t>(cfg.input_dim), 0.0);
    for (int b = 0; b < n; ++b) {
      const float* r = x.data() + static_cast<std::size_t>(b) * acc.size();
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += r[k];
    }
    for (std::size_t k = 0; k < acc.size(); ++k) mean[k] = static_cast<float>(acc[k] / n);
  }
  reg->set_input_mean(std::move(mean));
  auto params = reg->parameters();
  nn::AdamOptions ao;
  ao.learning_rate = static_cast<float>(cfg.learning_rate);
  nn::Adam opt(params, ao);

  std::vector<std::size_t> train_idx(static_cast<std::size_t>(n)), val_idx;
  std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
  const int n_val = static_cast<int>(std::floor(cfg.validation_fraction * n));
  if (n_val > 0 && n - n_val > 0) {
    const double frac[] = {1.0 - static_cast<double>(n_val) / n, static_cast<double>(n_val) / n};
    auto parts = split(static_cast<std::size_t>(n), frac, cfg.seed);
    train_idx = parts[0];
    val_idx = parts[1];
  }
  const Tensor x_val = val_idx.empty() ? Tensor() : gather_rows(x, val_idx);
  const Tensor y_val = val_idx.empty() ? Tensor() : gather_rows(y, val_idx);

  std::vector<Tensor> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& p : params) best.push_back(p.param->value);
  };
  double best_score = std::numeric_limits<double>::infinity();
  RegressorFit info;
  int last_cut = 0;
  std::mt19937_64 rng(cfg.seed ^ 0xa5a5a5a5ULL);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double train_sum = 0;
    std::size_t train_count = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> idx(train_idx.data() + start, end - start);
      const Tensor xb = gather_rows(x, idx), yb = gather_rows(y, idx);
      opt.zero_grad();
      Tensor g;
      train_sum += l1_pixels(reg->forward(xb), yb, cfg.side, &g) * static_cast<double>(idx.size());
      train_count += idx.size();
      reg->backward(g);
      opt.step();
    }
    info.final_training_l1 = train_sum / static_cast<double>(train_count);
    const double score = val_idx.empty() ? info.final_training_l1 : l1_pixels(reg->forward(x_val), y_val, cfg.side, nullptr);
    info.epochs_run = epoch;
    if (score < best_score) {
      best_score = score;
      info.best_epoch = epoch;
      snapshot();
    } else if (epoch - info.best_epoch >= cfg.patience) {
      break;
    } else if (epoch - std::max(info.best_epoch, last_cut) >= cfg.plateau_patience) {
      // L1 gradients keep their magnitude at the optimum; shrink the step to settle.
      opt.set_learning_rate(opt.options().learning_rate * static_cast<float>(cfg.plateau_factor));
      last_cut = epoch;
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) params[k].param->value = best[k];
  info.best_validation_l1 = best_score;
  if (fit) *fit = info;
  return reg;
}

// ---------------------------------------------------------------- metric

double interocular_error(const LandmarkSet& pred, const LandmarkSet& truth) {
  const auto& le = truth.points[0];
  const auto& re = truth.points[1];
  const double iod = std::hypot(le.x - re.x, le.y - re.y);
  if (!(iod > 0) || !std::isfinite(iod)) throw InvalidInput("interocular_error: eye landmarks coincide");
  double acc = 0;
  for (int k = 0; k < 5; ++k) {
    acc += std::hypot(pred.points[k].x - truth.points[k].x, pred.points[k].y - truth.points[k].y);
  }
  return acc / 5.0 / iod * 100.0;
}

EvalReport evaluate_landmarks(std::span<const LandmarkSet> pred, std::span<const LandmarkSet> truth,
                              const std::string& protocol) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw InvalidInput("evaluate_landmarks: " + std::to_string(pred.size()) + " predictions for " +
                       std::to_string(truth.size()) + " ground-truth sets");
  }
  EvalReport r;
  r.protocol = protocol;
  r.count = pred.size();
  for (std::size_t b = 0; b < pred.size(); ++b) {
    r.mean_error += interocular_error(pred[b], truth[b]);
    const auto& t = truth[b].points;
    const double iod = std::hypot(t[0].x - t[1].x, t[0].y - t[1].y);
    for (int k = 0; k < 5; ++k) {
      r.per_landmark[k] += std::hypot(pred[b].points[k].x - t[k].x, pred[b].points[k].y - t[k].y) / iod * 100.0;
    }
  }
  r.mean_error /= static_cast<double>(r.count);
  for (auto& v : r.per_landmark) v /= static_cast<double>(r.count);
  return r;
}

nlohmann::json EvalReport::to_json() const {
  return {{"protocol", protocol},
          {"mean_interocular_error_percent", mean_error},
          {"per_landmark_percent",
           {{"left_eye", per_landmark[0]},
            {"right_eye", per_landmark[1]},
            {"nose", per_landmark[2]},
            {"left_mouth", per_landmark[3]},
            {"right_mouth", per_landmark[4]}}},
          {"count", count}};
}

std::string EvalReport::csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "protocol,count,mean_error,left_eye,right_eye,nose,left_mouth,right_mouth\n";
  os << protocol << ',' << count << ',' << mean_error;
  for (double v : per_landmark) os << ',' << v;
  os << '\n';
  return os.str();
}

// ---------------------------------------------------------- interpolation

Tensor mirror(const Tensor& images) {
  Tensor out(images.shape());
  const int n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) out.at(b, ch, i, j) = images.at(b, ch, i, w - 1 - j);
  return out;
}

namespace {

bool part_available(const ModelConfig& c, LatentPart p) {
  switch (p) {
    case LatentPart::texture: return c.variant != Variant::intrinsic && c.z_texture > 0;
    case LatentPart::shading: return c.variant == Variant::intrinsic && c.z_shading > 0;
    case LatentPart::albedo: return c.variant == Variant::intrinsic && c.z_albedo > 0;
    case LatentPart::class_code: return c.variant == Variant::class_aware;
    case LatentPart::affine: return c.use_affine && c.z_affine > 0;
    case LatentPart::warp: return c.use_integral && c.z_warp > 0;
  }
  return false;
}

void copy_item(const Tensor& src, Tensor& dst, int index) {
  if (src.empty()) return;
  const std::size_t len = src.size();
  std::copy_n(src.data(), len, dst.data() + static_cast<std::size_t>(index) * len);
}

Tensor with_batch(const Tensor& item, int n) {
  if (item.empty()) return {};
  Shape s = item.shape();
  s[0] = n;
  return Tensor(s);
}

}  // namespace

Interpolation interpolate_latents(DaeModel& model, const Tensor& source, const Tensor& target,
                                  std::span<const LatentPart> parts, int steps) {
  check_images(model, source, "interpolate_latents");
  check_images(model, target, "interpolate_latents");
  if (source.dim(0) != 1 || target.dim(0) != 1) throw InvalidInput("interpolate_latents: expects single images");
  if (steps < 2) throw InvalidInput("interpolate_latents: need at least two steps");
  for (LatentPart p : parts) {
    if (!part_available(model.config(), p)) {
      throw ConfigError("latent part '" + to_string(p) + "' is not present in this model");
    }
  }
  EvalMode guard(model);
  const LatentCode zs = model.encode(source);
  const LatentCode zt = model.encode(target);
  Interpolation r;
  for (int k = 0; k < steps; ++k) {
    const double lambda = 1.0 - static_cast<double>(k) / (steps - 1);
    const float a = static_cast<float>(lambda), b = static_cast<float>(1.0 - lambda);
    LatentCode z = zs;
    for (LatentPart p : parts) {
      Tensor& dst = z.part(p);
      const Tensor& s = zs.part(p);
      const Tensor& t = zt.part(p);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * s[i] + b * t[i];
    }
    // One decode per step keeps each row identical to a single-image decode.
    const DaeOutputs o = model.decode(z);
    if (k == 0) {
      r.reconstructions = with_batch(o.reconstruction, steps);
      r.textures = with_batch(o.texture, steps);
      r.shading = with_batch(o.shading, steps);
      r.albedo = with_batch(o.albedo, steps);
    }
    copy_item(o.reconstruction, r.reconstructions, k);
    copy_item(o.texture, r.textures, k);
    copy_item(o.shading, r.shading, k);
    copy_item(o.albedo, r.albedo, k);
    r.lambdas.push_back(lambda);
  }
  return r;
}

// ------------------------------------------------------------- alignment

AlignmentDiagnostics alignment_diagnostics(DaeModel& model, const Tensor& images, int preview, int batch_size) {
  check_images(model, images, "alignment_diagnostics");
  const int n = images.dim(0);
  if (n < 2) throw InvalidInput("alignment_diagnostics: need at least two images");
  EvalMode guard(model);
  const int c = images.dim(1), side = images.dim(2);
  const std::size_t item = static_cast<std::size_t>(c) * side * side;
  const std::size_t flen = static_cast<std::size_t>(side) * side * 2;
  std::vector<double> sum_in(item), sq_in(item), sum_tex(item), sq_tex(item), sum_field(flen);
  const int keep = std::clamp(preview, 0, n);

  AlignmentDiagnostics d;
  d.inputs = images.rows(0, keep);
  d.reconstructions = Tensor({keep, c, side, side});
  d.textures = Tensor({keep, c, side, side});
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    const Tensor batch = images.rows(start, end);
    const DaeOutputs o = model.forward(batch);
    for (int b = 0; b < end - start; ++b) {
      for (std::size_t k = 0; k < item; ++k) {
        const double x = batch[b * item + k], t = o.texture[b * item + k];
        sum_in[k] += x;
        sq_in[k] += x * x;
        sum_tex[k] += t;
        sq_tex[k] += t * t;
      }
      for (std::size_t k = 0; k < flen; ++k) sum_field[k] += o.field.grid[b * flen + k];
      const int global = start + b;
      if (global < keep) {
        std::copy_n(o.reconstruction.data() + b * item, item, d.reconstructions.data() + global * item);
        std::copy_n(o.texture.data() + b * item, item, d.textures.data() + global * item);
      }
    }
  }
  d.average_input = Tensor({1, c, side, side});
  d.average_texture = Tensor({1, c, side, side});
  d.input_variance = Tensor({1, c, side, side});
  d.texture_variance = Tensor({1, c, side, side});
  double vin = 0, vtex = 0;
  for (std::size_t k = 0; k < item; ++k) {
    const double mi = sum_in[k] / n, mt = sum_tex[k] / n;
    const double var_i = std::max(0.0, sq_in[k] / n - mi * mi), var_t = std::max(0.0, sq_tex[k] / n - mt * mt);
    d.average_input[k] = static_cast<float>(mi);
    d.average_texture[k] = static_cast<float>(mt);
    d.input_variance[k] = static_cast<float>(var_i);
    d.texture_variance[k] = static_cast<float>(var_t);
    vin += var_i;
    vtex += var_t;
  }
  d.mean_input_variance = vin / static_cast<double>(item);
  d.mean_texture_variance = vtex / static_cast<double>(item);
  d.mean_field = WarpField(1, side, side);
  for (std::size_t k = 0; k < flen; ++k) d.mean_field.grid[k] = static_cast<float>(sum_field[k] / n);
  d.warped_by_mean = Tensor({keep, c, side, side});
  for (int b = 0; b < keep; ++b) {
    const Tensor w = bilinear_sample(d.textures.rows(b, b + 1), d.mean_field);
    std::copy_n(w.data(), item, d.warped_by_mean.data() + b * item);
  }
  return d;
}

Tensor class_average_textures(DaeModel& model, const Tensor& images, std::span<const int> labels, int num_classes,
                              int batch_size) {
  check_images(model, images, "class_average_textures");
  const int n = images.dim(0);
  if (static_cast<int>(labels.size()) != n || num_classes <= 0) {
    throw InvalidInput("class_average_textures: need one label per image and a positive class count");
  }
  EvalMode guard(model);
  const int c = images.dim(1), side = images.dim(2);
  const std::size_t item = static_cast<std::size_t>(c) * side * side;
  std::vector<double> sum(item * num_classes);
  std::vector<int> count(num_classes);
  for (int start = 0; start < n; start += batch_size) {
    const int end = std::min(n, start + batch_size);
    const Tensor tex = model.forward(images.rows(start, end)).texture;
    for (int b = 0; b < end - start; ++b) {
      const int k = labels[start + b];
      if (k < 0 || k >= num_classes) throw InvalidInput("class_average_textures: label out of range");
      ++count[k];
      for (std::size_t i = 0; i < item; ++i) sum[k * item + i] += tex[b * item + i];
    }
  }
  Tensor out({num_classes, c, side, side});
  for (int k = 0; k < num_classes; ++k) {
    if (count[k] == 0) continue;
    for (std::size_t i = 0; i < item; ++i) out[k * item + i] = static_cast<float>(sum[k * item + i] / count[k]);
  }
  return out;
}

std::vector<GridRow> alignment_rows(const AlignmentDiagnostics& d) {
  return {{"(a) input", d.inputs},
          {"(b) reconstruction", d.reconstructions},
          {"(c) texture, mean warp", d.warped_by_mean},
          {"(d) average input", d.average_input},
          {"(e) average texture", d.average_texture}};
}

std::vector<GridRow> decomposition_rows(DaeModel& model, const Tensor& images) {
  check_images(model, images, "decomposition_rows");
  EvalMode guard(model);
  const DaeOutputs o = model.forward(images);
  if (model.config().variant != Variant::intrinsic) {
    return {{"(a) input", images}, {"(b) texture", o.texture}, {"(c) reconstruction", o.reconstruction}};
  }
  return {{"(a) input", images},
          {"(b) shading", o.shading},
          {"(c) albedo", o.albedo},
          {"(d) texture", o.texture},
          {"(e) shading, warped", bilinear_sample(o.shading, o.field)},
          {"(f) albedo, warped", bilinear_sample(o.albedo, o.field)},
          {"(g) reconstruction", o.reconstruction}};
}

// --------------------------------------------------- template annotations

Point2 invert_field(const WarpField& fields, int index, Point2 target) {
  const int h = fields.height(), w = fields.width();
  auto at = [&](int i, int j, int c) {
    return static_cast<double>(fields.grid[((static_cast<std::size_t>(index) * h + i) * w + j) * 2 + c]);
  };
  // Nearest grid node.
  double best = std::numeric_limits<double>::infinity();
  double px = 0, py = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double dx = at(i, j, 0) - target.x, dy = at(i, j, 1) - target.y;
      const double d2 = dx * dx + dy * dy;
      if (d2 < best) {
        best = d2;
        px = j;
        py = i;
      }
    }
  }
  // Newton iterations on the bilinear interpolant of the field.
  for (int it = 0; it < 50; ++it) {
    const int j0 = std::clamp(static_cast<int>(std::floor(px)), 0, w - 2);
    const int i0 = std::clamp(static_cast<int>(std::floor(py)), 0, h - 2);
    const double ax = px - j0, ay = py - i0;
    double f[2], jx[2], jy[2];
    for (int c = 0; c < 2; ++c) {
      const double v00 = at(i0, j0, c), v01 = at(i0, j0 + 1, c), v10 = at(i0 + 1, j0, c), v11 = at(i0 + 1, j0 + 1, c);
      f[c] = (1 - ax) * (1 - ay) * v00 + ax * (1 - ay) * v01 + (1 - ax) * ay * v10 + ax * ay * v11 -
             (c == 0 ? target.x : target.y);
      jx[c] = (1 - ay) * (v01 - v00) + ay * (v11 - v10);
      jy[c] = (1 - ax) * (v10 - v00) + ax * (v11 - v01);
    }
    const double det = jx[0] * jy[1] - jy[0] * jx[1];
    if (std::abs(det) < 1e-15) break;
    const double sx = (f[0] * jy[1] - jy[0] * f[1]) / det;
    const double sy = (jx[0] * f[1] - f[0] * jx[1]) / det;
    px = std::clamp(px - sx, 0.0, w - 1.0);
    py = std::clamp(py - sy, 0.0, h - 1.0);
    if (std::abs(sx) + std::abs(sy) < 1e-12) break;
  }
  return {px, py};
}

std::vector<LandmarkSet> map_template_landmarks(const LandmarkSet& template_points, const WarpField& fields) {
  const int h = fields.height(), w = fields.width();
  for (const auto& p : template_points.points) {
    if (!(p.x >= 0 && p.x <= w - 1 && p.y >= 0 && p.y <= h - 1)) {
      throw InvalidInput("template landmark (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                         ") lies outside the template");
    }
  }
  std::vector<LandmarkSet> out(static_cast<std::size_t>(fields.batch()));
  for (int b = 0; b < fields.batch(); ++b) {
    for (int k = 0; k < 5; ++k) {
      const auto& t = template_points.points[k];
      out[b].points[k] = invert_field(fields, b, {to_normalized(t.x, w), to_normalized(t.y, h)});
    }
  }
  return out;
}

}  // namespace dae
