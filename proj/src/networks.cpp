#include "dae/networks.hpp"

#include <stdexcept>

namespace dae {

// ------------------------------------------------------------ ModelConfig

std::string to_string(Variant v) {
  switch (v) {
    case Variant::dae: return "dae";
    case Variant::class_aware: return "class_aware";
    case Variant::intrinsic: return "intrinsic";
  }
  return "?";
}

std::string to_string(Backbone b) { return b == Backbone::conv ? "conv" : "dense"; }

Variant parse_variant(const std::string& s) {
  if (s == "dae") return Variant::dae;
  if (s == "class_aware" || s == "class-aware") return Variant::class_aware;
  if (s == "intrinsic") return Variant::intrinsic;
  throw InvalidInput("unknown variant '" + s + "' (expected dae, class_aware or intrinsic)");
}

Backbone parse_backbone(const std::string& s) {
  if (s == "conv") return Backbone::conv;
  if (s == "dense") return Backbone::dense;
  throw InvalidInput("unknown backbone '" + s + "' (expected conv or dense)");
}

int ModelConfig::latent_dim() const {
  const int appearance = variant == Variant::intrinsic ? z_shading + z_albedo : z_texture;
  return appearance + (variant == Variant::class_aware ? z_class : 0) + z_affine + z_warp;
}

void ModelConfig::validate() const {
  if (image_side != 64) throw InvalidInput("only 64 x 64 inputs are supported");
  if (channels != 1 && channels != 3) throw InvalidInput("channels must be 1 or 3");
  for (int d : {z_texture, z_affine, z_warp, z_class, z_shading, z_albedo, num_classes}) {
    if (d < 0) throw InvalidInput("latent dimensions must be non-negative");
  }
  if (variant == Variant::class_aware && (num_classes < 2 || z_class < 1)) {
    throw InvalidInput("class_aware variant needs num_classes >= 2 and z_class >= 1");
  }
  if (residual_grid && !use_integral) throw InvalidInput("residual_grid replaces the integral branch; enable it");
  if (latent_dim() < 1) throw InvalidInput("latent code must have at least one dimension");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"backbone", to_string(c.backbone)},
                     {"image_side", c.image_side},
                     {"channels", c.channels},
                     {"z_texture", c.z_texture},
                     {"z_affine", c.z_affine},
                     {"z_warp", c.z_warp},
                     {"z_class", c.z_class},
                     {"z_shading", c.z_shading},
                     {"z_albedo", c.z_albedo},
                     {"num_classes", c.num_classes},
                     {"use_affine", c.use_affine},
                     {"use_integral", c.use_integral},
                     {"residual_grid", c.residual_grid},
                     {"use_adversarial", c.use_adversarial},
                     {"leaky_slope", c.leaky_slope}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.contains("backbone")) c.backbone = parse_backbone(j.at("backbone").get<std::string>());
  c.image_side = j.value("image_side", c.image_side);
  c.channels = j.value("channels", c.channels);
  c.z_texture = j.value("z_texture", c.z_texture);
  c.z_affine = j.value("z_affine", c.z_affine);
  c.z_warp = j.value("z_warp", c.z_warp);
  c.z_class = j.value("z_class", c.z_class);
  c.z_shading = j.value("z_shading", c.z_shading);
  c.z_albedo = j.value("z_albedo", c.z_albedo);
  c.num_classes = j.value("num_classes", c.num_classes);
  c.use_affine = j.value("use_affine", c.use_affine);
  c.use_integral = j.value("use_integral", c.use_integral);
  c.residual_grid = j.value("residual_grid", c.residual_grid);
  c.use_adversarial = j.value("use_adversarial", c.use_adversarial);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
}

// ------------------------------------------------------------- LatentCode

std::string to_string(LatentPart p) {
  switch (p) {
    case LatentPart::texture: return "texture";
    case LatentPart::shading: return "shading";
    case LatentPart::albedo: return "albedo";
    case LatentPart::class_code: return "class";
    case LatentPart::affine: return "affine";
    case LatentPart::warp: return "warp";
  }
  return "?";
}

LatentPart parse_latent_part(const std::string& s) {
  if (s == "texture") return LatentPart::texture;
  if (s == "shading") return LatentPart::shading;
  if (s == "albedo") return LatentPart::albedo;
  if (s == "class") return LatentPart::class_code;
  if (s == "affine") return LatentPart::affine;
  if (s == "warp") return LatentPart::warp;
  throw InvalidInput("unknown latent part '" + s + "'");
}

Tensor& LatentCode::part(LatentPart p) {
  switch (p) {
    case LatentPart::texture: return texture;
    case LatentPart::shading: return shading;
    case LatentPart::albedo: return albedo;
    case LatentPart::class_code: return class_code;
    case LatentPart::affine: return affine;
    case LatentPart::warp: return warp;
  }
  throw std::logic_error("bad latent part");
}

const Tensor& LatentCode::part(LatentPart p) const { return const_cast<LatentCode*>(this)->part(p); }

namespace {

struct Partition {
  LatentPart part;
  int dim;
};

std::vector<Partition> layout(const ModelConfig& cfg) {
  std::vector<Partition> out;
  if (cfg.variant == Variant::intrinsic) {
    out.push_back({LatentPart::shading, cfg.z_shading});
    out.push_back({LatentPart::albedo, cfg.z_albedo});
  } else {
    out.push_back({LatentPart::texture, cfg.z_texture});
  }
  if (cfg.variant == Variant::class_aware) out.push_back({LatentPart::class_code, cfg.z_class});
  out.push_back({LatentPart::affine, cfg.z_affine});
  out.push_back({LatentPart::warp, cfg.z_warp});
  return out;
}

// Columns [begin, begin + count) of an N x D matrix.
Tensor columns(const Tensor& m, int begin, int count) {
  const int n = m.dim(0), d = static_cast<int>(m.size() / std::max(n, 1));
  Tensor out({n, count});
  for (int b = 0; b < n; ++b) {
    for (int k = 0; k < count; ++k) out[static_cast<std::size_t>(b) * count + k] = m[static_cast<std::size_t>(b) * d + begin + k];
  }
  return out;
}

void add_columns(Tensor& m, int begin, const Tensor& part) {
  const int n = m.dim(0), d = m.dim(1), count = part.rank() ? part.dim(1) : 0;
  for (int b = 0; b < n; ++b) {
    for (int k = 0; k < count; ++k) m[static_cast<std::size_t>(b) * d + begin + k] += part[static_cast<std::size_t>(b) * count + k];
  }
}

Tensor hcat(const Tensor& a, const Tensor& b) {
  const int n = a.dim(0), da = a.dim(1), db = b.dim(1);
  Tensor out({n, da + db});
  for (int r = 0; r < n; ++r) {
    std::copy_n(a.data() + static_cast<std::size_t>(r) * da, da, out.data() + static_cast<std::size_t>(r) * (da + db));
    std::copy_n(b.data() + static_cast<std::size_t>(r) * db, db, out.data() + static_cast<std::size_t>(r) * (da + db) + da);
  }
  return out;
}

}  // namespace

LatentCode LatentCode::split(const Tensor& z, const ModelConfig& cfg) {
  const int n = z.dim(0);
  const int d = static_cast<int>(z.size() / std::max(n, 1));
  if (d != cfg.latent_dim()) {
    throw InvalidInput("latent size " + std::to_string(d) + " does not match config (" +
                       std::to_string(cfg.latent_dim()) + ")");
  }
  const Tensor flat = z.reshaped({n, d});
  LatentCode code;
  for (LatentPart p : {LatentPart::texture, LatentPart::shading, LatentPart::albedo, LatentPart::class_code}) {
    code.part(p) = Tensor({n, 0});
  }
  int offset = 0;
  for (const auto& [part, dim] : layout(cfg)) {
    code.part(part) = columns(flat, offset, dim);
    offset += dim;
  }
  return code;
}

Tensor LatentCode::concat(const ModelConfig& cfg) const {
  const int n = batch();
  Tensor out({n, cfg.latent_dim()});
  int offset = 0;
  for (const auto& [part, dim] : layout(cfg)) {
    const Tensor& src = this->part(part);
    if (src.rank() != 2 || src.dim(0) != n || src.dim(1) != dim) {
      throw InvalidInput("latent partition '" + to_string(part) + "' has shape " + shape_string(src.shape()));
    }
    add_columns(out, offset, src);
    offset += dim;
  }
  return out;
}

// -------------------------------------------------------------- backbones

std::unique_ptr<nn::Sequential> make_conv_encoder(int channels, int latent_dim, float leaky_slope, nn::Rng& rng) {
  auto net = std::make_unique<nn::Sequential>();
  const int widths[] = {32, 64, 128, 256};
  int in = channels;
  for (int i = 0; i < 4; ++i) {
    auto stage = std::make_unique<nn::Sequential>();
    stage->emplace<nn::Conv2d>("conv", in, widths[i], 4, 2, 1, rng);
    if (i > 0) stage->emplace<nn::BatchNorm2d>("bn", widths[i]);
    stage->emplace<nn::LeakyReLU>("act", leaky_slope);
    net->add("conv" + std::to_string(widths[i]), std::move(stage));
    in = widths[i];
  }
  auto head = std::make_unique<nn::Sequential>();
  head->emplace<nn::Conv2d>("conv", in, latent_dim, 4, 1, 0, rng);
  head->emplace<nn::Sigmoid>("act");
  net->add("latent", std::move(head));
  return net;
}

std::unique_ptr<nn::Sequential> make_conv_decoder(int input_dim, int out_channels, bool clamp_unit, nn::Rng& rng) {
  auto net = std::make_unique<nn::Sequential>();
  struct Row {
    int width, kernel, stride, pad;
  };
  const Row rows[] = {{256, 4, 1, 0}, {128, 4, 2, 1}, {64, 4, 2, 1}, {32, 4, 2, 1}, {32, 4, 2, 1}};
  int in = input_dim;
  for (std::size_t i = 0; i < std::size(rows); ++i) {
    auto stage = std::make_unique<nn::Sequential>();
    stage->emplace<nn::ConvTranspose2d>("convt", in, rows[i].width, rows[i].kernel, rows[i].stride, rows[i].pad, rng);
    stage->emplace<nn::BatchNorm2d>("bn", rows[i].width);
    stage->emplace<nn::ReLU>("act");
    net->add("convt" + std::to_string(i + 1), std::move(stage));
    in = rows[i].width;
  }
  auto head = std::make_unique<nn::Sequential>();
  head->emplace<nn::ConvTranspose2d>("convt", in, out_channels, 3, 1, 1, rng);
  if (clamp_unit) head->emplace<nn::Clamp>("clamp", 0.0f, 1.0f);
  net->add("output", std::move(head));
  return net;
}

std::unique_ptr<nn::Sequential> make_dense_encoder(int channels, int latent_dim, nn::Rng& rng) {
  using nn::DenseBlock;
  auto net = std::make_unique<nn::Sequential>();
  auto stem = std::make_unique<nn::Sequential>();
  stem->emplace<nn::BatchNorm2d>("bn", channels);
  stem->emplace<nn::ReLU>("act");
  stem->emplace<nn::Conv2d>("conv", channels, 32, 4, 2, 1, rng);
  net->add("stem", std::move(stem));

  auto transition = [&](int in, int out, int pool) {
    auto t = std::make_unique<nn::Sequential>();
    t->emplace<nn::BatchNorm2d>("bn", in);
    t->emplace<nn::ReLU>("act");
    t->emplace<nn::Conv2d>("conv", in, out, 1, 1, 0, rng);
    t->emplace<nn::MaxPool2d>("pool", pool);
    return t;
  };
  net->add("dbe1", std::make_unique<DenseBlock>(DenseBlock::Kind::encoder, 32, 6, rng));
  net->add("tbe1", transition(32, 64, 2));
  net->add("dbe2", std::make_unique<DenseBlock>(DenseBlock::Kind::encoder, 64, 12, rng));
  net->add("tbe2", transition(64, 128, 2));
  net->add("dbe3", std::make_unique<DenseBlock>(DenseBlock::Kind::encoder, 128, 24, rng));
  net->add("tbe3", transition(128, 256, 2));
  net->add("dbe4", std::make_unique<DenseBlock>(DenseBlock::Kind::encoder, 256, 16, rng));
  auto last = transition(256, latent_dim, 4);
  last->emplace<nn::Sigmoid>("sigmoid");
  net->add("tbe4", std::move(last));
  return net;
}

std::unique_ptr<nn::Sequential> make_dense_decoder(int input_dim, int out_channels, bool clamp_unit, nn::Rng& rng) {
  using nn::DenseBlock;
  auto net = std::make_unique<nn::Sequential>();
  auto stem = std::make_unique<nn::Sequential>();
  stem->emplace<nn::BatchNorm2d>("bn", input_dim);
  stem->emplace<nn::Tanh>("act");
  stem->emplace<nn::ConvTranspose2d>("convt", input_dim, 256, 4, 1, 0, rng);
  net->add("stem", std::move(stem));

  auto transition = [&](int in, int out) {
    auto t = std::make_unique<nn::Sequential>();
    t->emplace<nn::BatchNorm2d>("bn", in);
    t->emplace<nn::ReLU>("act");
    t->emplace<nn::ConvTranspose2d>("convt", in, out, 4, 2, 1, rng);
    return t;
  };
  net->add("dbd1", std::make_unique<DenseBlock>(DenseBlock::Kind::decoder, 256, 16, rng));
  net->add("tbd1", transition(256, 128));
  net->add("dbd2", std::make_unique<DenseBlock>(DenseBlock::Kind::decoder, 128, 24, rng));
  net->add("tbd2", transition(128, 64));
  net->add("dbd3", std::make_unique<DenseBlock>(DenseBlock::Kind::decoder, 64, 12, rng));
  net->add("tbd3", transition(64, 32));
  net->add("dbd4", std::make_unique<DenseBlock>(DenseBlock::Kind::decoder, 32, 6, rng));
  net->add("tbd4", transition(32, 32));
  auto head = std::make_unique<nn::Sequential>();
  head->emplace<nn::BatchNorm2d>("bn", 32);
  head->emplace<nn::Tanh>("act");
  head->emplace<nn::ConvTranspose2d>("convt", 32, out_channels, 3, 1, 1, rng);
  if (clamp_unit) head->emplace<nn::Clamp>("clamp", 0.0f, 1.0f);
  net->add("output", std::move(head));
  return net;
}

namespace {

std::unique_ptr<nn::Sequential> make_encoder(const ModelConfig& cfg, nn::Rng& rng) {
  return cfg.backbone == Backbone::conv ? make_conv_encoder(cfg.channels, cfg.latent_dim(), cfg.leaky_slope, rng)
                                        : make_dense_encoder(cfg.channels, cfg.latent_dim(), rng);
}

std::unique_ptr<nn::Sequential> make_decoder(const ModelConfig& cfg, int input_dim, int out_channels, bool clamp,
                                             nn::Rng& rng) {
  return cfg.backbone == Backbone::conv ? make_conv_decoder(input_dim, out_channels, clamp, rng)
                                        : make_dense_decoder(input_dim, out_channels, clamp, rng);
}

nn::ConvTranspose2d& output_layer(nn::Sequential& decoder) {
  auto& head = dynamic_cast<nn::Sequential&>(decoder.at(decoder.size() - 1));
  for (std::size_t i = 0; i < head.size(); ++i) {
    if (auto* convt = dynamic_cast<nn::ConvTranspose2d*>(&head.at(i))) return *convt;
  }
  throw std::logic_error("decoder has no output convolution");
}

// Decoders whose input would be empty receive a constant 1 instead, so their
// output is a learned constant image.
int decoder_input_dim(int dim) { return dim > 0 ? dim : 1; }

Tensor as_feature_map(const Tensor& m) {
  const int n = m.dim(0);
  const int d = m.rank() > 1 ? m.dim(1) : 0;
  if (d == 0) return Tensor({n, 1, 1, 1}, 1.0f);
  return m.reshaped({n, d, 1, 1});
}

}  // namespace

// ---------------------------------------------------- PatchDiscriminator

PatchDiscriminator::PatchDiscriminator(int channels, std::uint64_t seed) : net_(std::make_unique<nn::Sequential>()) {
  nn::Rng rng(seed);
  const int widths[] = {64, 128, 256};
  int in = channels;
  for (int i = 0; i < 3; ++i) {
    auto stage = std::make_unique<nn::Sequential>();
    stage->emplace<nn::Conv2d>("conv", in, widths[i], 4, 2, 1, rng);
    if (i > 0) stage->emplace<nn::BatchNorm2d>("bn", widths[i]);
    stage->emplace<nn::LeakyReLU>("act", 0.2f);
    net_->add("block" + std::to_string(i + 1), std::move(stage));
    in = widths[i];
  }
  net_->emplace<nn::Conv2d>("logits", in, 1, 4, 1, 1, rng);
}

Tensor PatchDiscriminator::forward(const Tensor& images) { return net_->forward(images); }
Tensor PatchDiscriminator::backward(const Tensor& grad_logits) { return net_->backward(grad_logits); }

std::vector<nn::NamedParameter> PatchDiscriminator::parameters() {
  std::vector<nn::NamedParameter> out;
  net_->collect_parameters("discriminator.", out);
  return out;
}

// --------------------------------------------------------------- DaeModel

DaeModel::DaeModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Rng rng(seed);
  encoder_ = make_encoder(cfg_, rng);
  const int class_dim = cfg_.variant == Variant::class_aware ? cfg_.z_class : 0;
  if (cfg_.variant == Variant::intrinsic) {
    texture_decoder_ = make_decoder(cfg_, decoder_input_dim(cfg_.z_shading + class_dim), cfg_.channels, true, rng);
    albedo_decoder_ = make_decoder(cfg_, decoder_input_dim(cfg_.z_albedo + class_dim), cfg_.channels, true, rng);
  } else {
    texture_decoder_ = make_decoder(cfg_, decoder_input_dim(cfg_.z_texture + class_dim), cfg_.channels, true, rng);
  }
  if (cfg_.variant == Variant::intrinsic) {
    // A pixel of S o A only gets gradient while both factors are inside the
    // [0, 1] clamp, so both heads start mid-range.
    for (nn::Sequential* d : {texture_decoder_.get(), albedo_decoder_.get()}) {
      auto& out = output_layer(*d);
      out.weight().value *= 0.1f;
      out.bias().value.fill(0.5f);
    }
  }
  if (cfg_.use_integral) {
    warp_decoder_ = make_decoder(cfg_, decoder_input_dim(cfg_.z_warp + class_dim), 2, false, rng);
    // Start near the identity warp: tiny output weights, bias at the identity increment.
    auto& out = output_layer(*warp_decoder_);
    out.weight().value *= 0.01f;
    out.bias().value.fill(cfg_.residual_grid ? 0.0f : identity_increment<float>(cfg_.image_side));
  }
  if (cfg_.use_affine) {
    affine_head_ = std::make_unique<nn::Linear>(std::max(cfg_.z_affine, 1), 6, rng);
    affine_head_->weight().value.fill(0.0f);
    const auto s0 = AffineParams::identity().theta;
    std::copy(s0.begin(), s0.end(), affine_head_->bias().value.data());
  }
  if (cfg_.variant == Variant::class_aware) {
    classifier_ = std::make_unique<nn::Linear>(cfg_.z_class, cfg_.num_classes, rng);
  }
}

Tensor DaeModel::appearance_input(const Tensor& code, const LatentCode& z) const {
  if (cfg_.variant == Variant::class_aware) return as_feature_map(hcat(code, z.class_code));
  return as_feature_map(code);
}

Tensor DaeModel::warp_input(const LatentCode& z) const {
  if (cfg_.variant == Variant::class_aware) return as_feature_map(hcat(z.warp, z.class_code));
  return as_feature_map(z.warp);
}

LatentCode DaeModel::encode(const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != cfg_.channels || images.dim(2) != cfg_.image_side ||
      images.dim(3) != cfg_.image_side) {
    throw InvalidInput("encoder expects N x " + std::to_string(cfg_.channels) + " x 64 x 64 images, got " +
                       shape_string(images.shape()));
  }
  const Tensor z = encoder_->forward(images);
  return LatentCode::split(z, cfg_);
}

Tensor DaeModel::class_head(const Tensor& z_class) {
  if (!classifier_) throw ConfigError("class head requested for a model without a class code");
  if (z_class.rank() != 2 || z_class.dim(1) != cfg_.z_class) throw ConfigError("missing or malformed class code");
  return classifier_->forward(z_class);
}

DaeOutputs DaeModel::decode(const LatentCode& z) {
  encoded_ = false;
  const int n = z.batch();
  const int side = cfg_.image_side;
  DaeOutputs out;
  out.latents = z;

  if (cfg_.variant == Variant::intrinsic) {
    out.shading = texture_decoder_->forward(appearance_input(z.shading, z));
    out.albedo = albedo_decoder_->forward(appearance_input(z.albedo, z));
    out.texture = Tensor(out.shading.shape());
    for (std::size_t i = 0; i < out.texture.size(); ++i) out.texture[i] = out.shading[i] * out.albedo[i];
  } else {
    out.texture = texture_decoder_->forward(appearance_input(z.texture, z));
  }

  if (cfg_.use_integral) {
    out.raw_warp = warp_decoder_->forward(warp_input(z));
    if (cfg_.residual_grid) {
      out.local = residual_field(out.raw_warp);
    } else {
      out.increments = clamp_increments(out.raw_warp, max_increment<float>(side));
      out.local = integrate(out.increments);
    }
  } else {
    out.local = identity_field<float>(n, side, side);
  }

  out.thetas.assign(n, AffineParams::identity());
  if (affine_head_) {
    const Tensor params = affine_head_->forward(as_feature_map(z.affine));
    for (int b = 0; b < n; ++b) {
      for (int k = 0; k < 6; ++k) out.thetas[b].theta[k] = params[static_cast<std::size_t>(b) * 6 + k];
    }
  }
  out.field = compose(std::span<const AffineParams>(out.thetas), out.local);
  out.reconstruction = bilinear_sample(out.texture, out.field);

  if (classifier_) out.class_logits = classifier_->forward(z.class_code);

  cache_ = out;
  has_cache_ = true;
  if (observer_) observer_(out);
  return out;
}

DaeOutputs DaeModel::forward(const Tensor& images) {
  const LatentCode z = encode(images);
  DaeOutputs out = decode(z);
  encoded_ = true;
  return out;
}

void DaeModel::backward(const DaeGradients& g) {
  if (!has_cache_) throw std::logic_error("DaeModel::backward without a preceding forward");
  const DaeOutputs& c = cache_;
  const int n = c.latents.batch();
  const int side = cfg_.image_side;

  Tensor g_texture(c.texture.shape());
  if (!g.texture.empty()) g_texture += g.texture;
  WarpField g_field(n, side, side);
  if (!g.reconstruction.empty()) {
    auto sg = bilinear_sample_backward(c.texture, c.field, g.reconstruction);
    g_texture += sg.source;
    g_field = std::move(sg.field);
  }

  std::vector<AffineParams> g_thetas;
  WarpField g_local;
  compose_backward(std::span<const AffineParams>(c.thetas), c.local, g_field, g_thetas, g_local);
  if (!g.local.grid.empty()) g_local.grid += g.local.grid;
  if (!g.thetas.empty()) {
    for (int b = 0; b < n; ++b) {
      for (int k = 0; k < 6; ++k) g_thetas[b].theta[k] += g.thetas[b].theta[k];
    }
  }

  LatentCode gz = LatentCode::split(Tensor({n, cfg_.latent_dim()}), cfg_);
  const bool class_aware = cfg_.variant == Variant::class_aware;

  // Splits a decoder-input gradient (N x d x 1 x 1) into its code and class parts.
  auto route = [&](const Tensor& g_in, Tensor& code_grad) {
    const int code_dim = code_grad.dim(1);
    const int total = code_dim + (class_aware ? cfg_.z_class : 0);
    if (total == 0) return;
    const Tensor flat = g_in.reshaped({n, total});
    add_columns(code_grad, 0, columns(flat, 0, code_dim));
    if (class_aware) add_columns(gz.class_code, 0, columns(flat, code_dim, cfg_.z_class));
  };

  if (cfg_.use_integral) {
    Tensor g_raw;
    if (cfg_.residual_grid) {
      g_raw = residual_field_backward(g_local);
    } else {
      DifferentialWarp g_incr = integrate_backward(g_local);
      if (!g.increments.dx.empty()) {
        g_incr.dx += g.increments.dx;
        g_incr.dy += g.increments.dy;
      }
      g_raw = clamp_increments_backward(c.raw_warp, g_incr, max_increment<float>(side));
    }
    route(warp_decoder_->backward(g_raw), gz.warp);
  }

  if (affine_head_) {
    Tensor g_params({n, 6});
    for (int b = 0; b < n; ++b) {
      for (int k = 0; k < 6; ++k) g_params[static_cast<std::size_t>(b) * 6 + k] = g_thetas[b].theta[k];
    }
    const Tensor g_in = affine_head_->backward(g_params);
    if (cfg_.z_affine > 0) add_columns(gz.affine, 0, g_in.reshaped({n, cfg_.z_affine}));
  }

  if (cfg_.variant == Variant::intrinsic) {
    Tensor g_s(c.shading.shape()), g_a(c.albedo.shape());
    for (std::size_t i = 0; i < g_s.size(); ++i) {
      g_s[i] = g_texture[i] * c.albedo[i];
      g_a[i] = g_texture[i] * c.shading[i];
    }
    if (!g.shading.empty()) g_s += g.shading;
    if (!g.albedo.empty()) g_a += g.albedo;
    route(texture_decoder_->backward(g_s), gz.shading);
    route(albedo_decoder_->backward(g_a), gz.albedo);
  } else {
    route(texture_decoder_->backward(g_texture), gz.texture);
  }

  if (classifier_ && !g.class_logits.empty()) add_columns(gz.class_code, 0, classifier_->backward(g.class_logits));

  if (encoded_) {
    const Tensor g_latent = gz.concat(cfg_);
    encoder_->backward(g_latent.reshaped({n, cfg_.latent_dim(), 1, 1}));
  }
}

std::vector<nn::NamedParameter> DaeModel::parameters() {
  std::vector<nn::NamedParameter> out;
  encoder_->collect_parameters("encoder.", out);
  if (cfg_.variant == Variant::intrinsic) {
    texture_decoder_->collect_parameters("shading_decoder.", out);
    albedo_decoder_->collect_parameters("albedo_decoder.", out);
  } else {
    texture_decoder_->collect_parameters("texture_decoder.", out);
  }
  if (warp_decoder_) warp_decoder_->collect_parameters("warp_decoder.", out);
  if (affine_head_) affine_head_->collect_parameters("affine_head.", out);
  if (classifier_) classifier_->collect_parameters("classifier.", out);
  return out;
}

void DaeModel::set_training(bool on) {
  training_ = on;
  encoder_->set_training(on);
  texture_decoder_->set_training(on);
  if (albedo_decoder_) albedo_decoder_->set_training(on);
  if (warp_decoder_) warp_decoder_->set_training(on);
  if (affine_head_) affine_head_->set_training(on);
  if (classifier_) classifier_->set_training(on);
}

}  // namespace dae
