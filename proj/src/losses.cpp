#include "dae/losses.hpp"

#include <cstdio>

namespace dae {

void LossWeights::validate() const {
  for (double v : {smooth, bias_affine, bias_field, shade, adversarial, class_weight}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("loss weights must be finite and non-negative");
  }
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"smooth", w.smooth},
                     {"bias_affine", w.bias_affine},
                     {"bias_field", w.bias_field},
                     {"shade", w.shade},
                     {"adversarial", w.adversarial},
                     {"class_weight", w.class_weight},
                     {"reduction", w.reduction == Reduction::mean ? "mean" : "sum"},
                     {"regularizer_reduction", w.regularizer_reduction == Reduction::mean ? "mean" : "sum"}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  w.smooth = j.value("smooth", w.smooth);
  w.bias_affine = j.value("bias_affine", w.bias_affine);
  w.bias_field = j.value("bias_field", w.bias_field);
  w.shade = j.value("shade", w.shade);
  w.adversarial = j.value("adversarial", w.adversarial);
  w.class_weight = j.value("class_weight", w.class_weight);
  auto parse = [&](const char* key, Reduction fallback) {
    const std::string r = j.value(key, std::string(fallback == Reduction::mean ? "mean" : "sum"));
    if (r != "mean" && r != "sum") throw InvalidInput(std::string(key) + " must be 'mean' or 'sum', got " + r);
    return r == "mean" ? Reduction::mean : Reduction::sum;
  };
  w.reduction = parse("reduction", w.reduction);
  w.regularizer_reduction = parse("regularizer_reduction", w.regularizer_reduction);
  w.validate();
}

std::string LossReport::csv_header() { return "step,total,recon,smooth,bias,shade,adv_g,adv_d,ce"; }

std::string LossReport::csv_row() const {
  char buf[320];
  std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", step, total, recon, smooth, bias,
                shade, adv_g, adv_d, ce);
  return buf;
}

LossReport aggregate(Variant variant, const LossParts& parts, const LossWeights& weights) {
  auto need = [](const std::optional<double>& v, const char* name) {
    if (!v) throw InvalidInput(std::string("aggregate: missing loss component '") + name + "'");
    return *v;
  };
  LossReport r;
  r.recon = need(parts.recon, "recon");
  r.smooth = need(parts.smooth, "smooth");
  r.bias = need(parts.bias, "bias");
  r.total = r.recon + r.smooth + r.bias;
  if (variant == Variant::class_aware) {
    r.ce = need(parts.ce, "ce");
    r.total += weights.class_weight * r.ce;
  }
  if (variant == Variant::intrinsic) {
    r.shade = need(parts.shade, "shade");
    r.total += r.shade;
  }
  if (parts.adv_g) {
    r.adv_g = *parts.adv_g;
    r.total += weights.adversarial * r.adv_g;
  }
  r.adv_d = parts.adv_d.value_or(0.0);
  return r;
}

}  // namespace dae
