#include "ohnn/losses.hpp"

#include <algorithm>
#include <cmath>

#include "ohnn/errors.hpp"
#include "ohnn/random.hpp"

namespace ohnn {

namespace {

constexpr double kClampEps = 1e-12;

struct Normalized {
  Vec unit;
  double length = 0.0;
};

Normalized normalized(std::span<const double> v) {
  Normalized n;
  n.length = norm(v);
  if (n.length == 0.0) throw ZeroVector();
  n.unit.assign(v.begin(), v.end());
  for (auto& x : n.unit) x /= n.length;
  return n;
}

// Gradient w.r.t. v of a function of v/|v|, given the gradient w.r.t. v/|v|.
void project_back(const Normalized& n, std::span<const double> g_unit, std::span<double> out) {
  const double radial = dot(g_unit, n.unit);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += (g_unit[i] - radial * n.unit[i]) / n.length;
}

bool clamped(double c) { return c < -1.0 + kClampEps || c > 1.0 - kClampEps; }

}  // namespace

ClassifierHead init_head(std::size_t dim, std::size_t num_speakers, Rng& rng) {
  ClassifierHead head;
  head.dim = dim;
  head.num_speakers = num_speakers;
  head.weights.resize(dim * 2 * num_speakers);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& w : head.weights) w = scale * rng.normal();
  return head;
}

void validate(const LossConfig& cfg) {
  if (!(cfg.m1 >= 0.0)) throw InvalidSpec("m1 must be >= 0");
  if (!(cfg.m2 >= 0.0)) throw InvalidSpec("m2 must be >= 0");
  if (!(cfg.scale > 0.0)) throw InvalidSpec("scale must be > 0");
  if (!(cfg.lambda >= 0.0)) throw InvalidSpec("lambda must be >= 0");
  if (!(cfg.cos_margin >= -1.0 && cfg.cos_margin <= 1.0))
    throw InvalidSpec("cos_margin must lie in [-1, 1]");
}

std::string_view to_string(ClassLoss l) { return l == ClassLoss::Aam ? "aam" : "waam"; }

ClassLoss class_loss_from_string(std::string_view s) {
  if (s == "aam") return ClassLoss::Aam;
  if (s == "waam") return ClassLoss::WAam;
  throw ConfigError("unknown loss '" + std::string(s) + "', expected aam or waam");
}

void validate(const Batch& batch, std::size_t dim) {
  const std::size_t n = batch.size();
  if (n < 2 || n % 2 != 0) throw InvalidShape("batch size must be even and >= 2");
  if (batch.labels.size() != n) throw DimensionMismatch(n, batch.labels.size());
  const std::size_t c = batch.num_speakers;
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.vectors[i].size() != dim) throw DimensionMismatch(dim, batch.vectors[i].size());
    if (batch.labels[i] >= 2 * c) throw InvalidShape("label outside [0, 2C)");
  }
  for (std::size_t i = 0; i < n / 2; ++i)
    if (batch.labels[i] >= c || batch.labels[i + n / 2] != batch.labels[i] + c)
      throw InvalidShape("anonymized label must equal original label + C");
}

LossResult classification_loss(const Batch& batch, const ClassifierHead& head,
                               const LossConfig& cfg, ClassLoss variant) {
  validate(cfg);
  validate(batch, head.dim);
  if (head.num_speakers != batch.num_speakers)
    throw DimensionMismatch(head.num_speakers, batch.num_speakers);
  const std::size_t n = batch.size();
  const std::size_t classes = head.num_classes();
  const std::size_t d = head.dim;

  std::vector<Normalized> cols;
  cols.reserve(classes);
  for (std::size_t j = 0; j < classes; ++j) cols.push_back(normalized(head.column(j)));

  LossResult res;
  res.grads.vectors.assign(n, Vec(d, 0.0));
  res.grads.head.assign(head.weights.size(), 0.0);
  std::vector<Vec> g_cols(classes, Vec(d, 0.0));

  const double s = cfg.scale;
  const double cos_m1 = std::cos(cfg.m1), sin_m1 = std::sin(cfg.m1);
  const double cos_m2 = std::cos(cfg.m2), sin_m2 = std::sin(cfg.m2);
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> cosines(classes), logits(classes), dlogit_dcos(classes);
  Vec g_unit(d);
  for (std::size_t i = 0; i < n; ++i) {
    const Normalized x = normalized(batch.vectors[i]);
    const std::size_t target = batch.labels[i];
    const std::size_t paired = batch.labels[batch.paired(i)];
    for (std::size_t j = 0; j < classes; ++j) {
      const double raw = dot(x.unit, cols[j].unit);
      const double c = std::clamp(raw, -1.0 + kClampEps, 1.0 - kClampEps);
      cosines[j] = c;
      const double slope = clamped(raw) ? 0.0 : 1.0;
      const double sine = std::sqrt(1.0 - c * c);
      if (j == target) {
        logits[j] = s * (c * cos_m1 - sine * sin_m1);  // s cos(theta + m1)
        dlogit_dcos[j] = slope * s * (cos_m1 + c * sin_m1 / sine);
      } else if (variant == ClassLoss::WAam && j == paired) {
        logits[j] = s * (c * cos_m2 + sine * sin_m2);  // s cos(theta - m2)
        dlogit_dcos[j] = slope * s * (cos_m2 - c * sin_m2 / sine);
      } else {
        logits[j] = s * c;
        dlogit_dcos[j] = slope * s;
      }
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - peak);
    const double log_z = peak + std::log(z);
    res.loss += (log_z - logits[target]) * inv_n;

    std::fill(g_unit.begin(), g_unit.end(), 0.0);
    for (std::size_t j = 0; j < classes; ++j) {
      const double p = std::exp(logits[j] - log_z);
      const double g_cos = inv_n * (p - (j == target ? 1.0 : 0.0)) * dlogit_dcos[j];
      if (g_cos == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) {
        g_unit[k] += g_cos * cols[j].unit[k];
        g_cols[j][k] += g_cos * x.unit[k];
      }
    }
    project_back(x, g_unit, res.grads.vectors[i]);
  }
  for (std::size_t j = 0; j < classes; ++j)
    project_back(cols[j], g_cols[j], std::span<double>(res.grads.head).subspan(j * d, d));
  return res;
}

LossResult aam_loss(const Batch& batch, const ClassifierHead& head, const LossConfig& cfg) {
  return classification_loss(batch, head, cfg, ClassLoss::Aam);
}

LossResult waam_loss(const Batch& batch, const ClassifierHead& head, const LossConfig& cfg) {
  return classification_loss(batch, head, cfg, ClassLoss::WAam);
}

PairLossResult cosine_pair_loss(std::span<const double> x_o, std::span<const double> x_a,
                                double cos_margin) {
  if (x_o.size() != x_a.size()) throw DimensionMismatch(x_o.size(), x_a.size());
  const Normalized o = normalized(x_o);
  const Normalized a = normalized(x_a);
  const double c = dot(o.unit, a.unit);
  PairLossResult res;
  res.d_original.assign(x_o.size(), 0.0);
  res.d_anonymized.assign(x_a.size(), 0.0);
  if (!(c > cos_margin)) return res;
  res.loss = c - cos_margin;
  // dc/dx_a = (o - c a) / |x_a|, symmetric for x_o.
  for (std::size_t i = 0; i < x_o.size(); ++i) {
    res.d_anonymized[i] = (o.unit[i] - c * a.unit[i]) / a.length;
    res.d_original[i] = (a.unit[i] - c * o.unit[i]) / o.length;
  }
  return res;
}

LossResult combined_objective(const Batch& batch, const ClassifierHead& head,
                              const LossConfig& cfg, ClassLoss variant) {
  LossResult res = classification_loss(batch, head, cfg, variant);
  if (cfg.lambda == 0.0) return res;
  const std::size_t half = batch.size() / 2;
  const double w = cfg.lambda / static_cast<double>(half);
  for (std::size_t i = 0; i < half; ++i) {
    const auto pair = cosine_pair_loss(batch.vectors[i], batch.vectors[i + half], cfg.cos_margin);
    res.loss += w * pair.loss;
    for (std::size_t k = 0; k < head.dim; ++k) {
      res.grads.vectors[i][k] += w * pair.d_original[k];
      res.grads.vectors[i + half][k] += w * pair.d_anonymized[k];
    }
  }
  return res;
}

std::vector<std::uint8_t> kink_signature(const Batch& batch, const ClassifierHead& head,
                                         const LossConfig& cfg) {
  std::vector<std::uint8_t> sig;
  const std::size_t half = batch.size() / 2;
  for (std::size_t i = 0; i < half; ++i)
    sig.push_back(cosine(batch.vectors[i], batch.vectors[i + half]) > cfg.cos_margin ? 1 : 0);
  std::vector<Normalized> cols;
  for (std::size_t j = 0; j < head.num_classes(); ++j) cols.push_back(normalized(head.column(j)));
  for (const auto& v : batch.vectors) {
    const Normalized x = normalized(v);
    for (const auto& c : cols) sig.push_back(clamped(dot(x.unit, c.unit)) ? 1 : 0);
  }
  return sig;
}

}  // namespace ohnn
