#include "ohnn/anonymizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ohnn/errors.hpp"
#include "ohnn/random.hpp"

namespace ohnn {

namespace {

constexpr std::size_t kKernelWidth = 3;

// Zero-padded input sample x[p + t - 1].
double padded(std::span<const double> x, std::size_t p, std::size_t t) {
  const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(p + t) - 1;
  if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(x.size())) return 0.0;
  return x[static_cast<std::size_t>(idx)];
}

// Convolution features seen by output channel c: v_c = b_c + sum_t w[c,t] f[t].
struct LohFeatures {
  // MeanPool: one shared triple; Diagonal: per-channel triples.
  std::vector<double> values;
  bool shared = true;
  double at(std::size_t c, std::size_t t) const {
    return shared ? values[t] : values[c * kKernelWidth + t];
  }
};

LohFeatures loh_features(const HouseholderStack& stack, std::span<const double> x) {
  const std::size_t d = stack.dim;
  LohFeatures f;
  if (stack.reduction == LohReduction::MeanPool) {
    f.values.assign(kKernelWidth, 0.0);
    for (std::size_t t = 0; t < kKernelWidth; ++t) {
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) s += padded(x, p, t);
      f.values[t] = s / static_cast<double>(d);
    }
  } else {
    f.shared = false;
    f.values.resize(d * kKernelWidth);
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t t = 0; t < kKernelWidth; ++t) f.values[c * kKernelWidth + t] = padded(x, c, t);
  }
  return f;
}

Vec generate(const HouseholderStack& stack, std::span<const double> block, const LohFeatures& f) {
  const std::size_t d = stack.dim;
  Vec v(d);
  for (std::size_t c = 0; c < d; ++c) {
    double s = block[d * kKernelWidth + c];
    for (std::size_t t = 0; t < kKernelWidth; ++t) s += block[c * kKernelWidth + t] * f.at(c, t);
    v[c] = s;
  }
  return v;
}

Vec fallback_vector(std::span<const double> x) {
  Vec v(x.size(), 0.0);
  v[0] = 1.0;
  const double n = norm(x);
  if (n > 0.0)
    for (std::size_t i = 0; i < x.size(); ++i) v[i] += 0.5 * x[i] / n;
  if (norm(v) < kReflectionFloor) v[0] = 1.0;  // x parallel to -e_1
  return v;
}

bool is_fallback(const HouseholderStack& stack, std::span<const double> block,
                 const LohFeatures& f) {
  return norm(generate(stack, block, f)) < kReflectionFloor;
}

}  // namespace

std::string_view to_string(StackVariant v) { return v == StackVariant::Roh ? "roh" : "loh"; }

std::string_view to_string(LohReduction r) {
  return r == LohReduction::MeanPool ? "mean_pool" : "diagonal";
}

std::string_view to_string(AnonymizerForm f) {
  return f == AnonymizerForm::Simplified ? "simplified" : "general_whitened";
}

std::size_t HouseholderStack::num_reflections() const {
  return std::accumulate(layer_sizes.begin(), layer_sizes.end(), std::size_t{0});
}

std::size_t HouseholderStack::params_per_reflection() const {
  return variant == StackVariant::Roh ? dim : dim * (kKernelWidth + 1);
}

std::span<const double> HouseholderStack::reflection_params(std::size_t k) const {
  const std::size_t n = params_per_reflection();
  return std::span<const double>(params).subspan(k * n, n);
}

std::span<double> HouseholderStack::reflection_params(std::size_t k) {
  const std::size_t n = params_per_reflection();
  return std::span<double>(params).subspan(k * n, n);
}

std::vector<std::size_t> HouseholderStack::application_order() const {
  std::vector<std::size_t> offsets(layer_sizes.size(), 0);
  for (std::size_t l = 1; l < layer_sizes.size(); ++l)
    offsets[l] = offsets[l - 1] + layer_sizes[l - 1];
  std::vector<std::size_t> order;
  order.reserve(num_reflections());
  for (std::size_t l = layer_sizes.size(); l-- > 0;)
    for (std::size_t j = 0; j < layer_sizes[l]; ++j) order.push_back(offsets[l] + j);
  return order;
}

void validate(const HouseholderStack& stack) {
  if (stack.dim == 0) throw InvalidShape("stack dimension must be >= 1");
  if (stack.layer_sizes.empty()) throw InvalidShape("stack needs at least one layer");
  for (std::size_t q : stack.layer_sizes)
    if (q < 1 || q > stack.dim)
      throw InvalidShape("layer size " + std::to_string(q) + " outside [1, " +
                         std::to_string(stack.dim) + "]");
  if (stack.params.size() != stack.num_reflections() * stack.params_per_reflection())
    throw InvalidShape("parameter count does not match stack shape");
  if (!all_finite(stack.params)) throw InvalidShape("non-finite stack parameters");
  if (stack.variant == StackVariant::Roh)
    for (std::size_t k = 0; k < stack.num_reflections(); ++k)
      if (norm(stack.reflection_params(k)) < kReflectionFloor) throw ZeroReflectionVector();
}

HouseholderStack init_stack(StackVariant variant, std::size_t dim,
                            std::span<const std::size_t> layer_sizes, std::uint64_t seed,
                            LohReduction reduction) {
  HouseholderStack stack;
  stack.variant = variant;
  stack.dim = dim;
  stack.layer_sizes.assign(layer_sizes.begin(), layer_sizes.end());
  stack.reduction = reduction;
  if (dim == 0 || stack.layer_sizes.empty()) throw InvalidShape("empty stack shape");
  for (std::size_t q : stack.layer_sizes)
    if (q < 1 || q > dim) throw InvalidShape("layer size outside [1, d]");

  Rng rng(seed);
  const std::size_t count = stack.num_reflections();
  stack.params.resize(count * stack.params_per_reflection());
  for (std::size_t k = 0; k < count; ++k) {
    auto block = stack.reflection_params(k);
    if (variant == StackVariant::Roh) {
      double n = 0.0;
      do {
        for (auto& x : block) x = rng.normal();
        n = norm(block);
      } while (n < kReflectionFloor);
      for (auto& x : block) x /= n;
    } else {
      const double w_scale = 1.0 / std::sqrt(static_cast<double>(kKernelWidth));
      for (std::size_t i = 0; i < dim * kKernelWidth; ++i) block[i] = w_scale * rng.normal();
      for (std::size_t i = 0; i < dim; ++i) block[dim * kKernelWidth + i] = rng.normal();
    }
  }
  return stack;
}

HouseholderStack init_stack(StackVariant variant, std::size_t dim, std::size_t num_layers,
                            std::size_t per_layer, std::uint64_t seed, LohReduction reduction) {
  std::vector<std::size_t> sizes(num_layers, per_layer);
  return init_stack(variant, dim, sizes, seed, reduction);
}

Vec reflection_vector(const HouseholderStack& stack, std::size_t k,
                      std::span<const double> generator_input) {
  const auto block = stack.reflection_params(k);
  if (stack.variant == StackVariant::Roh) return Vec(block.begin(), block.end());
  const LohFeatures f = loh_features(stack, generator_input);
  Vec v = generate(stack, block, f);
  if (norm(v) < kReflectionFloor) return fallback_vector(generator_input);
  return v;
}

std::vector<Vec> reflection_vectors(const HouseholderStack& stack,
                                    std::span<const double> generator_input) {
  if (generator_input.size() != stack.dim)
    throw DimensionMismatch(stack.dim, generator_input.size());
  const std::size_t count = stack.num_reflections();
  std::vector<Vec> out;
  out.reserve(count);
  if (stack.variant == StackVariant::Roh) {
    for (std::size_t k = 0; k < count; ++k) {
      const auto block = stack.reflection_params(k);
      if (norm(block) < kReflectionFloor) throw ZeroReflectionVector();
      out.emplace_back(block.begin(), block.end());
    }
    return out;
  }
  const LohFeatures f = loh_features(stack, generator_input);
  for (std::size_t k = 0; k < count; ++k) {
    Vec v = generate(stack, stack.reflection_params(k), f);
    if (norm(v) < kReflectionFloor) v = fallback_vector(generator_input);
    out.push_back(std::move(v));
  }
  return out;
}

void apply_reflections(const HouseholderStack& stack, const std::vector<Vec>& vectors,
                       std::span<double> z) {
  if (z.size() != stack.dim) throw DimensionMismatch(stack.dim, z.size());
  for (std::size_t k : stack.application_order()) householder_apply_inplace(vectors[k], z);
}

Vec apply_stack(const HouseholderStack& stack, std::span<const double> x) {
  const auto vectors = reflection_vectors(stack, x);
  Vec y(x.begin(), x.end());
  apply_reflections(stack, vectors, y);
  return y;
}

Vec apply_stack_inverse(const HouseholderStack& stack, std::span<const double> y,
                        std::span<const double> generator_input) {
  if (y.size() != stack.dim) throw DimensionMismatch(stack.dim, y.size());
  const auto vectors = reflection_vectors(stack, generator_input);
  auto order = stack.application_order();
  Vec x(y.begin(), y.end());
  for (auto it = order.rbegin(); it != order.rend(); ++it) householder_apply_inplace(vectors[*it], x);
  return x;
}

Mat stack_matrix(const HouseholderStack& stack, std::span<const double> generator_input) {
  const std::size_t d = stack.dim;
  const auto vectors = reflection_vectors(stack, generator_input);
  // Columns of W kept contiguous; every reflection hits all of them.
  std::vector<double> cols(d * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) cols[j * d + j] = 1.0;
  for (std::size_t k : stack.application_order()) {
    const double* v = vectors[k].data();
    const double scale = 2.0 / dot(vectors[k], vectors[k]);
    for (std::size_t j = 0; j < d; ++j) {
      double* c = cols.data() + j * d;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t i = 0;
      for (; i + 4 <= d; i += 4) {
        s0 += v[i] * c[i];
        s1 += v[i + 1] * c[i + 1];
        s2 += v[i + 2] * c[i + 2];
        s3 += v[i + 3] * c[i + 3];
      }
      for (; i < d; ++i) s0 += v[i] * c[i];
      const double f = scale * ((s0 + s1) + (s2 + s3));
      for (i = 0; i < d; ++i) c[i] -= f * v[i];
    }
  }
  Mat w(d);
  for (std::size_t j = 0; j < d; ++j)
    for (std::size_t i = 0; i < d; ++i) w(i, j) = cols[j * d + i];
  return w;
}

Vec backprop_reflections(const HouseholderStack& stack, const std::vector<Vec>& vectors,
                         std::span<const double> generator_input, Vec z, Vec g,
                         std::span<double> grad) {
  const std::size_t d = stack.dim;
  if (grad.size() != stack.params.size()) throw DimensionMismatch(stack.params.size(), grad.size());
  const bool loh = stack.variant == StackVariant::Loh;
  LohFeatures f;
  if (loh) f = loh_features(stack, generator_input);

  const auto order = stack.application_order();
  Vec grad_v(d);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::size_t k = *it;
    const Vec& v = vectors[k];
    // z currently holds H z_prev; H is an involution, so this rewinds it.
    householder_apply_inplace(v, z);
    const double vv = dot(v, v);
    const double vz = dot(v, z);
    const double gv = dot(g, v);
    // y = z - 2 (v.z / v.v) v
    for (std::size_t i = 0; i < d; ++i)
      grad_v[i] = -2.0 * (z[i] * gv / vv + vz * g[i] / vv - 2.0 * vz * gv * v[i] / (vv * vv));
    // dL/dz_prev = H^T g = H g
    householder_apply_inplace(v, g);

    auto block = grad.subspan(k * stack.params_per_reflection(), stack.params_per_reflection());
    if (!loh) {
      for (std::size_t i = 0; i < d; ++i) block[i] += grad_v[i];
    } else if (!is_fallback(stack, stack.reflection_params(k), f)) {
      for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t t = 0; t < kKernelWidth; ++t)
          block[c * kKernelWidth + t] += grad_v[c] * f.at(c, t);
        block[d * kKernelWidth + c] += grad_v[c];
      }
    }
  }
  return g;
}

bool operator==(const AnonymizerModel& a, const AnonymizerModel& b) {
  auto whitening_eq = [](const std::optional<Whitening>& x, const std::optional<Whitening>& y) {
    if (x.has_value() != y.has_value()) return false;
    return !x || (x->whiten == y->whiten && x->dewhiten == y->dewhiten);
  };
  return a.stack == b.stack && a.mu == b.mu && whitening_eq(a.whitening, b.whitening) &&
         a.form == b.form && a.seed == b.seed;
}

void validate(const AnonymizerModel& model) {
  validate(model.stack);
  if (model.mu.size() != model.stack.dim) throw DimensionMismatch(model.stack.dim, model.mu.size());
  if (model.form == AnonymizerForm::GeneralWhitened) {
    if (!model.whitening) throw InvalidShape("general whitened model without whitening factors");
    const auto& w = *model.whitening;
    if (w.whiten.dim() != model.stack.dim || w.dewhiten.dim() != model.stack.dim)
      throw DimensionMismatch(model.stack.dim, w.whiten.dim());
    if (max_abs_diff(w.whiten * w.dewhiten, Mat::identity(model.stack.dim)) > 1e-10)
      throw InvalidShape("whitening factors are not inverse to each other");
  }
}

AnonymizerModel make_simplified(HouseholderStack stack, Vec mu, std::uint64_t seed) {
  AnonymizerModel m;
  m.stack = std::move(stack);
  m.mu = std::move(mu);
  m.seed = seed;
  validate(m);
  return m;
}

AnonymizerModel make_whitened(HouseholderStack stack, Vec mu, const Mat& covariance,
                              std::uint64_t seed) {
  AnonymizerModel m;
  m.stack = std::move(stack);
  m.mu = std::move(mu);
  m.whitening = cholesky_whitening(covariance);
  m.form = AnonymizerForm::GeneralWhitened;
  m.seed = seed;
  validate(m);
  return m;
}

namespace {

Vec center(const AnonymizerModel& model, std::span<const double> x) {
  if (x.size() != model.mu.size()) throw DimensionMismatch(model.mu.size(), x.size());
  Vec z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = x[i] - model.mu[i];
  if (model.form == AnonymizerForm::GeneralWhitened) z = model.whitening->whiten * z;
  return z;
}

Vec uncenter(const AnonymizerModel& model, Vec z) {
  if (model.form == AnonymizerForm::GeneralWhitened) z = model.whitening->dewhiten * z;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += model.mu[i];
  return z;
}

}  // namespace

Vec anonymize(const AnonymizerModel& model, std::span<const double> x) {
  AnonymizeTape tape;
  return anonymize_with_tape(model, x, tape);
}

Vec anonymize_with_tape(const AnonymizerModel& model, std::span<const double> x,
                        AnonymizeTape& tape) {
  Vec z = center(model, x);
  tape.vectors = reflection_vectors(model.stack, x);
  apply_reflections(model.stack, tape.vectors, z);
  tape.rotated = z;
  return uncenter(model, std::move(z));
}

void anonymize_backward(const AnonymizerModel& model, std::span<const double> x,
                        const AnonymizeTape& tape, std::span<const double> g,
                        std::span<double> grad) {
  Vec g_rot(g.begin(), g.end());
  if (model.form == AnonymizerForm::GeneralWhitened)
    g_rot = model.whitening->dewhiten.transposed() * g_rot;
  backprop_reflections(model.stack, tape.vectors, x, tape.rotated, std::move(g_rot), grad);
}

Vec select_anonymize(const EmbeddingPool& pool, std::span<const double> source_centroid,
                     const SelectionConfig& cfg) {
  Rng rng(cfg.seed);
  return select_anonymize(pool, source_centroid, cfg, rng);
}

Vec select_anonymize(const EmbeddingPool& pool, std::span<const double> source_centroid,
                     const SelectionConfig& cfg, Rng& rng) {
  if (source_centroid.size() != pool.dim()) throw DimensionMismatch(pool.dim(), source_centroid.size());
  if (cfg.n_pick < 1 || cfg.n_pick > cfg.n_far)
    throw InvalidSpec("selection needs 1 <= n_pick <= n_far");
  const auto centroids = speaker_centroids(pool);
  if (centroids.size() < cfg.n_far)
    throw PoolTooSmall("pool has " + std::to_string(centroids.size()) +
                       " speakers, selection needs " + std::to_string(cfg.n_far));

  struct Candidate {
    double distance;
    const std::string* id;
    const Vec* centroid;
  };
  std::vector<Candidate> ranked;
  ranked.reserve(centroids.size());
  for (const auto& [id, c] : centroids)
    ranked.push_back({1.0 - cosine(source_centroid, c), &id, &c});
  std::stable_sort(ranked.begin(), ranked.end(), [](const Candidate& a, const Candidate& b) {
    if (a.distance != b.distance) return a.distance > b.distance;
    return *a.id < *b.id;
  });
  ranked.resize(cfg.n_far);

  // Partial Fisher-Yates over the n_far farthest.
  for (std::size_t i = 0; i < cfg.n_pick; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(cfg.n_far - i));
    std::swap(ranked[i], ranked[j]);
  }
  // Sum in id order so the result depends only on which speakers were drawn.
  std::sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(cfg.n_pick),
            [](const Candidate& a, const Candidate& b) { return *a.id < *b.id; });
  Vec mean(pool.dim(), 0.0);
  for (std::size_t i = 0; i < cfg.n_pick; ++i)
    for (std::size_t k = 0; k < pool.dim(); ++k) mean[k] += (*ranked[i].centroid)[k];
  for (auto& m : mean) m /= static_cast<double>(cfg.n_pick);
  return mean;
}

}  // namespace ohnn
