#include "ohnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <json.hpp>

#include "ohnn/errors.hpp"
#include "ohnn/random.hpp"

namespace ohnn {

std::string_view to_string(Optimizer o) { return o == Optimizer::Sgd ? "sgd" : "adam"; }
std::string_view to_string(Sampler s) { return s == Sampler::Utterance ? "utterance" : "speaker"; }

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 2 || cfg.batch_size % 2 != 0)
    throw ConfigError("batch_size must be even and >= 2");
  if (cfg.cycle_length < 2) throw ConfigError("cycle_length must be >= 2");
  if (!(cfg.lr_min >= 0.0 && cfg.lr_min < cfg.lr_max))
    throw ConfigError("learning rates need 0 <= lr_min < lr_max");
  try {
    validate(cfg.loss);
  } catch (const InvalidSpec& e) {
    throw ConfigError(e.what());
  }
}

double cyclical_lr(std::size_t iter, const TrainConfig& cfg) {
  const double half = static_cast<double>(cfg.cycle_length) / 2.0;
  const double pos = static_cast<double>(iter % cfg.cycle_length);
  const double span = cfg.lr_max - cfg.lr_min;
  if (pos <= half) return cfg.lr_min + span * pos / half;
  return cfg.lr_max - span * (pos - half) / half;
}

std::size_t LabelMap::label(const std::string& speaker) const {
  auto it = std::lower_bound(speakers.begin(), speakers.end(), speaker);
  if (it == speakers.end() || *it != speaker) throw InvalidSpec("unknown speaker " + speaker);
  return static_cast<std::size_t>(it - speakers.begin());
}

LabelMap train_labels(const EmbeddingPool& pool) { return {pool.speakers(Split::Train)}; }

namespace {

struct Sampled {
  std::vector<Vec> originals;
  std::vector<std::size_t> labels;
};

Sampled sample_originals(const EmbeddingPool& pool, const LabelMap& labels, std::size_t half,
                         Rng& rng, Sampler sampler) {
  const auto idx = pool.indices(Split::Train);
  if (idx.empty()) throw EmptyPool();
  std::vector<std::vector<std::size_t>> by_speaker;
  if (sampler == Sampler::Speaker) {
    by_speaker.resize(labels.size());
    for (std::size_t i : idx) by_speaker[labels.label(pool[i].speaker)].push_back(i);
  }
  Sampled s;
  for (std::size_t n = 0; n < half; ++n) {
    std::size_t rec = 0;
    if (sampler == Sampler::Utterance) {
      rec = idx[rng.below(idx.size())];
    } else {
      const auto& utts = by_speaker[rng.below(by_speaker.size())];
      rec = utts[rng.below(utts.size())];
    }
    s.originals.push_back(pool[rec].vector);
    s.labels.push_back(labels.label(pool[rec].speaker));
  }
  return s;
}

Batch assemble(const AnonymizerModel& model, const std::vector<Vec>& originals,
               const std::vector<std::size_t>& labels, std::size_t num_speakers,
               std::vector<AnonymizeTape>* tapes) {
  const std::size_t half = originals.size();
  Batch b;
  b.num_speakers = num_speakers;
  b.vectors = originals;
  b.labels = labels;
  if (tapes) tapes->resize(half);
  for (std::size_t i = 0; i < half; ++i) {
    AnonymizeTape local;
    AnonymizeTape& tape = tapes ? (*tapes)[i] : local;
    b.vectors.push_back(anonymize_with_tape(model, originals[i], tape));
    b.labels.push_back(labels[i] + num_speakers);
  }
  return b;
}

}  // namespace

Batch build_batch(const EmbeddingPool& pool, const AnonymizerModel& model, std::size_t batch_size,
                  Rng& rng, Sampler sampler) {
  if (batch_size < 2 || batch_size % 2 != 0) throw InvalidShape("batch size must be even and >= 2");
  const LabelMap labels = train_labels(pool);
  const Sampled s = sample_originals(pool, labels, batch_size / 2, rng, sampler);
  return assemble(model, s.originals, s.labels, labels.size(), nullptr);
}

ObjectiveEval evaluate_objective(const AnonymizerModel& model, const ClassifierHead& head,
                                 const std::vector<Vec>& originals,
                                 const std::vector<std::size_t>& labels, const LossConfig& cfg,
                                 ClassLoss variant) {
  std::vector<AnonymizeTape> tapes;
  ObjectiveEval out;
  out.batch = assemble(model, originals, labels, head.num_speakers, &tapes);
  LossResult res = combined_objective(out.batch, head, cfg, variant);
  out.loss = res.loss;
  out.head_grad = std::move(res.grads.head);
  out.stack_grad.assign(model.stack.params.size(), 0.0);
  const std::size_t half = originals.size();
  for (std::size_t i = 0; i < half; ++i)
    anonymize_backward(model, originals[i], tapes[i], res.grads.vectors[half + i], out.stack_grad);
  return out;
}

double mean_pair_cosine(const EmbeddingPool& pool, const AnonymizerModel& model) {
  std::vector<std::size_t> idx = pool.indices(Split::Enroll);
  const auto trial = pool.indices(Split::Trial);
  idx.insert(idx.end(), trial.begin(), trial.end());
  std::sort(idx.begin(), idx.end());
  if (idx.empty()) idx = pool.indices(Split::Train);
  if (idx.empty()) throw EmptyPool();
  double sum = 0.0;
  for (std::size_t i : idx) sum += cosine(pool[i].vector, anonymize(model, pool[i].vector));
  return sum / static_cast<double>(idx.size());
}

namespace {

class ParamOptimizer {
 public:
  ParamOptimizer(const TrainConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad, double lr) {
    if (cfg_.optimizer == Optimizer::Sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
      return;
    }
    ++t_;
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.adam_eps);
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

// Keeps ROH vectors off the reflection floor after an update.
void repair_roh(HouseholderStack& stack, const HouseholderStack& before) {
  if (stack.variant != StackVariant::Roh) return;
  for (std::size_t k = 0; k < stack.num_reflections(); ++k) {
    auto block = stack.reflection_params(k);
    if (norm(block) < kReflectionFloor) {
      const auto prev = before.reflection_params(k);
      std::copy(prev.begin(), prev.end(), block.begin());
    }
  }
}

}  // namespace

TrainResult train(const EmbeddingPool& pool, const StackSpec& spec, const TrainConfig& cfg,
                  const SnapshotFn& snapshot) {
  validate(cfg);
  const auto start = std::chrono::steady_clock::now();
  const LabelMap labels = train_labels(pool);
  if (labels.size() < 2) throw PoolTooSmall("training needs at least 2 train speakers");

  HouseholderStack stack =
      init_stack(spec.variant, pool.dim(), spec.layer_sizes, cfg.seed, spec.reduction);
  TrainResult out;
  if (spec.form == AnonymizerForm::GeneralWhitened) {
    const PoolStats stats = pool_stats(pool);
    out.model = make_whitened(std::move(stack), stats.mean, stats.covariance, cfg.seed);
  } else {
    out.model = make_simplified(std::move(stack), train_mean(pool), cfg.seed);
  }

  // Independent streams for the head and for batch sampling.
  Rng head_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng batch_rng(cfg.seed ^ 0xc2b2ae3d27d4eb4fULL);
  out.head = init_head(pool.dim(), labels.size(), head_rng);

  ParamOptimizer stack_opt(cfg, out.model.stack.params.size());
  ParamOptimizer head_opt(cfg, out.head.weights.size());
  out.report.loss_trace.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const Sampled s = sample_originals(pool, labels, cfg.batch_size / 2, batch_rng, cfg.sampler);
    ObjectiveEval eval =
        evaluate_objective(out.model, out.head, s.originals, s.labels, cfg.loss, cfg.loss_variant);
    if (!std::isfinite(eval.loss) || !all_finite(eval.stack_grad) || !all_finite(eval.head_grad))
      throw DivergenceDetected(it);
    out.report.loss_trace.push_back(eval.loss);

    const double lr = cyclical_lr(it, cfg);
    const HouseholderStack before = out.model.stack;
    stack_opt.step(out.model.stack.params, eval.stack_grad, lr);
    repair_roh(out.model.stack, before);
    head_opt.step(out.head.weights, eval.head_grad, lr);
    if (snapshot && cfg.snapshot_every > 0 && (it + 1) % cfg.snapshot_every == 0)
      snapshot(it + 1, out.model);
  }

  out.report.final_mean_pair_cosine = mean_pair_cosine(pool, out.model);
  out.report.config = cfg;
  out.report.spec = spec;
  out.report.num_speakers = labels.size();
  out.report.seed = cfg.seed;
  out.report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::string report_to_json(const TrainReport& r) {
  using nlohmann::ordered_json;
  const auto& c = r.config;
  ordered_json j;
  j["seed"] = r.seed;
  j["num_speakers"] = r.num_speakers;
  j["stack"] = {{"variant", to_string(r.spec.variant)},
                {"layer_sizes", r.spec.layer_sizes},
                {"loh_reduction", to_string(r.spec.reduction)},
                {"form", to_string(r.spec.form)}};
  j["config"] = {{"seed", c.seed},
                 {"batch_size", c.batch_size},
                 {"iterations", c.iterations},
                 {"cycle_length", c.cycle_length},
                 {"lr_min", c.lr_min},
                 {"lr_max", c.lr_max},
                 {"loss", to_string(c.loss_variant)},
                 {"m1", c.loss.m1},
                 {"m2", c.loss.m2},
                 {"scale", c.loss.scale},
                 {"lambda", c.loss.lambda},
                 {"cos_margin", c.loss.cos_margin},
                 {"optimizer", to_string(c.optimizer)},
                 {"adam_beta1", c.adam_beta1},
                 {"adam_beta2", c.adam_beta2},
                 {"adam_eps", c.adam_eps},
                 {"sampler", to_string(c.sampler)}};
  j["final_mean_pair_cosine"] = r.final_mean_pair_cosine;
  j["final_loss"] = r.loss_trace.empty() ? 0.0 : r.loss_trace.back();
  j["loss_trace"] = r.loss_trace;
  return j.dump(2);
}

GradientCheck gradient_check(const AnonymizerModel& model, const ClassifierHead& head,
                             const Batch& batch, const LossConfig& cfg, ClassLoss variant,
                             double eps) {
  validate(batch, head.dim);
  const std::size_t half = batch.size() / 2;
  const std::vector<Vec> originals(batch.vectors.begin(), batch.vectors.begin() + half);
  const std::vector<std::size_t> labels(batch.labels.begin(), batch.labels.begin() + half);
  const ObjectiveEval base = evaluate_objective(model, head, originals, labels, cfg, variant);
  const auto base_sig = kink_signature(base.batch, head, cfg);

  AnonymizerModel m = model;
  ClassifierHead h = head;
  GradientCheck out;

  // Returns false when a perturbed point sits on the other side of a kink.
  auto eval_at = [&](double& slot, double original, double delta, double& value) {
    slot = original + delta;
    const ObjectiveEval e = evaluate_objective(m, h, originals, labels, cfg, variant);
    slot = original;
    value = e.loss;
    return kink_signature(e.batch, h, cfg) == base_sig;
  };
  auto check = [&](double& slot, double analytic) {
    const double original = slot;
    double fp = 0, fm = 0, fp2 = 0, fm2 = 0;
    const bool smooth = eval_at(slot, original, eps, fp) && eval_at(slot, original, -eps, fm) &&
                        eval_at(slot, original, eps / 2, fp2) &&
                        eval_at(slot, original, -eps / 2, fm2);
    if (!smooth) {
      ++out.skipped;
      return;
    }
    const double coarse = (fp - fm) / (2 * eps);
    const double fine = (fp2 - fm2) / eps;
    const double numeric = (4 * fine - coarse) / 3;
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
    ++out.checked;
  };
  for (std::size_t i = 0; i < m.stack.params.size(); ++i) check(m.stack.params[i], base.stack_grad[i]);
  for (std::size_t i = 0; i < h.weights.size(); ++i) check(h.weights[i], base.head_grad[i]);
  return out;
}

}  // namespace ohnn
