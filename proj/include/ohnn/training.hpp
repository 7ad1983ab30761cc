#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ohnn/anonymizer.hpp"
#include "ohnn/losses.hpp"
#include "ohnn/pool.hpp"

namespace ohnn {

class Rng;

enum class Optimizer : std::uint8_t { Sgd = 0, Adam = 1 };
enum class Sampler : std::uint8_t {
  Utterance = 0,  // uniform over train utterances
  Speaker = 1,    // uniform speaker, then uniform utterance of that speaker
};

std::string_view to_string(Optimizer o);
std::string_view to_string(Sampler s);

struct TrainConfig {
  std::uint64_t seed = 50;
  std::size_t batch_size = 64;
  std::size_t iterations = 2000;
  std::size_t cycle_length = 130000;
  double lr_min = 1e-8;
  double lr_max = 1e-3;
  ClassLoss loss_variant = ClassLoss::WAam;
  LossConfig loss;
  Optimizer optimizer = Optimizer::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  Sampler sampler = Sampler::Utterance;
  std::size_t snapshot_every = 0;  // 0 disables snapshots
};

void validate(const TrainConfig& cfg);

// Shape of the anonymizer to train; d comes from the pool.
struct StackSpec {
  StackVariant variant = StackVariant::Roh;
  std::vector<std::size_t> layer_sizes{8, 8, 8, 8};
  LohReduction reduction = LohReduction::MeanPool;
  AnonymizerForm form = AnonymizerForm::Simplified;
};

struct TrainReport {
  std::vector<double> loss_trace;
  double final_mean_pair_cosine = 0.0;
  double wall_clock_seconds = 0.0;
  TrainConfig config;
  StackSpec spec;
  std::size_t num_speakers = 0;
  std::uint64_t seed = 0;
};

// Deterministic JSON; wall-clock time is left out so identical runs produce
// identical bytes.
std::string report_to_json(const TrainReport& report);

// Triangular schedule: lr_min at the start of each cycle, lr_max half way.
double cyclical_lr(std::size_t iter, const TrainConfig& cfg);

// Class ids are positions in the sorted list of train-split speakers.
struct LabelMap {
  std::vector<std::string> speakers;
  std::size_t label(const std::string& speaker) const;
  std::size_t size() const { return speakers.size(); }
};
LabelMap train_labels(const EmbeddingPool& pool);

// N/2 train utterances followed by their anonymized counterparts (labels + C).
Batch build_batch(const EmbeddingPool& pool, const AnonymizerModel& model, std::size_t batch_size,
                  Rng& rng, Sampler sampler = Sampler::Utterance);

// Loss and gradients of the full objective w.r.t. the anonymizer parameters
// and the classifier head, for fixed original vectors and labels. The
// original side is constant; gradients reach the stack only through the
// anonymized half.
struct ObjectiveEval {
  double loss = 0.0;
  std::vector<double> stack_grad;
  std::vector<double> head_grad;
  Batch batch;
};
ObjectiveEval evaluate_objective(const AnonymizerModel& model, const ClassifierHead& head,
                                 const std::vector<Vec>& originals,
                                 const std::vector<std::size_t>& labels, const LossConfig& cfg,
                                 ClassLoss variant);

struct TrainResult {
  AnonymizerModel model;
  ClassifierHead head;
  TrainReport report;
};

using SnapshotFn = std::function<void(std::size_t iteration, const AnonymizerModel&)>;

// Mean of cos(x, anonymize(x)) over the enroll and trial splits, or over the
// train split when there are no held-out records.
double mean_pair_cosine(const EmbeddingPool& pool, const AnonymizerModel& model);

TrainResult train(const EmbeddingPool& pool, const StackSpec& spec, const TrainConfig& cfg,
                  const SnapshotFn& snapshot = {});

struct GradientCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // parameters whose perturbation crosses a kink
};

// Central differences (Richardson-refined) over every stack and head scalar,
// compared with the analytic gradient. Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-3).
GradientCheck gradient_check(const AnonymizerModel& model, const ClassifierHead& head,
                             const Batch& batch, const LossConfig& cfg, ClassLoss variant,
                             double eps = 1e-6);

}  // namespace ohnn
