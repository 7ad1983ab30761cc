#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ohnn/linalg.hpp"

namespace ohnn {

class Rng;

// d x 2C classifier weights; column j (the class vector w_j) is stored
// contiguously. Columns are l2-normalized inside every loss evaluation, the
// stored values stay unconstrained.
struct ClassifierHead {
  std::size_t dim = 0;
  std::size_t num_speakers = 0;  // C; the head has 2C columns
  std::vector<double> weights;

  std::size_t num_classes() const { return 2 * num_speakers; }
  std::span<const double> column(std::size_t j) const {
    return std::span<const double>(weights).subspan(j * dim, dim);
  }
  std::span<double> column(std::size_t j) { return std::span<double>(weights).subspan(j * dim, dim); }

  friend bool operator==(const ClassifierHead&, const ClassifierHead&) = default;
};

ClassifierHead init_head(std::size_t dim, std::size_t num_speakers, Rng& rng);

struct LossConfig {
  double m1 = 0.2;          // additive angular margin on the target class (radians)
  double m2 = 0.2;          // w-AAM margin on the paired class (radians)
  double scale = 30.0;      // s
  double lambda = 20.0;     // weight of the cosine hinge
  double cos_margin = 0.0;  // m in max(0, cos - m)
};

void validate(const LossConfig& cfg);

enum class ClassLoss : std::uint8_t { Aam = 0, WAam = 1 };

std::string_view to_string(ClassLoss l);
ClassLoss class_loss_from_string(std::string_view s);

// N embeddings, first half original, second half anonymized. Sample i and
// sample (i + N/2) mod N form a pair, and anonymized labels are the original
// label plus C.
struct Batch {
  std::vector<Vec> vectors;
  std::vector<std::size_t> labels;
  std::size_t num_speakers = 0;

  std::size_t size() const { return vectors.size(); }
  std::size_t paired(std::size_t i) const { return (i + size() / 2) % size(); }
};

void validate(const Batch& batch, std::size_t dim);

struct LossGrads {
  std::vector<Vec> vectors;  // dLoss/d(batch vector i)
  std::vector<double> head;  // dLoss/d(head weights), head layout
};

struct LossResult {
  double loss = 0.0;
  LossGrads grads;
};

// Mean over the batch of -log(e^{s cos(theta_y + m1)} / Z).
LossResult aam_loss(const Batch& batch, const ClassifierHead& head, const LossConfig& cfg);
// As AAM, with the paired class's term in Z replaced by e^{s cos(theta_p - m2)}.
LossResult waam_loss(const Batch& batch, const ClassifierHead& head, const LossConfig& cfg);
LossResult classification_loss(const Batch& batch, const ClassifierHead& head,
                               const LossConfig& cfg, ClassLoss variant);

struct PairLossResult {
  double loss = 0.0;
  Vec d_original;
  Vec d_anonymized;
};

// max(0, cos(x_o, x_a) - m); the gradient is exactly zero when inactive.
PairLossResult cosine_pair_loss(std::span<const double> x_o, std::span<const double> x_a,
                                double cos_margin);

// Classification loss plus lambda times the mean hinge over the N/2 pairs.
LossResult combined_objective(const Batch& batch, const ClassifierHead& head,
                              const LossConfig& cfg, ClassLoss variant);

// One byte per non-smooth switch in the objective: the hinge state of every
// pair followed by the arccos clamp state of every (sample, class) cosine.
// Finite differences are only meaningful where this does not change.
std::vector<std::uint8_t> kink_signature(const Batch& batch, const ClassifierHead& head,
                                         const LossConfig& cfg);

}  // namespace ohnn
