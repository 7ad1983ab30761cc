#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ohnn/linalg.hpp"

namespace ohnn {

// Affine map applied to a cosine score; stands in for a PLDA log-likelihood
// ratio at embedding level.
struct Calibration {
  double alpha = 1.0;
  double beta = 0.0;
  friend bool operator==(const Calibration&, const Calibration&) = default;
};

double llr_score(std::span<const double> a, std::span<const double> b, const Calibration& calib);

// Class-balanced logistic regression of target vs non-target on cosine
// scores, with an l2 penalty `ridge` on alpha so separable data stays finite.
Calibration fit_calibration_logistic(std::span<const double> target_cosines,
                                     std::span<const double> nontarget_cosines,
                                     double ridge = 1e-2);
// Affine map sending the target mean to +level and the non-target mean to -level.
Calibration fit_calibration_means(std::span<const double> target_cosines,
                                  std::span<const double> nontarget_cosines, double level = 2.0);

using Scorer = std::function<double(std::span<const double>, std::span<const double>)>;
Scorer calibrated_cosine(const Calibration& calib);

// Utterance vectors grouped by speaker id.
using SpeakerGroups = std::map<std::string, std::vector<Vec>>;

enum class MatrixBlock { OO, OA, AA };
std::string_view to_string(MatrixBlock b);

struct SimilarityMatrix {
  std::vector<std::string> speakers;
  std::vector<double> values;  // row-major N x N
  MatrixBlock block = MatrixBlock::OO;

  std::size_t size() const { return speakers.size(); }
  double operator()(std::size_t i, std::size_t j) const { return values[i * size() + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * size() + j]; }
};

// M(i, j) = sigmoid(mean of scorer(a_k of speaker i, b_l of speaker j)). On
// the diagonal of the OO and AA blocks the k == l pairs are skipped, so those
// cells need two utterances per speaker. Both groups must list the same
// speakers.
SimilarityMatrix similarity_matrix(const SpeakerGroups& group_a, const SpeakerGroups& group_b,
                                   const Scorer& scorer, MatrixBlock block);

// |mean(diagonal) - mean(off-diagonal)|.
double d_diag(const SimilarityMatrix& m);
// 10 log10(D(M_aa) / D(M_oo)), in dB.
double g_vd(const SimilarityMatrix& m_aa, const SimilarityMatrix& m_oo);

struct ScoreSet {
  std::vector<double> target;
  std::vector<double> nontarget;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

// Sweeps every threshold between distinct scores (accept when score >=
// threshold), takes the convex hull of the resulting (false accept, false
// reject) points and interpolates linearly where the hull crosses
// false accept == false reject.
EerResult eer(const ScoreSet& scores);

struct WeightedEer {
  double eer = 0.0;
  double weight = 0.0;
};
double weighted_average_eer(std::span<const WeightedEer> subsets);

// Score dumps for external plotting.
struct ScoredTrial {
  std::string enroll_id;
  std::string test_id;
  double score = 0.0;
  bool target = false;
};
std::string trials_to_csv(std::span<const ScoredTrial> trials);
ScoreSet to_score_set(std::span<const ScoredTrial> trials);

std::string matrix_to_csv(const SimilarityMatrix& m);
std::string matrix_to_json(const SimilarityMatrix& m);

}  // namespace ohnn
