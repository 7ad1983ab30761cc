#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ohnn/anonymizer.hpp"
#include "ohnn/metrics.hpp"
#include "ohnn/pool.hpp"
#include "ohnn/training.hpp"

namespace ohnn {

enum class Scenario : std::uint8_t { Unprotected, Ignorant, LazyInformed, SemiInformed };
enum class AnonymizerKind : std::uint8_t { OhnnRoh, OhnnLoh, Selection };
enum class CalibrationMethod : std::uint8_t { Logistic, Means };

std::string_view to_string(Scenario s);
Scenario scenario_from_string(std::string_view s);
std::string_view to_string(AnonymizerKind k);
AnonymizerKind anonymizer_kind_from_string(std::string_view s);
std::string_view to_string(CalibrationMethod m);
CalibrationMethod calibration_method_from_string(std::string_view s);

// Embedding-level verifier: optional mean removal followed by calibrated
// cosine scoring. "Training" it means estimating the mean and fitting the
// calibration on labeled data.
struct BackendSpec {
  CalibrationMethod calibration = CalibrationMethod::Logistic;
  bool center = true;
};

struct ScoringBackend {
  Vec center;  // empty: no mean removal
  Calibration calibration;

  double score(std::span<const double> enroll, std::span<const double> test) const;
};

// Fits a backend on the train split of `pool`: every same-speaker utterance
// pair is a target, every cross-speaker pair a non-target.
ScoringBackend fit_backend(const EmbeddingPool& pool, const BackendSpec& spec);

// Speaker-level selection anonymizer drawing pseudo-speakers from `external`.
struct SelectionAnonymizer {
  EmbeddingPool external;
  SelectionConfig config;
};

using Anonymizer = std::variant<AnonymizerModel, SelectionAnonymizer>;

enum class PoolSide : std::uint8_t { Trials, Enrollment, Both, Train };

// New pool with the chosen side transformed. OHNN models map every utterance
// through the same function. The selection anonymizer gives each speaker one
// pseudo-vector, computed from the centroid of that speaker's records on the
// transformed side; speakers are visited in id order from a single stream
// seeded with the selection seed.
EmbeddingPool anonymize_pool(const EmbeddingPool& pool, const Anonymizer& anonymizer,
                             PoolSide side);

struct ScenarioConfig {
  Scenario scenario = Scenario::Unprotected;
  std::uint64_t user_seed = 50;
  std::uint64_t attacker_seed = 1986;
  AnonymizerKind kind = AnonymizerKind::OhnnRoh;
  BackendSpec backend;
  StackSpec stack;        // variant is overridden by kind
  TrainConfig train;      // seed is overridden by user/attacker seed
  SelectionConfig selection{20, 10, 0};  // seed is overridden likewise
};

struct ScenarioReport {
  Scenario scenario = Scenario::Unprotected;
  AnonymizerKind kind = AnonymizerKind::OhnnRoh;
  double eer_raw = 0.0;
  double eer_capped = 0.0;  // min(raw, 0.5), informational
  double threshold = 0.0;
  std::size_t num_target = 0;
  std::size_t num_nontarget = 0;
  std::vector<ScoredTrial> trials;
  std::uint64_t pool_fingerprint = 0;
  std::uint64_t external_fingerprint = 0;  // selection donor pool, else 0
  ScenarioConfig config;
  std::string note;
};

std::string scenario_report_to_json(const ScenarioReport& r);

// Checks that enroll and trial splits exist and every enrolled speaker has
// trial utterances; throws SplitMissing otherwise.
void validate_verification_pool(const EmbeddingPool& pool);

// Enrollment model per speaker is the mean of its enroll vectors; every
// enrollment speaker is scored against every trial utterance.
std::vector<ScoredTrial> score_trials(const EmbeddingPool& pool, const ScoringBackend& backend);

// Trains (or builds) user and attacker anonymizers once and runs any number
// of scenarios against them.
class AttackHarness {
 public:
  // `external` is the selection anonymizer's donor pool; when absent the
  // train split of `pool` is used.
  AttackHarness(EmbeddingPool pool, ScenarioConfig base,
                std::optional<EmbeddingPool> external = std::nullopt);

  ScenarioReport run(Scenario scenario);
  const Anonymizer& user();
  const Anonymizer& attacker();
  const ScoringBackend& stock_backend();
  const EmbeddingPool& pool() const { return pool_; }

 private:
  Anonymizer build(std::uint64_t seed) const;

  EmbeddingPool pool_;
  ScenarioConfig base_;
  EmbeddingPool external_;
  std::uint64_t fingerprint_;
  std::optional<Anonymizer> user_, attacker_;
  std::optional<ScoringBackend> stock_;
};

ScenarioReport run_scenario(const EmbeddingPool& pool, const ScenarioConfig& cfg,
                            std::optional<EmbeddingPool> external = std::nullopt);

// Voice-similarity matrices over the enroll and trial records of two
// record-aligned pools (original and anonymized), scored with `backend`.
struct Distinctiveness {
  SimilarityMatrix oo, oa, aa;
  double g_vd = 0.0;  // dB
};
Distinctiveness distinctiveness(const EmbeddingPool& original, const EmbeddingPool& anonymized,
                                const ScoringBackend& backend);

// Cosines between original utterances and anonymized ones: positive pairs
// are an utterance and its own anonymized version, negative pairs an
// utterance and the anonymized version of an utterance of another speaker.
struct PairCosines {
  std::vector<double> positive;
  std::vector<double> negative;
};
PairCosines pair_cosine_report(const EmbeddingPool& pool, const Anonymizer& anonymizer);
std::string pair_cosines_to_csv(const PairCosines& p);

}  // namespace ohnn
