#pragma once

// Declarative experiment documents shared by the CLI and the tests. The
// document is JSON; unknown keys are rejected with their JSON pointer path.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ohnn/attack.hpp"
#include "ohnn/pool.hpp"
#include "ohnn/training.hpp"

namespace ohnn {

struct ExperimentConfig {
  std::optional<std::string> pool_path;  // unset: generate from `synthetic`
  SyntheticSpec synthetic;
  // Donor pool for the selection anonymizer. Generated pools take the main
  // pool's dimension.
  std::optional<std::string> external_pool_path;
  SyntheticSpec external;
  AnonymizerKind kind = AnonymizerKind::OhnnRoh;
  StackSpec stack;
  SelectionConfig selection{20, 10, 0};
  TrainConfig train;
  std::vector<Scenario> scenarios{Scenario::Unprotected, Scenario::Ignorant,
                                  Scenario::LazyInformed, Scenario::SemiInformed};
  std::uint64_t user_seed = 50;
  std::uint64_t attacker_seed = 1986;
  BackendSpec backend;
  // Extra verification pools scored separately by attack-sim; when present
  // they replace the main pool and `subset_weights` aggregates their EERs.
  std::vector<std::string> subset_paths;
  std::vector<double> subset_weights;
  std::string output_dir = "out";
};

// Desk-scale defaults used when a document leaves a key out.
ExperimentConfig default_experiment();

// Throws ConfigError naming the offending path.
ExperimentConfig parse_experiment(std::string_view json_text);
std::string experiment_to_json(const ExperimentConfig& cfg);

// RFC 7386 merge patch of `patch` onto `base`; both are JSON objects.
std::string merge_json(std::string_view base, std::string_view patch);

ScenarioConfig scenario_config(const ExperimentConfig& cfg, Scenario scenario);
EmbeddingPool load_or_generate_pool(const ExperimentConfig& cfg);
EmbeddingPool load_or_generate_external(const ExperimentConfig& cfg, std::size_t dim);

}  // namespace ohnn
