#include <doctest.h>

#include <json.hpp>

#include "ohnn/errors.hpp"
#include "ohnn/experiment.hpp"

using namespace ohnn;

namespace {

std::string error_of(const std::string& doc) {
  try {
    parse_experiment(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("empty document gives the defaults") {
  const ExperimentConfig c = parse_experiment("{}");
  const ExperimentConfig d = default_experiment();
  CHECK(experiment_to_json(c) == experiment_to_json(d));
  CHECK(c.synthetic.num_speakers == 40);
  CHECK(c.synthetic.dim == 16);
  CHECK(c.train.iterations == 2000);
  CHECK(c.train.loss.m1 == 0.2);
  CHECK(c.train.loss.m2 == 0.2);
  CHECK(c.train.loss.scale == 30.0);
  CHECK(c.train.loss.lambda == 20.0);
  CHECK(c.user_seed == 50);
  CHECK(c.attacker_seed == 1986);
  CHECK(c.scenarios.size() == 4);
}

TEST_CASE("the printed config parses back to itself") {
  ExperimentConfig c = parse_experiment(R"({
    "anonymizer": "ohnn-loh",
    "stack": {"layer_sizes": [4, 4], "loh_reduction": "diagonal"},
    "train": {"loss": "aam", "iterations": 10, "lambda": 0},
    "scenarios": ["ignorant"],
    "subset_weights": [1.0],
    "pool_path": "x.emb"
  })");
  CHECK(c.kind == AnonymizerKind::OhnnLoh);
  CHECK(c.stack.layer_sizes == std::vector<std::size_t>{4, 4});
  CHECK(c.stack.reduction == LohReduction::Diagonal);
  CHECK(c.train.loss_variant == ClassLoss::Aam);
  CHECK(c.scenarios == std::vector<Scenario>{Scenario::Ignorant});
  CHECK(c.pool_path == std::optional<std::string>("x.emb"));
  const std::string j = experiment_to_json(c);
  CHECK(experiment_to_json(parse_experiment(j)) == j);
}

TEST_CASE("schema errors name the offending path") {
  CHECK(error_of(R"({"bogus": 1})").rfind("/bogus:", 0) == 0);
  CHECK(error_of(R"({"train": {"iterations": -3}})").rfind("/train/iterations:", 0) == 0);
  CHECK(error_of(R"({"train": {"lr": 1}})").rfind("/train/lr:", 0) == 0);
  CHECK(error_of(R"({"synthetic": {"num_speakers": 1}})").rfind("/synthetic:", 0) == 0);
  CHECK(error_of(R"({"scenarios": ["ignorant", "x"]})").rfind("/scenarios/1:", 0) == 0);
  CHECK(error_of(R"({"stack": {"layer_sizes": [4, 0]}})").rfind("/stack/layer_sizes/1:", 0) == 0);
  CHECK(error_of(R"({"anonymizer": "magic"})").rfind("/anonymizer:", 0) == 0);
  CHECK(error_of(R"({"user_seed": 5, "attacker_seed": 5})").rfind("/attacker_seed:", 0) == 0);
  CHECK(error_of(R"({"subsets": ["a", "b"], "subset_weights": [1]})")
            .rfind("/subset_weights:", 0) == 0);
  CHECK(error_of(R"({"external_pool": {"synthetic": {"dim": 4}}})")
            .rfind("/external_pool/synthetic/dim:", 0) == 0);
  CHECK(error_of("[1, 2]").rfind("/:", 0) == 0);
  CHECK(error_of("{").find("invalid JSON") != std::string::npos);
}

TEST_CASE("merge patch follows RFC 7386") {
  const auto merged = nlohmann::json::parse(
      merge_json(R"({"a": 1, "b": {"c": 2, "d": 3}})", R"({"b": {"c": null, "e": 4}, "f": 5})"));
  CHECK(merged == nlohmann::json::parse(R"({"a": 1, "b": {"d": 3, "e": 4}, "f": 5})"));
  CHECK_THROWS_AS(merge_json("[]", "{}"), ConfigError);
}

TEST_CASE("scenario config and pools follow the document") {
  ExperimentConfig c = parse_experiment(R"({"anonymizer": "selection", "synthetic": {"dim": 8},
                                            "external_pool": {"synthetic": {"num_speakers": 30}}})");
  const ScenarioConfig s = scenario_config(c, Scenario::SemiInformed);
  CHECK(s.scenario == Scenario::SemiInformed);
  CHECK(s.kind == AnonymizerKind::Selection);
  CHECK(s.selection.n_far == c.selection.n_far);
  const EmbeddingPool p = load_or_generate_pool(c);
  CHECK(p.dim() == 8);
  const EmbeddingPool ext = load_or_generate_external(c, p.dim());
  CHECK(ext.dim() == 8);
  CHECK(ext.speakers().size() == 30);
}
