#include "ohnn/experiment.hpp"

#include <json.hpp>

#include <concepts>
#include <set>

#include "ohnn/errors.hpp"

namespace ohnn {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Reads one JSON object, remembering its pointer path and which keys were
// consumed so that leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError((path.empty() ? std::string("/") : path) + ": " + what);
  }

  std::string at(std::string_view key) const { return path_ + "/" + std::string(key); }

  const json* get(std::string_view key) {
    seen_.insert(std::string(key));
    auto it = j_.find(std::string(key));
    return it == j_.end() ? nullptr : &*it;
  }

  template <std::unsigned_integral T>
  void read(std::string_view key, T& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_unsigned()) fail(at(key), "expected a non-negative integer");
      out = v->get<T>();
    }
  }
  void read(std::string_view key, double& out) {
    if (const json* v = get(key)) {
      if (!v->is_number()) fail(at(key), "expected a number");
      out = v->get<double>();
    }
  }
  void read(std::string_view key, bool& out) {
    if (const json* v = get(key)) {
      if (!v->is_boolean()) fail(at(key), "expected a boolean");
      out = v->get<bool>();
    }
  }
  void read(std::string_view key, std::string& out) {
    if (const json* v = get(key)) {
      if (!v->is_string()) fail(at(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void read(std::string_view key, std::optional<std::string>& out) {
    if (const json* v = get(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      if (!v->is_string()) fail(at(key), "expected a string or null");
      out = v->get<std::string>();
    }
  }
  template <class E, class F>
  void read_enum(std::string_view key, E& out, F&& parse) {
    std::string s;
    if (get(key) == nullptr) return;
    read(key, s);
    try {
      out = parse(s);
    } catch (const Error& e) {
      fail(at(key), e.what());
    }
  }
  template <class T>
  void read_list(std::string_view key, std::vector<T>& out) {
    if (const json* v = get(key)) {
      if (!v->is_array()) fail(at(key), "expected an array");
      std::vector<T> items;
      for (std::size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        const bool ok = std::is_floating_point_v<T> ? e.is_number() : e.is_number_unsigned();
        if (!ok) fail(at(key) + "/" + std::to_string(i), "unexpected element type");
        items.push_back(e.get<T>());
      }
      out = std::move(items);
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) fail(at(k), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E>
E parse_named(std::string_view s, std::initializer_list<E> values, std::string_view what) {
  for (E v : values)
    if (s == to_string(v)) return v;
  throw ConfigError("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

void read_synthetic(ObjectReader& r, SyntheticSpec& s, bool allow_dim) {
  r.read("num_speakers", s.num_speakers);
  r.read("utterances_per_speaker", s.utterances_per_speaker);
  if (allow_dim) r.read("dim", s.dim);
  r.read("sigma_within", s.sigma_within);
  r.read("sigma_between", s.sigma_between);
  r.read("seed", s.seed);
  r.read("normalize", s.normalize);
  r.read("mean_offset", s.mean_offset);
  r.read("eval_speakers", s.eval_speakers);
  r.read("enroll_utterances", s.enroll_utterances);
}

ordered_json synthetic_json(const SyntheticSpec& s, bool with_dim) {
  ordered_json j;
  j["num_speakers"] = s.num_speakers;
  j["utterances_per_speaker"] = s.utterances_per_speaker;
  if (with_dim) j["dim"] = s.dim;
  j["sigma_within"] = s.sigma_within;
  j["sigma_between"] = s.sigma_between;
  j["seed"] = s.seed;
  j["normalize"] = s.normalize;
  j["mean_offset"] = s.mean_offset;
  j["eval_speakers"] = s.eval_speakers;
  j["enroll_utterances"] = s.enroll_utterances;
  return j;
}

// Semantic checks run after parsing; library validators report the field.
template <class F>
void check(const std::string& path, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    ObjectReader::fail(path, e.what());
  }
}

}  // namespace

ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.external.num_speakers = 200;
  c.external.utterances_per_speaker = 5;
  c.external.eval_speakers = 0;
  c.external.seed = 99;
  // Two triangular cycles over the desk-scale run.
  c.train.cycle_length = 1000;
  c.train.lr_max = 1e-2;
  return c;
}

ExperimentConfig parse_experiment(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  ExperimentConfig c = default_experiment();
  ObjectReader root(doc, "");
  root.read("pool_path", c.pool_path);
  if (const json* v = root.get("synthetic")) {
    ObjectReader r(*v, "/synthetic");
    read_synthetic(r, c.synthetic, true);
    r.finish();
  }
  if (const json* v = root.get("external_pool")) {
    ObjectReader r(*v, "/external_pool");
    r.read("path", c.external_pool_path);
    if (const json* s = r.get("synthetic")) {
      ObjectReader rs(*s, "/external_pool/synthetic");
      read_synthetic(rs, c.external, false);
      rs.finish();
    }
    r.finish();
  }
  root.read_enum("anonymizer", c.kind, anonymizer_kind_from_string);
  if (const json* v = root.get("stack")) {
    ObjectReader r(*v, "/stack");
    r.read_list("layer_sizes", c.stack.layer_sizes);
    r.read_enum("loh_reduction", c.stack.reduction, [](std::string_view s) {
      return parse_named(s, {LohReduction::MeanPool, LohReduction::Diagonal}, "reduction");
    });
    r.read_enum("form", c.stack.form, [](std::string_view s) {
      return parse_named(s, {AnonymizerForm::Simplified, AnonymizerForm::GeneralWhitened},
                         "form");
    });
    r.finish();
  }
  if (const json* v = root.get("selection")) {
    ObjectReader r(*v, "/selection");
    r.read("n_far", c.selection.n_far);
    r.read("n_pick", c.selection.n_pick);
    r.finish();
  }
  if (const json* v = root.get("train")) {
    ObjectReader r(*v, "/train");
    TrainConfig& t = c.train;
    r.read("iterations", t.iterations);
    r.read("batch_size", t.batch_size);
    r.read("cycle_length", t.cycle_length);
    r.read("lr_min", t.lr_min);
    r.read("lr_max", t.lr_max);
    r.read_enum("loss", t.loss_variant, class_loss_from_string);
    r.read("m1", t.loss.m1);
    r.read("m2", t.loss.m2);
    r.read("scale", t.loss.scale);
    r.read("lambda", t.loss.lambda);
    r.read("cos_margin", t.loss.cos_margin);
    r.read_enum("optimizer", t.optimizer, [](std::string_view s) {
      return parse_named(s, {Optimizer::Sgd, Optimizer::Adam}, "optimizer");
    });
    r.read("adam_beta1", t.adam_beta1);
    r.read("adam_beta2", t.adam_beta2);
    r.read("adam_eps", t.adam_eps);
    r.read_enum("sampler", t.sampler, [](std::string_view s) {
      return parse_named(s, {Sampler::Utterance, Sampler::Speaker}, "sampler");
    });
    r.read("snapshot_every", t.snapshot_every);
    r.finish();
  }
  if (const json* v = root.get("scenarios")) {
    if (!v->is_array() || v->empty())
      ObjectReader::fail("/scenarios", "expected a non-empty array");
    c.scenarios.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string path = "/scenarios/" + std::to_string(i);
      if (!(*v)[i].is_string()) ObjectReader::fail(path, "expected a string");
      check(path, [&] { c.scenarios.push_back(scenario_from_string((*v)[i].get<std::string>())); });
    }
  }
  root.read("user_seed", c.user_seed);
  root.read("attacker_seed", c.attacker_seed);
  if (const json* v = root.get("backend")) {
    ObjectReader r(*v, "/backend");
    r.read_enum("calibration", c.backend.calibration, calibration_method_from_string);
    r.read("center", c.backend.center);
    r.finish();
  }
  if (const json* v = root.get("subsets")) {
    if (!v->is_array()) ObjectReader::fail("/subsets", "expected an array");
    c.subset_paths.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!(*v)[i].is_string())
        ObjectReader::fail("/subsets/" + std::to_string(i), "expected a string");
      c.subset_paths.push_back((*v)[i].get<std::string>());
    }
  }
  root.read_list("subset_weights", c.subset_weights);
  root.read("output_dir", c.output_dir);
  root.finish();

  if (!c.pool_path) check("/synthetic", [&] { validate(c.synthetic); });
  if (!c.external_pool_path) {
    SyntheticSpec e = c.external;
    e.dim = c.synthetic.dim;
    check("/external_pool/synthetic", [&] { validate(e); });
  }
  check("/train", [&] { validate(c.train.loss); });
  if (c.train.batch_size < 2 || c.train.batch_size % 2 != 0)
    ObjectReader::fail("/train/batch_size", "must be an even number >= 2");
  if (c.train.iterations == 0) ObjectReader::fail("/train/iterations", "must be positive");
  if (c.train.cycle_length < 2) ObjectReader::fail("/train/cycle_length", "must be >= 2");
  if (!(c.train.lr_min >= 0.0 && c.train.lr_min <= c.train.lr_max))
    ObjectReader::fail("/train/lr_min", "must satisfy 0 <= lr_min <= lr_max");
  if (c.stack.layer_sizes.empty())
    ObjectReader::fail("/stack/layer_sizes", "must list at least one layer");
  for (std::size_t i = 0; i < c.stack.layer_sizes.size(); ++i)
    if (c.stack.layer_sizes[i] == 0)
      ObjectReader::fail("/stack/layer_sizes/" + std::to_string(i), "must be positive");
  if (c.selection.n_pick == 0 || c.selection.n_pick > c.selection.n_far)
    ObjectReader::fail("/selection/n_pick", "must satisfy 0 < n_pick <= n_far");
  if (c.user_seed == c.attacker_seed)
    ObjectReader::fail("/attacker_seed", "must differ from user_seed");
  for (std::size_t i = 0; i < c.subset_weights.size(); ++i)
    if (!(c.subset_weights[i] >= 0.0))
      ObjectReader::fail("/subset_weights/" + std::to_string(i), "must be non-negative");
  if (!c.subset_weights.empty() && !c.subset_paths.empty() &&
      c.subset_weights.size() != c.subset_paths.size())
    ObjectReader::fail("/subset_weights", "needs one weight per subset");
  if (c.output_dir.empty()) ObjectReader::fail("/output_dir", "must not be empty");
  return c;
}

std::string experiment_to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["pool_path"] = c.pool_path ? ordered_json(*c.pool_path) : ordered_json(nullptr);
  j["synthetic"] = synthetic_json(c.synthetic, true);
  j["external_pool"] = {
      {"path", c.external_pool_path ? ordered_json(*c.external_pool_path) : ordered_json(nullptr)},
      {"synthetic", synthetic_json(c.external, false)}};
  j["anonymizer"] = to_string(c.kind);
  j["stack"] = {{"layer_sizes", c.stack.layer_sizes},
                {"loh_reduction", to_string(c.stack.reduction)},
                {"form", to_string(c.stack.form)}};
  j["selection"] = {{"n_far", c.selection.n_far}, {"n_pick", c.selection.n_pick}};
  const TrainConfig& t = c.train;
  j["train"] = {{"iterations", t.iterations},     {"batch_size", t.batch_size},
                {"cycle_length", t.cycle_length}, {"lr_min", t.lr_min},
                {"lr_max", t.lr_max},             {"loss", to_string(t.loss_variant)},
                {"m1", t.loss.m1},                {"m2", t.loss.m2},
                {"scale", t.loss.scale},          {"lambda", t.loss.lambda},
                {"cos_margin", t.loss.cos_margin}, {"optimizer", to_string(t.optimizer)},
                {"adam_beta1", t.adam_beta1},     {"adam_beta2", t.adam_beta2},
                {"adam_eps", t.adam_eps},         {"sampler", to_string(t.sampler)},
                {"snapshot_every", t.snapshot_every}};
  ordered_json sc = ordered_json::array();
  for (Scenario s : c.scenarios) sc.push_back(to_string(s));
  j["scenarios"] = sc;
  j["user_seed"] = c.user_seed;
  j["attacker_seed"] = c.attacker_seed;
  j["backend"] = {{"calibration", to_string(c.backend.calibration)},
                  {"center", c.backend.center}};
  j["subsets"] = c.subset_paths;
  j["subset_weights"] = c.subset_weights;
  j["output_dir"] = c.output_dir;
  return j.dump(2);
}

std::string merge_json(std::string_view base, std::string_view patch) {
  ordered_json b, p;
  try {
    b = ordered_json::parse(base);
    p = ordered_json::parse(patch);
  } catch (const ordered_json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
  if (!b.is_object() || !p.is_object()) throw ConfigError("merge operands must be objects");
  b.merge_patch(p);
  return b.dump(2);
}

ScenarioConfig scenario_config(const ExperimentConfig& cfg, Scenario scenario) {
  ScenarioConfig s;
  s.scenario = scenario;
  s.user_seed = cfg.user_seed;
  s.attacker_seed = cfg.attacker_seed;
  s.kind = cfg.kind;
  s.backend = cfg.backend;
  s.stack = cfg.stack;
  s.train = cfg.train;
  s.selection = cfg.selection;
  return s;
}

EmbeddingPool load_or_generate_pool(const ExperimentConfig& cfg) {
  if (cfg.pool_path) return load_pool_any(*cfg.pool_path);
  return generate_synthetic(cfg.synthetic);
}

EmbeddingPool load_or_generate_external(const ExperimentConfig& cfg, std::size_t dim) {
  if (cfg.external_pool_path) {
    EmbeddingPool p = load_pool_any(*cfg.external_pool_path);
    if (p.dim() != dim) throw DimensionMismatch(dim, p.dim());
    return p;
  }
  SyntheticSpec s = cfg.external;
  s.dim = dim;
  return generate_synthetic(s);
}

}  // namespace ohnn
