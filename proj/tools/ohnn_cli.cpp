// Command-line front end: gen-data, train, anonymize, evaluate, attack-sim.
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ohnn/anonymizer.hpp"
#include "ohnn/attack.hpp"
#include "ohnn/errors.hpp"
#include "ohnn/experiment.hpp"
#include "ohnn/metrics.hpp"
#include "ohnn/pool.hpp"
#include "ohnn/training.hpp"

namespace fs = std::filesystem;
using namespace ohnn;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.flush();
  if (!out) throw IoError("cannot write " + path.string());
}

fs::path sibling(const fs::path& out, std::string_view suffix) {
  return fs::path(out.string() + std::string(suffix));
}

// Flags shared by several subcommands. Unset flags leave the config alone.
struct Overrides {
  std::string config;
  std::optional<std::string> pool;
  std::optional<std::string> external_pool;
  std::optional<std::string> anonymizer;
  std::optional<std::string> loss;
  std::optional<double> m1, m2, scale, lambda, cos_margin, lr_min, lr_max;
  std::optional<std::size_t> iterations, batch_size, cycle, n_far, n_pick;
  std::optional<std::uint64_t> seed, attacker_seed;
  std::vector<std::size_t> layers;
  std::optional<std::string> reduction, form, calibration;
  std::optional<bool> center;

  void add_config(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON experiment document; flags override it");
  }
  void add_pool(CLI::App* cmd) {
    cmd->add_option("--pool", pool, "Input pool (.emb or .csv); default: synthetic from config");
  }
  void add_selection(CLI::App* cmd) {
    cmd->add_option("--external-pool", external_pool, "Donor pool for the selection anonymizer");
    cmd->add_option("--n-far", n_far, "Selection: farthest speakers kept");
    cmd->add_option("--n-pick", n_pick, "Selection: speakers averaged");
  }
  void add_training(CLI::App* cmd) {
    cmd->add_option("--loss", loss, "Classification loss: aam | waam")
        ->check(CLI::IsMember({"aam", "waam"}));
    cmd->add_option("--m1", m1, "Target-class angular margin");
    cmd->add_option("--m2", m2, "Paired-class angular margin (waam)");
    cmd->add_option("--scale", scale, "Logit scale s");
    cmd->add_option("--lambda", lambda, "Cosine hinge weight");
    cmd->add_option("--cos-margin", cos_margin, "Cosine hinge margin");
    cmd->add_option("--iterations", iterations, "Training iterations");
    cmd->add_option("--batch-size", batch_size, "Mini-batch size N (even)");
    cmd->add_option("--cycle", cycle, "Cyclical learning-rate cycle length");
    cmd->add_option("--lr-min", lr_min, "Minimum learning rate");
    cmd->add_option("--lr-max", lr_max, "Maximum learning rate");
    cmd->add_option("--layers", layers, "Reflections per layer, e.g. 8,8,8,8")->delimiter(',');
    cmd->add_option("--reduction", reduction, "LOH reduction: mean_pool | diagonal");
    cmd->add_option("--form", form, "Anonymizer form: simplified | general_whitened");
  }
  void add_seeds(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "User seed");
    cmd->add_option("--attacker-seed", attacker_seed, "Attacker seed");
  }
  void add_backend(CLI::App* cmd) {
    cmd->add_option("--calibration", calibration, "Backend calibration: logistic | means");
    cmd->add_option("--center", center, "Backend mean removal (true/false)");
  }

  // Config file, then `extra`, then scalar flags; the merged document goes
  // through the same validating parser as a config file.
  ExperimentConfig load(const nlohmann::json& extra = nlohmann::json::object()) const {
    const std::string doc = config.empty() ? std::string("{}") : read_text(config);
    nlohmann::json patch = extra;
    if (pool) patch["pool_path"] = *pool;
    if (external_pool) patch["external_pool"]["path"] = *external_pool;
    if (anonymizer) patch["anonymizer"] = *anonymizer;
    if (loss) patch["train"]["loss"] = *loss;
    auto put = [&](const char* section, const char* key, const auto& v) {
      if (v) patch[section][key] = *v;
    };
    put("train", "m1", m1);
    put("train", "m2", m2);
    put("train", "scale", scale);
    put("train", "lambda", lambda);
    put("train", "cos_margin", cos_margin);
    put("train", "lr_min", lr_min);
    put("train", "lr_max", lr_max);
    put("train", "iterations", iterations);
    put("train", "batch_size", batch_size);
    put("train", "cycle_length", cycle);
    put("selection", "n_far", n_far);
    put("selection", "n_pick", n_pick);
    put("stack", "loh_reduction", reduction);
    put("stack", "form", form);
    put("backend", "calibration", calibration);
    put("backend", "center", center);
    if (!layers.empty()) patch["stack"]["layer_sizes"] = layers;
    if (seed) patch["user_seed"] = *seed;
    if (attacker_seed) patch["attacker_seed"] = *attacker_seed;
    return parse_experiment(merge_json(doc, patch.dump()));
  }
};

Anonymizer selection_anonymizer(const ExperimentConfig& cfg, const EmbeddingPool& pool) {
  SelectionConfig sc = cfg.selection;
  sc.seed = cfg.user_seed;
  return SelectionAnonymizer{load_or_generate_external(cfg, pool.dim()), sc};
}

// --- gen-data ---------------------------------------------------------------

struct GenData {
  Overrides o;
  std::optional<std::size_t> speakers, utterances, dim, eval_speakers, enroll;
  std::optional<double> sigma_within, sigma_between, mean_offset;
  std::optional<std::uint64_t> seed;
  bool normalize = false;
  std::string out;

  void attach(CLI::App* cmd) {
    o.add_config(cmd);
    cmd->add_option("--speakers", speakers, "Number of speakers C");
    cmd->add_option("--utterances", utterances, "Utterances per speaker");
    cmd->add_option("--dim", dim, "Embedding dimension d");
    cmd->add_option("--eval-speakers", eval_speakers, "Speakers held out for enroll/trial");
    cmd->add_option("--enroll-utterances", enroll, "Enroll utterances per held-out speaker");
    cmd->add_option("--sigma-within", sigma_within, "Within-speaker standard deviation");
    cmd->add_option("--sigma-between", sigma_between, "Between-speaker standard deviation");
    cmd->add_option("--mean-offset", mean_offset, "Common offset of all speaker centroids");
    cmd->add_option("--seed", seed, "Generator seed");
    cmd->add_flag("--normalize", normalize, "Project vectors onto the unit sphere");
    cmd->add_option("-o,--output", out, "Output pool (.emb, or .csv)")->required();
  }

  int run() const {
    nlohmann::json patch = nlohmann::json::object();
    auto put = [&](const char* key, const auto& v) {
      if (v) patch["synthetic"][key] = *v;
    };
    put("num_speakers", speakers);
    put("utterances_per_speaker", utterances);
    put("dim", dim);
    put("eval_speakers", eval_speakers);
    put("enroll_utterances", enroll);
    put("sigma_within", sigma_within);
    put("sigma_between", sigma_between);
    put("mean_offset", mean_offset);
    put("seed", seed);
    if (normalize) patch["synthetic"]["normalize"] = true;
    const ExperimentConfig cfg = o.load(patch);
    const EmbeddingPool pool = generate_synthetic(cfg.synthetic);
    const fs::path path(out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (path.extension() == ".csv")
      save_pool_csv(pool, path);
    else
      save_pool(pool, path);
    write_text(sibling(path, ".config.json"), experiment_to_json(cfg) + "\n");
    std::printf("wrote %zu records (d=%zu) to %s\n", pool.size(), pool.dim(), out.c_str());
    return 0;
  }
};

// --- train --------------------------------------------------------------------

struct Train {
  Overrides o;
  std::string variant = "roh";
  std::string out;

  void attach(CLI::App* cmd) {
    o.add_config(cmd);
    o.add_pool(cmd);
    o.add_training(cmd);
    cmd->add_option("--seed", o.seed, "Training seed");
    cmd->add_option("--variant", variant, "Householder variant: roh | loh")
        ->check(CLI::IsMember({"roh", "loh"}));
    cmd->add_option("-o,--output", out, "Output model file")->required();
  }

  int run() const {
    Overrides ov = o;
    ov.anonymizer = variant == "roh" ? "ohnn-roh" : "ohnn-loh";
    const ExperimentConfig cfg = ov.load();
    const EmbeddingPool pool = load_or_generate_pool(cfg);
    StackSpec spec = cfg.stack;
    spec.variant = variant == "roh" ? StackVariant::Roh : StackVariant::Loh;
    TrainConfig tc = cfg.train;
    tc.seed = cfg.user_seed;
    const TrainResult r = train(pool, spec, tc);
    const fs::path path(out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    save_model(r.model, path);
    write_text(sibling(path, ".report.json"), report_to_json(r.report) + "\n");
    write_text(sibling(path, ".config.json"), experiment_to_json(cfg) + "\n");
    std::printf("variant %s loss %s m1 %g m2 %g s %g lambda %g iterations %zu seed %llu\n",
                variant.c_str(), std::string(to_string(tc.loss_variant)).c_str(), tc.loss.m1,
                tc.loss.m2, tc.loss.scale, tc.loss.lambda, tc.iterations,
                static_cast<unsigned long long>(tc.seed));
    std::printf("final loss %.6f, mean pair cosine %.6f\n",
                r.report.loss_trace.empty() ? 0.0 : r.report.loss_trace.back(),
                r.report.final_mean_pair_cosine);
    return 0;
  }
};

// --- anonymize ----------------------------------------------------------------

PoolSide side_from_string(const std::string& s) {
  if (s == "trials") return PoolSide::Trials;
  if (s == "enrollment") return PoolSide::Enrollment;
  if (s == "both") return PoolSide::Both;
  return PoolSide::Train;
}

struct Anonymize {
  Overrides o;
  std::string model;
  bool selection = false;
  std::string side = "both";
  std::string out;

  void attach(CLI::App* cmd) {
    o.add_config(cmd);
    o.add_pool(cmd);
    o.add_selection(cmd);
    cmd->add_option("--seed", o.seed, "Selection seed");
    auto* m = cmd->add_option("--model", model, "Trained OHNN model file");
    auto* s = cmd->add_flag("--selection", selection, "Use the selection anonymizer instead");
    m->excludes(s);
    cmd->add_option("--side", side, "Records to transform: trials | enrollment | both | train")
        ->check(CLI::IsMember({"trials", "enrollment", "both", "train"}));
    cmd->add_option("-o,--output", out, "Output pool")->required();
  }

  int run() const {
    if (model.empty() && !selection) throw ConfigError("one of --model or --selection is required");
    const ExperimentConfig cfg = o.load();
    const EmbeddingPool pool = load_or_generate_pool(cfg);
    const Anonymizer anon =
        selection ? selection_anonymizer(cfg, pool) : Anonymizer(load_model(model));
    const EmbeddingPool result = anonymize_pool(pool, anon, side_from_string(side));
    const fs::path path(out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (path.extension() == ".csv")
      save_pool_csv(result, path);
    else
      save_pool(result, path);
    write_text(sibling(path, ".config.json"), experiment_to_json(cfg) + "\n");
    std::printf("anonymized %s side of %zu records into %s\n", side.c_str(), result.size(),
                out.c_str());
    return 0;
  }
};

// --- evaluate -----------------------------------------------------------------

struct Evaluate {
  Overrides o;
  std::string model;
  bool selection = false;
  bool identity = false;
  std::size_t bins = 40;
  std::string out;

  void attach(CLI::App* cmd) {
    o.add_config(cmd);
    o.add_pool(cmd);
    o.add_selection(cmd);
    o.add_backend(cmd);
    cmd->add_option("--seed", o.seed, "Selection seed");
    auto* m = cmd->add_option("--model", model, "Trained OHNN model file");
    auto* s = cmd->add_flag("--selection", selection, "Evaluate the selection anonymizer");
    auto* i = cmd->add_flag("--identity", identity, "Evaluate without anonymization");
    m->excludes(s)->excludes(i);
    s->excludes(i);
    cmd->add_option("--bins", bins, "Pair-cosine histogram bins over [-1, 1]")
        ->check(CLI::PositiveNumber);
    cmd->add_option("-o,--output", out, "Output directory")->required();
  }

  int run() const {
    if (model.empty() && !selection && !identity)
      throw ConfigError("one of --model, --selection or --identity is required");
    const ExperimentConfig cfg = o.load();
    const EmbeddingPool pool = load_or_generate_pool(cfg);
    const ScoringBackend backend = fit_backend(pool, cfg.backend);
    EmbeddingPool anon_pool = pool;
    std::optional<Anonymizer> anon;
    if (!identity) {
      anon = selection ? selection_anonymizer(cfg, pool) : Anonymizer(load_model(model));
      anon_pool = anonymize_pool(pool, *anon, PoolSide::Both);
    }
    const Distinctiveness dist = distinctiveness(pool, anon_pool, backend);

    const fs::path dir(out);
    fs::create_directories(dir);
    nlohmann::ordered_json metrics;
    for (const SimilarityMatrix* m : {&dist.oo, &dist.oa, &dist.aa}) {
      const std::string name(to_string(m->block));
      write_text(dir / ("matrix_" + name + ".csv"), matrix_to_csv(*m));
      write_text(dir / ("matrix_" + name + ".json"), matrix_to_json(*m) + "\n");
      metrics["d_diag"][name] = d_diag(*m);
    }
    metrics["g_vd_db"] = dist.g_vd;
    metrics["num_speakers"] = dist.oo.size();

    if (anon) {
      const PairCosines pc = pair_cosine_report(pool, *anon);
      write_text(dir / "pair_cosines.csv", pair_cosines_to_csv(pc));
      auto summarize = [&](const std::vector<double>& xs) {
        std::vector<std::size_t> hist(bins, 0);
        double sum = 0.0;
        for (double x : xs) {
          sum += x;
          const double u = (std::clamp(x, -1.0, 1.0) + 1.0) / 2.0;
          hist[std::min(bins - 1, static_cast<std::size_t>(u * static_cast<double>(bins)))]++;
        }
        nlohmann::ordered_json j;
        j["count"] = xs.size();
        j["mean"] = xs.empty() ? 0.0 : sum / static_cast<double>(xs.size());
        j["histogram"] = hist;
        return j;
      };
      metrics["pair_cosine"]["bin_edges"] = {-1.0, 1.0};
      metrics["pair_cosine"]["positive"] = summarize(pc.positive);
      metrics["pair_cosine"]["negative"] = summarize(pc.negative);
    }
    write_text(dir / "metrics.json", metrics.dump(2) + "\n");
    write_text(dir / "config.json", experiment_to_json(cfg) + "\n");
    std::printf("D_diag oo %.6f oa %.6f aa %.6f  G_VD %.4f dB\n", d_diag(dist.oo),
                d_diag(dist.oa), d_diag(dist.aa), dist.g_vd);
    return 0;
  }
};

// --- attack-sim ---------------------------------------------------------------

struct AttackSim {
  Overrides o;
  std::vector<std::string> scenarios;
  std::vector<std::string> subsets;
  std::vector<double> weights;
  std::optional<std::string> out;

  void attach(CLI::App* cmd) {
    o.add_config(cmd);
    o.add_pool(cmd);
    o.add_selection(cmd);
    o.add_training(cmd);
    o.add_seeds(cmd);
    o.add_backend(cmd);
    cmd->add_option("--anonymizer", o.anonymizer, "ohnn-roh | ohnn-loh | selection")
        ->check(CLI::IsMember({"ohnn-roh", "ohnn-loh", "selection"}));
    cmd->add_option("--scenario", scenarios,
                    "Scenario to run (repeatable): unprotected | ignorant | lazy-informed | "
                    "semi-informed");
    cmd->add_option("--subset", subsets, "Verification pool scored as its own subset (repeatable)");
    cmd->add_option("--weights", weights, "Per-subset weights, comma separated")->delimiter(',');
    cmd->add_option("-o,--output", out, "Output directory (default: config output_dir)");
  }

  int run() const {
    nlohmann::json lists = nlohmann::json::object();
    if (!scenarios.empty()) lists["scenarios"] = scenarios;
    if (!subsets.empty()) lists["subsets"] = subsets;
    if (!weights.empty()) lists["subset_weights"] = weights;
    if (out) lists["output_dir"] = *out;
    const ExperimentConfig cfg = o.load(lists);
    if (!cfg.subset_weights.empty() && cfg.subset_paths.empty() && cfg.subset_weights.size() != 1)
      throw ConfigError("/subset_weights: needs one weight per subset");

    struct Subset {
      std::string label;
      EmbeddingPool pool;
    };
    std::vector<Subset> sets;
    if (cfg.subset_paths.empty()) {
      sets.push_back({"", load_or_generate_pool(cfg)});
    } else {
      for (const auto& p : cfg.subset_paths)
        sets.push_back({fs::path(p).stem().string(), load_pool_any(p)});
    }

    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    write_text(dir / "config.json", experiment_to_json(cfg) + "\n");

    // eers[scenario][subset]
    std::vector<std::vector<double>> eers(cfg.scenarios.size());
    for (const auto& set : sets) {
      std::optional<EmbeddingPool> external;
      if (cfg.kind == AnonymizerKind::Selection)
        external = load_or_generate_external(cfg, set.pool.dim());
      AttackHarness harness(set.pool, scenario_config(cfg, cfg.scenarios.front()),
                            std::move(external));
      const fs::path sub = set.label.empty() ? dir : dir / set.label;
      for (std::size_t k = 0; k < cfg.scenarios.size(); ++k) {
        const ScenarioReport r = harness.run(cfg.scenarios[k]);
        const std::string name(to_string(cfg.scenarios[k]));
        write_text(sub / (name + ".json"), scenario_report_to_json(r) + "\n");
        write_text(sub / (name + "_scores.csv"), trials_to_csv(r.trials));
        eers[k].push_back(r.eer_raw);
      }
    }

    nlohmann::ordered_json summary;
    summary["anonymizer"] = to_string(cfg.kind);
    std::ostringstream table;
    table << "scenario";
    for (const auto& s : sets) table << '\t' << (s.label.empty() ? "pool" : s.label);
    const bool weighted = !cfg.subset_weights.empty();
    if (weighted) table << "\tweighted";
    table << '\n';
    for (std::size_t k = 0; k < cfg.scenarios.size(); ++k) {
      const std::string name(to_string(cfg.scenarios[k]));
      table << name;
      nlohmann::ordered_json row;
      row["scenario"] = name;
      row["eer_percent"] = nlohmann::ordered_json::array();
      for (double e : eers[k]) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "\t%.2f", 100.0 * e);
        table << buf;
        row["eer_percent"].push_back(100.0 * e);
      }
      if (weighted) {
        std::vector<WeightedEer> w;
        for (std::size_t i = 0; i < eers[k].size(); ++i)
          w.push_back({100.0 * eers[k][i], cfg.subset_weights[i]});
        const double avg = weighted_average_eer(w);
        char buf[32];
        std::snprintf(buf, sizeof buf, "\t%.2f", avg);
        table << buf;
        row["weighted_eer_percent"] = avg;
      }
      table << '\n';
      summary["rows"].push_back(row);
    }
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    write_text(dir / "summary.tsv", table.str());
    std::cout << table.str() << std::flush;
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Orthogonal Householder speaker-vector anonymization toolkit", "ohnn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ohnn 0.1.0");

  GenData gen;
  Train tr;
  Anonymize an;
  Evaluate ev;
  AttackSim at;
  gen.attach(app.add_subcommand("gen-data", "Generate a synthetic embedding pool"));
  tr.attach(app.add_subcommand("train", "Train an OHNN anonymizer"));
  an.attach(app.add_subcommand("anonymize", "Anonymize a pool with a model or selection"));
  ev.attach(app.add_subcommand("evaluate", "Similarity matrices, G_VD and pair cosines"));
  at.attach(app.add_subcommand("attack-sim", "Run the attack scenarios and report EERs"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("gen-data")) return gen.run();
    if (app.got_subcommand("train")) return tr.run();
    if (app.got_subcommand("anonymize")) return an.run();
    if (app.got_subcommand("evaluate")) return ev.run();
    if (app.got_subcommand("attack-sim")) return at.run();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
