#include "ohnn/attack.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <json.hpp>

#include "ohnn/errors.hpp"
#include "ohnn/random.hpp"

namespace ohnn {

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::Unprotected: return "unprotected";
    case Scenario::Ignorant: return "ignorant";
    case Scenario::LazyInformed: return "lazy-informed";
    case Scenario::SemiInformed: return "semi-informed";
  }
  return "?";
}

Scenario scenario_from_string(std::string_view s) {
  for (auto sc : {Scenario::Unprotected, Scenario::Ignorant, Scenario::LazyInformed,
                  Scenario::SemiInformed})
    if (s == to_string(sc)) return sc;
  throw ConfigError("unknown scenario '" + std::string(s) + "'");
}

std::string_view to_string(AnonymizerKind k) {
  switch (k) {
    case AnonymizerKind::OhnnRoh: return "ohnn-roh";
    case AnonymizerKind::OhnnLoh: return "ohnn-loh";
    case AnonymizerKind::Selection: return "selection";
  }
  return "?";
}

AnonymizerKind anonymizer_kind_from_string(std::string_view s) {
  for (auto k : {AnonymizerKind::OhnnRoh, AnonymizerKind::OhnnLoh, AnonymizerKind::Selection})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown anonymizer '" + std::string(s) + "'");
}

std::string_view to_string(CalibrationMethod m) {
  return m == CalibrationMethod::Logistic ? "logistic" : "means";
}

CalibrationMethod calibration_method_from_string(std::string_view s) {
  if (s == "logistic") return CalibrationMethod::Logistic;
  if (s == "means") return CalibrationMethod::Means;
  throw ConfigError("unknown calibration '" + std::string(s) + "'");
}

double ScoringBackend::score(std::span<const double> enroll, std::span<const double> test) const {
  if (center.empty()) return llr_score(enroll, test, calibration);
  Vec a(enroll.begin(), enroll.end()), b(test.begin(), test.end());
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] -= center[i];
    b[i] -= center[i];
  }
  return llr_score(a, b, calibration);
}

ScoringBackend fit_backend(const EmbeddingPool& pool, const BackendSpec& spec) {
  const auto idx = pool.indices(Split::Train);
  if (idx.size() < 2) throw SplitMissing("scoring backend needs a train split");
  ScoringBackend backend;
  if (spec.center) backend.center = train_mean(pool);
  std::vector<double> targets, nontargets;
  Calibration identity;
  ScoringBackend raw{backend.center, identity};
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      const auto& ra = pool[idx[a]];
      const auto& rb = pool[idx[b]];
      const double s = raw.score(ra.vector, rb.vector);
      (ra.speaker == rb.speaker ? targets : nontargets).push_back(s);
    }
  if (targets.empty() || nontargets.empty())
    throw SplitMissing("train split needs repeated speakers and at least two speakers");
  backend.calibration = spec.calibration == CalibrationMethod::Logistic
                            ? fit_calibration_logistic(targets, nontargets)
                            : fit_calibration_means(targets, nontargets);
  return backend;
}

namespace {

bool on_side(Split split, PoolSide side) {
  switch (side) {
    case PoolSide::Trials: return split == Split::Trial;
    case PoolSide::Enrollment: return split == Split::Enroll;
    case PoolSide::Both: return split == Split::Trial || split == Split::Enroll;
    case PoolSide::Train: return split == Split::Train;
  }
  return false;
}

EmbeddingPool train_subpool(const EmbeddingPool& pool) {
  EmbeddingPool out(pool.dim());
  for (const auto& r : pool.records())
    if (r.split == Split::Train) out.add(r);
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

EmbeddingPool anonymize_pool(const EmbeddingPool& pool, const Anonymizer& anonymizer,
                             PoolSide side) {
  EmbeddingPool out = pool;
  if (const auto* model = std::get_if<AnonymizerModel>(&anonymizer)) {
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (on_side(pool[i].split, side)) out.set_vector(i, anonymize(*model, pool[i].vector));
    return out;
  }
  const auto& sel = std::get<SelectionAnonymizer>(anonymizer);
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (on_side(pool[i].split, side)) by_speaker[pool[i].speaker].push_back(i);
  const auto centroids = [&] {
    EmbeddingPool side_pool(pool.dim());
    for (const auto& [spk, idx] : by_speaker)
      for (std::size_t i : idx) side_pool.add(pool[i]);
    return speaker_centroids(side_pool);
  }();
  Rng rng(sel.config.seed);
  for (const auto& [spk, idx] : by_speaker) {
    const Vec pseudo = select_anonymize(sel.external, centroids.at(spk), sel.config, rng);
    for (std::size_t i : idx) out.set_vector(i, pseudo);
  }
  return out;
}

void validate_verification_pool(const EmbeddingPool& pool) {
  if (!pool.has_split(Split::Enroll)) throw SplitMissing("pool has no enroll split");
  if (!pool.has_split(Split::Trial)) throw SplitMissing("pool has no trial split");
  const auto trial = pool.speakers(Split::Trial);
  for (const auto& spk : pool.speakers(Split::Enroll))
    if (!std::binary_search(trial.begin(), trial.end(), spk))
      throw SplitMissing("enrolled speaker " + spk + " has no trial utterances");
}

std::vector<ScoredTrial> score_trials(const EmbeddingPool& pool, const ScoringBackend& backend) {
  validate_verification_pool(pool);
  const auto enroll = speaker_centroids(pool, Split::Enroll);
  auto trial_idx = pool.indices(Split::Trial);
  std::sort(trial_idx.begin(), trial_idx.end(), [&](std::size_t a, std::size_t b) {
    return pool[a].utterance < pool[b].utterance;
  });
  std::vector<ScoredTrial> out;
  out.reserve(enroll.size() * trial_idx.size());
  for (const auto& [spk, model] : enroll)
    for (std::size_t i : trial_idx)
      out.push_back({spk, pool[i].utterance, backend.score(model, pool[i].vector),
                     pool[i].speaker == spk});
  return out;
}

AttackHarness::AttackHarness(EmbeddingPool pool, ScenarioConfig base,
                             std::optional<EmbeddingPool> external)
    : pool_(std::move(pool)), base_(std::move(base)), fingerprint_(pool_fingerprint(pool_)) {
  validate_verification_pool(pool_);
  external_ = external ? std::move(*external) : train_subpool(pool_);
  if (external_.dim() != pool_.dim()) throw DimensionMismatch(pool_.dim(), external_.dim());
  if (base_.user_seed == base_.attacker_seed)
    throw ConfigError("user_seed and attacker_seed must differ");
}

Anonymizer AttackHarness::build(std::uint64_t seed) const {
  if (base_.kind == AnonymizerKind::Selection) {
    SelectionConfig cfg = base_.selection;
    cfg.seed = seed;
    return SelectionAnonymizer{external_, cfg};
  }
  StackSpec spec = base_.stack;
  spec.variant = base_.kind == AnonymizerKind::OhnnRoh ? StackVariant::Roh : StackVariant::Loh;
  TrainConfig cfg = base_.train;
  cfg.seed = seed;
  return train(pool_, spec, cfg).model;
}

const Anonymizer& AttackHarness::user() {
  if (!user_) user_ = build(base_.user_seed);
  return *user_;
}

const Anonymizer& AttackHarness::attacker() {
  if (!attacker_) {
    attacker_ = build(base_.attacker_seed);
    const auto* u = std::get_if<AnonymizerModel>(&user());
    const auto* a = std::get_if<AnonymizerModel>(&*attacker_);
    if (u && a && u->stack.params == a->stack.params)
      throw Error("user and attacker anonymizers are identical");
  }
  return *attacker_;
}

const ScoringBackend& AttackHarness::stock_backend() {
  if (!stock_) stock_ = fit_backend(pool_, base_.backend);
  return *stock_;
}

ScenarioReport AttackHarness::run(Scenario scenario) {
  ScenarioReport r;
  r.scenario = scenario;
  r.kind = base_.kind;
  r.config = base_;
  r.config.scenario = scenario;
  r.pool_fingerprint = fingerprint_;
  if (base_.kind == AnonymizerKind::Selection) r.external_fingerprint = pool_fingerprint(external_);

  EmbeddingPool eval = pool_;
  const ScoringBackend* backend = &stock_backend();
  ScoringBackend refit;
  switch (scenario) {
    case Scenario::Unprotected:
      break;
    case Scenario::Ignorant:
      eval = anonymize_pool(eval, user(), PoolSide::Trials);
      break;
    case Scenario::LazyInformed:
      eval = anonymize_pool(eval, user(), PoolSide::Trials);
      eval = anonymize_pool(eval, attacker(), PoolSide::Enrollment);
      break;
    case Scenario::SemiInformed:
      eval = anonymize_pool(eval, user(), PoolSide::Trials);
      eval = anonymize_pool(eval, attacker(), PoolSide::Enrollment);
      refit = fit_backend(anonymize_pool(pool_, attacker(), PoolSide::Train), base_.backend);
      backend = &refit;
      r.note =
          "embedding-level proxy: backend mean and calibration refit on attacker-anonymized "
          "train data instead of retraining a full verifier";
      break;
  }
  r.trials = score_trials(eval, *backend);
  const ScoreSet scores = to_score_set(r.trials);
  const EerResult e = eer(scores);
  r.eer_raw = e.eer;
  r.eer_capped = std::min(e.eer, 0.5);
  r.threshold = e.threshold;
  r.num_target = scores.target.size();
  r.num_nontarget = scores.nontarget.size();
  return r;
}

ScenarioReport run_scenario(const EmbeddingPool& pool, const ScenarioConfig& cfg,
                            std::optional<EmbeddingPool> external) {
  AttackHarness h(pool, cfg, std::move(external));
  return h.run(cfg.scenario);
}

std::string scenario_report_to_json(const ScenarioReport& r) {
  nlohmann::ordered_json j;
  const auto& c = r.config;
  j["scenario"] = to_string(r.scenario);
  j["anonymizer"] = to_string(r.kind);
  j["eer_raw"] = r.eer_raw;
  j["eer_capped"] = r.eer_capped;
  j["threshold"] = r.threshold;
  j["num_target"] = r.num_target;
  j["num_nontarget"] = r.num_nontarget;
  j["pool_fingerprint"] = hex64(r.pool_fingerprint);
  if (r.kind == AnonymizerKind::Selection) j["external_pool_fingerprint"] = hex64(r.external_fingerprint);
  j["config"] = {{"user_seed", c.user_seed},
                 {"attacker_seed", c.attacker_seed},
                 {"backend", {{"calibration", to_string(c.backend.calibration)},
                              {"center", c.backend.center}}}};
  if (c.kind == AnonymizerKind::Selection) {
    j["config"]["selection"] = {{"n_far", c.selection.n_far}, {"n_pick", c.selection.n_pick}};
  } else {
    j["config"]["stack"] = {{"layer_sizes", c.stack.layer_sizes},
                            {"loh_reduction", to_string(c.stack.reduction)},
                            {"form", to_string(c.stack.form)}};
    j["config"]["train"] = {{"iterations", c.train.iterations},
                            {"batch_size", c.train.batch_size},
                            {"loss", to_string(c.train.loss_variant)},
                            {"m1", c.train.loss.m1},
                            {"m2", c.train.loss.m2},
                            {"scale", c.train.loss.scale},
                            {"lambda", c.train.loss.lambda},
                            {"cycle_length", c.train.cycle_length},
                            {"lr_min", c.train.lr_min},
                            {"lr_max", c.train.lr_max}};
  }
  if (!r.note.empty()) j["note"] = r.note;
  return j.dump(2);
}

Distinctiveness distinctiveness(const EmbeddingPool& original, const EmbeddingPool& anonymized,
                                const ScoringBackend& backend) {
  if (original.size() != anonymized.size())
    throw DimensionMismatch(original.size(), anonymized.size());
  SpeakerGroups orig, anon;
  for (std::size_t i = 0; i < original.size(); ++i) {
    if (original[i].split == Split::Train) continue;
    if (anonymized[i].speaker != original[i].speaker ||
        anonymized[i].utterance != original[i].utterance)
      throw InvalidShape("pools are not record-aligned");
    orig[original[i].speaker].push_back(original[i].vector);
    anon[original[i].speaker].push_back(anonymized[i].vector);
  }
  if (orig.empty()) throw SplitMissing("pool has no enroll or trial records");
  const Scorer scorer = [&backend](std::span<const double> a, std::span<const double> b) {
    return backend.score(a, b);
  };
  Distinctiveness d;
  d.oo = similarity_matrix(orig, orig, scorer, MatrixBlock::OO);
  d.oa = similarity_matrix(orig, anon, scorer, MatrixBlock::OA);
  d.aa = similarity_matrix(anon, anon, scorer, MatrixBlock::AA);
  d.g_vd = g_vd(d.aa, d.oo);
  return d;
}

PairCosines pair_cosine_report(const EmbeddingPool& pool, const Anonymizer& anonymizer) {
  PoolSide side = PoolSide::Both;
  if (!pool.has_split(Split::Enroll) && !pool.has_split(Split::Trial)) side = PoolSide::Train;
  const EmbeddingPool anon = anonymize_pool(pool, anonymizer, side);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (on_side(pool[i].split, side)) idx.push_back(i);
  PairCosines out;
  for (std::size_t i : idx) {
    out.positive.push_back(cosine(pool[i].vector, anon[i].vector));
    for (std::size_t j : idx)
      if (pool[j].speaker != pool[i].speaker)
        out.negative.push_back(cosine(pool[i].vector, anon[j].vector));
  }
  return out;
}

std::string pair_cosines_to_csv(const PairCosines& p) {
  std::string out = "kind,cosine\n";
  char buf[64];
  auto emit = [&](const char* kind, double v) {
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    out += kind;
    out += ',';
    out.append(buf, res.ptr);
    out += '\n';
  };
  for (double v : p.positive) emit("positive", v);
  for (double v : p.negative) emit("negative", v);
  return out;
}

}  // namespace ohnn
