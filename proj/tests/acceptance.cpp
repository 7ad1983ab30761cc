// Acceptance suite: one PASS/FAIL line per criterion, each checked against
// its own runtime limit. Exit status is non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <functional>
#include <string>
#include <vector>

#include "ohnn/anonymizer.hpp"
#include "ohnn/attack.hpp"
#include "ohnn/experiment.hpp"
#include "ohnn/metrics.hpp"
#include "ohnn/pool.hpp"
#include "ohnn/random.hpp"
#include "ohnn/training.hpp"
#include "oracles.hpp"

using namespace ohnn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Vec random_vec(Rng& rng, std::size_t d) {
  Vec v(d);
  for (double& x : v) x = rng.normal();
  return v;
}

double orthogonality_error(const Mat& w) {
  return max_abs_diff(w.transposed() * w, Mat::identity(w.dim()));
}

// 1. Orthogonality by construction.
Outcome orthogonality() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = init_stack(StackVariant::Roh, 192, 12, 192, seed * 7919 + 50);
    worst = std::max(worst, orthogonality_error(stack_matrix(s, Vec(192, 1.0))));
  }
  Rng rng(1986);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto red = seed % 2 ? LohReduction::Diagonal : LohReduction::MeanPool;
    const auto s = init_stack(StackVariant::Loh, 192, 12, 50, seed * 104729 + 1986, red);
    worst = std::max(worst, orthogonality_error(stack_matrix(s, random_vec(rng, 192))));
  }
  return {worst < 1e-9, fmt("max |<We_i,We_j> - delta_ij| = %.3g over 200 stacks", worst)};
}

// 2. apply_stack against the dense product of its reflections.
Outcome householder_oracle() {
  Rng rng(2);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = 1 + rng.below(16), layers = 1 + rng.below(4);
    std::vector<std::size_t> sizes;
    for (std::size_t l = 0; l < layers; ++l) sizes.push_back(1 + rng.below(d));
    const auto variant = t % 2 ? StackVariant::Loh : StackVariant::Roh;
    const auto s = init_stack(variant, d, sizes, rng.below(1u << 30));
    const Vec x = random_vec(rng, d);
    const auto vecs = reflection_vectors(s, x);
    std::vector<std::vector<std::vector<double>>> dense;
    std::size_t k = 0;
    for (std::size_t q : sizes) {
      dense.emplace_back();
      for (std::size_t i = 0; i < q; ++i) dense.back().push_back(vecs[k++]);
    }
    const auto ref = oracle::matvec(oracle::stack_product(dense, d), x);
    const Vec y = apply_stack(s, x);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      num = std::max(num, std::abs(y[i] - ref[i]));
      den = std::max(den, std::abs(ref[i]));
    }
    worst = std::max(worst, num / den);
  }
  return {worst < 1e-10, fmt("max relative error %.3g over 1000 cases", worst)};
}

// 3. GeneralWhitened keeps the first two moments.
Outcome distribution_preservation() {
  constexpr std::size_t d = 8, n = 100000;
  Rng rng(3);
  Mat a(d);
  for (double& x : a.data()) x = rng.normal() * 0.5;
  Mat cov = a * a.transposed();
  for (std::size_t i = 0; i < d; ++i) cov(i, i) += 0.25;
  const Vec mu = random_vec(rng, d);
  const auto model = make_whitened(init_stack(StackVariant::Roh, d, 4, 8, 50), mu, cov);
  const Whitening w = cholesky_whitening(cov);
  std::vector<std::vector<double>> in, out;
  in.reserve(n);
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    Vec x = w.dewhiten * random_vec(rng, d);
    for (std::size_t i = 0; i < d; ++i) x[i] += mu[i];
    out.push_back(anonymize(model, x));
    in.push_back(std::move(x));
  }
  std::vector<double> mean_in, mean_out;
  oracle::Dense cov_in, cov_out;
  oracle::mean_cov(in, mean_in, cov_in);
  oracle::mean_cov(out, mean_out, cov_out);
  double mean_z = 0.0, cov_z = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double sd = std::sqrt(cov(i, i) / n);
    mean_z = std::max({mean_z, std::abs(mean_out[i] - mu[i]) / sd,
                       std::abs(mean_out[i] - mean_in[i]) / sd});
    for (std::size_t j = 0; j < d; ++j) {
      // Standard deviation of a sample covariance entry of a Gaussian.
      const double csd = std::sqrt((cov(i, j) * cov(i, j) + cov(i, i) * cov(j, j)) / n);
      cov_z = std::max({cov_z, std::abs(cov_out[i][j] - cov(i, j)) / csd,
                        std::abs(cov_out[i][j] - cov_in[i][j]) / csd});
    }
  }
  return {mean_z < 4.0 && cov_z < 4.0,
          fmt("worst mean deviation %.2f sd, worst covariance deviation %.2f sd (band 4)",
              mean_z, cov_z)};
}

// 4. End-to-end gradient of the full objective.
Outcome gradient_correctness() {
  SyntheticSpec spec;
  spec.num_speakers = 4;
  spec.eval_speakers = 0;
  spec.dim = 6;
  const EmbeddingPool pool = generate_synthetic(spec);
  Rng rng(4);
  double worst = 0.0;
  std::size_t checked = 0, skipped = 0;
  for (auto variant : {StackVariant::Roh, StackVariant::Loh})
    for (auto loss : {ClassLoss::Aam, ClassLoss::WAam})
      for (double lambda : {0.0, 20.0}) {
        const auto model =
            make_simplified(init_stack(variant, 6, 2, 3, rng.below(1000)), train_mean(pool));
        const ClassifierHead head = init_head(6, 4, rng);
        const Batch batch = build_batch(pool, model, 8, rng);
        LossConfig cfg;
        cfg.lambda = lambda;
        const GradientCheck g = gradient_check(model, head, batch, cfg, loss);
        worst = std::max(worst, g.max_rel_error);
        checked += g.checked;
        skipped += g.skipped;
      }
  return {worst < 1e-4 && checked > 0,
          fmt("max relative error %.3g over %zu parameters (%zu at kinks skipped)", worst,
              checked, skipped)};
}

// 5. EER machinery.
Outcome eer_machinery() {
  Rng rng(5);
  double worst = 0.0;
  for (int t = 0; t < 2000; ++t) {
    const std::size_t total = 2 + rng.below(99);
    const std::size_t nt = 1 + rng.below(total - 1);
    const double shift = rng.uniform() * 3.0 - 1.0;
    const double grid = t % 2 ? 4.0 : 1e6;  // half the sets have many ties
    ScoreSet s;
    for (std::size_t i = 0; i < nt; ++i) s.target.push_back(std::round((rng.normal() + shift) * grid) / grid);
    for (std::size_t i = nt; i < total; ++i) s.nontarget.push_back(std::round(rng.normal() * grid) / grid);
    worst = std::max(worst, std::abs(eer(s).eer - oracle::eer(s.target, s.nontarget)));
  }
  ScoreSet same;
  for (int i = 0; i < 10000; ++i) {
    same.target.push_back(rng.normal());
    same.nontarget.push_back(rng.normal());
  }
  const double mc = eer(same).eer;
  const std::vector<WeightedEer> row{{39.77, .25}, {45.81, .25}, {41.55, .20},
                                     {44.07, .20}, {45.93, .05}, {49.29, .05}};
  const double avg = weighted_average_eer(row);
  return {worst < 1e-12 && std::abs(mc - 0.5) <= 0.02 && std::abs(avg - 43.28) <= 0.01,
          fmt("oracle gap %.3g on 2000 sets; identical-distribution EER %.4f; weighted %.4f",
              worst, mc, avg)};
}

// 6. Metric identities.
Outcome metric_identities() {
  Rng rng(6);
  bool exact = true;
  double worst = 0.0;
  for (std::size_t n = 2; n <= 20; ++n)
    for (int t = 0; t < 20; ++t) {
      SimilarityMatrix m;
      for (std::size_t i = 0; i < n; ++i) m.speakers.push_back(std::to_string(i));
      m.values.resize(n * n);
      for (double& x : m.values) x = rng.uniform();
      exact = exact && g_vd(m, m) == 0.0;
      worst = std::max(worst, std::abs(d_diag(m) - oracle::d_diag(m.values, n)));
    }
  return {exact && worst <= 1e-15,
          fmt("g_vd(M,M) exactly 0: %s; d_diag oracle gap %.3g", exact ? "yes" : "no", worst)};
}

struct Run {
  std::vector<double> eers;  // unprotected, ignorant, lazy, semi
};

Run run_all(const EmbeddingPool& pool, const EmbeddingPool& external, const ExperimentConfig& cfg,
            AnonymizerKind kind) {
  ExperimentConfig c = cfg;
  c.kind = kind;
  AttackHarness h(pool, scenario_config(c, Scenario::Unprotected), external);
  Run r;
  for (auto s : {Scenario::Unprotected, Scenario::Ignorant, Scenario::LazyInformed,
                 Scenario::SemiInformed})
    r.eers.push_back(h.run(s).eer_raw);
  return r;
}

// 7. Ordering of the attack-scenario EERs.
Outcome scenario_ordering() {
  const ExperimentConfig cfg = default_experiment();
  const EmbeddingPool pool = load_or_generate_pool(cfg);
  const EmbeddingPool external = load_or_generate_external(cfg, pool.dim());
  const Run roh = run_all(pool, external, cfg, AnonymizerKind::OhnnRoh);
  const Run loh = run_all(pool, external, cfg, AnonymizerKind::OhnnLoh);
  const Run sel = run_all(pool, external, cfg, AnonymizerKind::Selection);
  bool ok = roh.eers[0] < 0.05 && loh.eers[0] < 0.05 && sel.eers[0] < 0.05;
  double min_ohnn = 1.0;
  for (const Run* r : {&roh, &loh})
    for (std::size_t k = 1; k < 4; ++k) {
      ok = ok && r->eers[k] > 0.30;
      min_ohnn = std::min(min_ohnn, r->eers[k]);
    }
  ok = ok && sel.eers[3] < 0.15 && sel.eers[3] < min_ohnn;
  auto pct = [](const Run& r) {
    return fmt("%.2f/%.2f/%.2f/%.2f", 100 * r.eers[0], 100 * r.eers[1], 100 * r.eers[2],
               100 * r.eers[3]);
  };
  return {ok, "EER % unprot/ignorant/lazy/semi: ROH " + pct(roh) + ", LOH " + pct(loh) +
                  ", selection " + pct(sel)};
}

// 8. G_VD ordering.
Outcome gvd_ordering() {
  const ExperimentConfig cfg = default_experiment();
  const EmbeddingPool pool = load_or_generate_pool(cfg);
  const ScoringBackend backend = fit_backend(pool, cfg.backend);
  auto gvd_of = [&](const Anonymizer& a) {
    return distinctiveness(pool, anonymize_pool(pool, a, PoolSide::Both), backend).g_vd;
  };
  double g[3];
  for (auto variant : {StackVariant::Roh, StackVariant::Loh}) {
    StackSpec spec = cfg.stack;
    spec.variant = variant;
    TrainConfig tc = cfg.train;
    tc.seed = cfg.user_seed;
    g[static_cast<int>(variant)] = gvd_of(train(pool, spec, tc).model);
  }
  SelectionConfig sc = cfg.selection;
  sc.seed = cfg.user_seed;
  g[2] = gvd_of(SelectionAnonymizer{load_or_generate_external(cfg, pool.dim()), sc});
  return {g[2] < g[0] && g[2] < g[1],
          fmt("G_VD dB: selection %.4f, ROH %.4f, LOH %.4f", g[2], g[0], g[1])};
}

// 9. w-AAM pushes pairs further apart than AAM.
Outcome loss_ordering() {
  const ExperimentConfig cfg = default_experiment();
  const EmbeddingPool pool = load_or_generate_pool(cfg);
  bool ok = true;
  std::string detail = "mean pair cosine waam vs aam:";
  for (auto variant : {StackVariant::Roh, StackVariant::Loh}) {
    StackSpec spec = cfg.stack;
    spec.variant = variant;
    double c[2];
    for (auto loss : {ClassLoss::Aam, ClassLoss::WAam}) {
      TrainConfig tc = cfg.train;
      tc.seed = cfg.user_seed;
      tc.loss_variant = loss;
      c[static_cast<int>(loss)] = mean_pair_cosine(pool, train(pool, spec, tc).model);
    }
    ok = ok && c[1] < c[0];
    detail += fmt(" %s %.4f vs %.4f;", std::string(to_string(variant)).c_str(), c[1], c[0]);
  }
  detail.pop_back();
  return {ok, detail};
}

// 10. Determinism and persistence.
Outcome determinism() {
  ExperimentConfig cfg = default_experiment();
  cfg.train.iterations = 300;
  const EmbeddingPool pool = load_or_generate_pool(cfg);
  bool ok = encode_pool(pool) == encode_pool(load_or_generate_pool(cfg));

  for (auto kind : {AnonymizerKind::OhnnRoh, AnonymizerKind::OhnnLoh, AnonymizerKind::Selection}) {
    ExperimentConfig c = cfg;
    c.kind = kind;
    const EmbeddingPool ext = load_or_generate_external(c, pool.dim());
    AttackHarness a(pool, scenario_config(c, Scenario::SemiInformed), ext);
    AttackHarness b(pool, scenario_config(c, Scenario::SemiInformed), ext);
    const auto ra = a.run(Scenario::SemiInformed), rb = b.run(Scenario::SemiInformed);
    ok = ok && scenario_report_to_json(ra) == scenario_report_to_json(rb) &&
         trials_to_csv(ra.trials) == trials_to_csv(rb.trials);
    if (const auto* m = std::get_if<AnonymizerModel>(&a.user()))
      ok = ok && encode_model(*m) == encode_model(std::get<AnonymizerModel>(b.user())) &&
           decode_model(encode_model(*m)) == *m;
  }

  Rng rng(10);
  std::size_t cases = 0;
  for (; cases < 250; ++cases) {
    EmbeddingPool p(1 + rng.below(24));
    const std::size_t n = rng.below(30);
    for (std::size_t i = 0; i < n; ++i) {
      Vec v(p.dim());
      for (double& x : v) {
        // Mix ordinary values with extremes that f32 holds exactly.
        const std::uint64_t kind = rng.below(10);
        x = kind == 0 ? 0.0
            : kind == 1 ? -0.0
            : kind == 2 ? static_cast<double>(std::numeric_limits<float>::max())
            : kind == 3 ? static_cast<double>(std::numeric_limits<float>::denorm_min())
                        : static_cast<double>(static_cast<float>(rng.normal() * 100.0));
      }
      std::string spk(rng.below(6), 'a');
      for (char& ch : spk) ch = static_cast<char>('a' + rng.below(26));
      p.add({spk, "u" + std::to_string(i), static_cast<Split>(rng.below(3)), v});
    }
    const auto bytes = encode_pool(p);
    const EmbeddingPool back = decode_pool(bytes);
    ok = ok && back == p && encode_pool(back) == bytes;
    // Bitwise check, so -0.0 and 0.0 are told apart.
    for (std::size_t i = 0; i < p.size(); ++i)
      ok = ok && std::memcmp(back[i].vector.data(), p[i].vector.data(),
                             p.dim() * sizeof(double)) == 0;
    const auto m = make_simplified(
        init_stack(rng.below(2) ? StackVariant::Roh : StackVariant::Loh, p.dim(), 2, 1, cases),
        random_vec(rng, p.dim()), cases);
    ok = ok && decode_model(encode_model(m)) == m;
  }
  return {ok, fmt("repeat runs bit-identical; %zu fuzzed pool and model round trips", cases)};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "orthogonality by construction", 30, orthogonality},
      {2, "householder oracle equivalence", 5, householder_oracle},
      {3, "distribution preservation", 10, distribution_preservation},
      {4, "gradient correctness", 60, gradient_correctness},
      {5, "EER machinery", 5, eer_machinery},
      {6, "metric identities", 1, metric_identities},
      {7, "attack-scenario EER ordering", 180, scenario_ordering},
      {8, "G_VD ordering", 60, gvd_ordering},
      {9, "loss-variant ordering", 180, loss_ordering},
      {10, "determinism and persistence", 30, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("criterion %2d %-32s %s  %.2fs (limit %.0fs%s)  %s\n", c.id, c.name,
                pass ? "PASS" : "FAIL", secs, c.limit_s, in_time ? "" : ", exceeded",
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu criteria, %d failed\n", criteria.size(), failures);
  return failures == 0 ? 0 : 1;
}
