#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ohnn/errors.hpp"
#include "ohnn/metrics.hpp"
#include "ohnn/pool.hpp"
#include "ohnn/random.hpp"
#include "oracles.hpp"

using namespace ohnn;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

SimilarityMatrix from_values(std::size_t n, std::vector<double> v) {
  SimilarityMatrix m;
  for (std::size_t i = 0; i < n; ++i) m.speakers.push_back(std::to_string(i));
  m.values = std::move(v);
  return m;
}

}  // namespace

TEST_CASE("calibrated cosine") {
  const Vec a{1, 2, 0}, b{0, 1, 1};
  CHECK(llr_score(a, b, {1.0, 0.0}) == cosine(a, b));
  CHECK(llr_score(a, a, {1.0, 0.0}) == doctest::Approx(1.0));
  CHECK(llr_score(a, b, {2.0, -1.0}) == doctest::Approx(2.0 * cosine(a, b) - 1.0));
}

TEST_CASE("mean-matching calibration puts the diagonal near sigmoid(2)") {
  const EmbeddingPool p = generate_synthetic({});
  std::vector<double> tgt, non;
  const auto idx = p.indices(Split::Train);
  for (std::size_t i : idx)
    for (std::size_t j : idx) {
      if (i >= j) continue;
      (p[i].speaker == p[j].speaker ? tgt : non).push_back(cosine(p[i].vector, p[j].vector));
    }
  const Calibration c = fit_calibration_means(tgt, non);
  SpeakerGroups g;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i].split != Split::Train) g[p[i].speaker].push_back(p[i].vector);
  const SimilarityMatrix m = similarity_matrix(g, g, calibrated_cosine(c), MatrixBlock::OO);
  double diag = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) diag += m(i, i);
  diag /= static_cast<double>(m.size());
  CHECK(diag > 0.85);
  CHECK(diag < 0.91);
  CHECK_THROWS_AS(fit_calibration_means(Vec{0.5}, Vec{0.5}), DegenerateReference);
  CHECK_THROWS_AS(fit_calibration_means(Vec{}, Vec{0.5}), EmptyScores);
}

TEST_CASE("logistic calibration separates targets from non-targets") {
  const Calibration c = fit_calibration_logistic(Vec{0.8, 0.9, 0.7}, Vec{0.1, -0.2, 0.0});
  CHECK(c.alpha > 0.0);
  CHECK(c.alpha * 0.8 + c.beta > 0.0);
  CHECK(c.alpha * 0.0 + c.beta < 0.0);
  CHECK(std::isfinite(c.alpha));
}

TEST_CASE("similarity matrix hand cases") {
  SpeakerGroups one{{"s", {{1, 2}, {1, 2}}}};
  const auto m1 = similarity_matrix(one, one, calibrated_cosine({1, 0}), MatrixBlock::OO);
  CHECK(m1(0, 0) == doctest::Approx(sigmoid(1.0)));
  CHECK(m1(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));

  // Vectors are tags; the scorer reads a hand-set table.
  const double table[4][4] = {{9, 0.5, 0.2, -0.4}, {0.5, 9, 0.6, 0.0},
                              {0.2, 0.6, 9, 1.0}, {-0.4, 0.0, 1.0, 9}};
  const Scorer sc = [&](std::span<const double> a, std::span<const double> b) {
    return table[static_cast<int>(a[0])][static_cast<int>(b[0])];
  };
  SpeakerGroups g{{"a", {{0}, {1}}}, {"b", {{2}, {3}}}};
  const auto m = similarity_matrix(g, g, sc, MatrixBlock::OO);
  CHECK(m(0, 0) == doctest::Approx(sigmoid(0.5)));
  CHECK(m(1, 1) == doctest::Approx(sigmoid(1.0)));
  CHECK(m(0, 1) == doctest::Approx(sigmoid((0.2 - 0.4 + 0.6 + 0.0) / 4)));
  CHECK(m(1, 0) == doctest::Approx(m(0, 1)));
  // The OA block keeps k == l pairs on the diagonal.
  const auto oa = similarity_matrix(g, g, sc, MatrixBlock::OA);
  CHECK(oa(0, 0) == doctest::Approx(sigmoid((9 + 0.5 + 0.5 + 9) / 4.0)));
}

TEST_CASE("similarity matrix properties") {
  Rng rng(1);
  SpeakerGroups g;
  for (int s = 0; s < 6; ++s)
    for (int u = 0; u < 3; ++u) {
      Vec v(5);
      for (double& x : v) x = rng.normal();
      g["s" + std::to_string(s)].push_back(v);
    }
  const auto m = similarity_matrix(g, g, calibrated_cosine({3, -1}), MatrixBlock::OO);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m.size(); ++j) CHECK(std::abs(m(i, j) - m(j, i)) < 1e-12);

  SpeakerGroups single{{"x", {{1, 0}}}};
  CHECK_THROWS_AS(similarity_matrix(single, single, calibrated_cosine({1, 0}), MatrixBlock::OO),
                  InsufficientUtterances);
  SpeakerGroups other{{"y", {{1, 0}}}};
  CHECK_THROWS(similarity_matrix(single, other, calibrated_cosine({1, 0}), MatrixBlock::OA));
}

TEST_CASE("diagonal dominance") {
  CHECK(d_diag(from_values(3, std::vector<double>(9, 0.4))) == 0.0);
  CHECK(d_diag(from_values(3, {0.9, 0.1, 0.1, 0.1, 0.9, 0.1, 0.1, 0.1, 0.9})) ==
        doctest::Approx(0.8));
  CHECK_THROWS_AS(d_diag(from_values(1, {0.5})), MatrixTooSmall);
  Rng rng(2);
  for (std::size_t n = 2; n <= 20; ++n) {
    std::vector<double> v(n * n);
    for (double& x : v) x = rng.uniform();
    CHECK(std::abs(d_diag(from_values(n, v)) - oracle::d_diag(v, n)) <= 1e-15);
  }
}

TEST_CASE("gain of voice distinctiveness") {
  Rng rng(3);
  std::vector<double> v(16);
  for (double& x : v) x = rng.uniform();
  const auto m = from_values(4, v);
  CHECK(g_vd(m, m) == 0.0);
  const auto oo = from_values(2, {1.0, 0.0, 0.0, 1.0});
  const auto aa = from_values(2, {0.1, 0.0, 0.0, 0.1});
  CHECK(g_vd(aa, oo) == doctest::Approx(-10.0));
  CHECK_THROWS_AS(g_vd(aa, from_values(2, std::vector<double>(4, 0.3))), DegenerateReference);
}

TEST_CASE("EER hand cases") {
  CHECK(eer({{0.9, 0.8}, {0.1, 0.2}}).eer == 0.0);
  const EerResult r = eer({{0.9, 0.4}, {0.6, 0.1}});
  CHECK(r.eer == doctest::Approx(0.25));
  CHECK(r.threshold > 0.4);
  CHECK(r.threshold < 0.6);
  // The hull always contains the trivial operating points, so reversed
  // scores give one half.
  CHECK(eer({{0.1, 0.2}, {0.9, 0.8}}).eer == doctest::Approx(0.5));
  CHECK_THROWS_AS(eer({{}, {0.1}}), EmptyScores);
}

TEST_CASE("EER equals brute-force threshold enumeration") {
  Rng rng(4);
  for (int t = 0; t < 500; ++t) {
    ScoreSet s;
    const std::size_t nt = 1 + rng.below(50), nn = 1 + rng.below(50);
    const double shift = rng.uniform() * 2.0 - 0.5;
    // Coarse grid to force ties.
    for (std::size_t i = 0; i < nt; ++i) s.target.push_back(std::round((rng.normal() + shift) * 4) / 4);
    for (std::size_t i = 0; i < nn; ++i) s.nontarget.push_back(std::round(rng.normal() * 4) / 4);
    CHECK(eer(s).eer == doctest::Approx(oracle::eer(s.target, s.nontarget)).epsilon(1e-12));
  }
}

TEST_CASE("identical distributions give EER one half") {
  Rng rng(5);
  ScoreSet s;
  for (int i = 0; i < 10000; ++i) {
    s.target.push_back(rng.normal());
    s.nontarget.push_back(rng.normal());
  }
  CHECK(std::abs(eer(s).eer - 0.5) < 0.02);
}

TEST_CASE("weighted average EER") {
  const std::vector<WeightedEer> one{{0.3, 1.0}};
  CHECK(weighted_average_eer(one) == 0.3);
  const std::vector<WeightedEer> two{{10.0, 0.5}, {30.0, 0.5}};
  CHECK(weighted_average_eer(two) == doctest::Approx(20.0));
  const std::vector<WeightedEer> rows{{39.77, .25}, {45.81, .25}, {41.55, .20},
                                      {44.07, .20}, {45.93, .05}, {49.29, .05}};
  CHECK(std::abs(weighted_average_eer(rows) - 43.28) < 0.01);
  const std::vector<WeightedEer> zero{{10.0, 0.0}};
  CHECK_THROWS_AS(weighted_average_eer(zero), ZeroWeightSum);
}

TEST_CASE("CSV and JSON dumps") {
  const auto m = from_values(2, {0.9, 0.1, 0.2, 0.8});
  const std::string csv = matrix_to_csv(m);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(matrix_to_json(m).find("\"d_diag\"") != std::string::npos);
  CHECK(matrix_to_json(from_values(1, {0.5})).find("null") != std::string::npos);
  const std::vector<ScoredTrial> trials{{"a", "x", 0.5, true}, {"b", "x", -0.25, false}};
  CHECK(trials_to_csv(trials) == "enroll_id,test_id,score,target_flag\na,x,0.5,1\nb,x,-0.25,0\n");
  const ScoreSet s = to_score_set(trials);
  CHECK(s.target == Vec{0.5});
  CHECK(s.nontarget == Vec{-0.25});
}
