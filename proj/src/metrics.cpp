#include "ohnn/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <json.hpp>

#include "ohnn/errors.hpp"

namespace ohnn {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace

double llr_score(std::span<const double> a, std::span<const double> b, const Calibration& calib) {
  return calib.alpha * cosine(a, b) + calib.beta;
}

Calibration fit_calibration_logistic(std::span<const double> target_cosines,
                                     std::span<const double> nontarget_cosines, double ridge) {
  if (target_cosines.empty() || nontarget_cosines.empty()) throw EmptyScores();
  const double wt = 0.5 / static_cast<double>(target_cosines.size());
  const double wn = 0.5 / static_cast<double>(nontarget_cosines.size());
  double alpha = 1.0, beta = 0.0;
  // Newton iterations on the penalized, class-balanced cross-entropy.
  for (int iter = 0; iter < 100; ++iter) {
    double ga = ridge * alpha, gb = 0.0;
    double haa = ridge, hab = 0.0, hbb = 0.0;
    auto accumulate = [&](std::span<const double> xs, double label, double w) {
      for (double x : xs) {
        const double p = sigmoid(alpha * x + beta);
        const double r = w * (p - label);
        ga += r * x;
        gb += r;
        const double c = w * p * (1.0 - p);
        haa += c * x * x;
        hab += c * x;
        hbb += c;
      }
    };
    accumulate(target_cosines, 1.0, wt);
    accumulate(nontarget_cosines, 0.0, wn);
    const double det = haa * hbb - hab * hab;
    if (!(det > 0.0)) break;
    const double da = (hbb * ga - hab * gb) / det;
    const double db = (haa * gb - hab * ga) / det;
    alpha -= da;
    beta -= db;
    if (std::abs(da) + std::abs(db) < 1e-12) break;
  }
  return {alpha, beta};
}

Calibration fit_calibration_means(std::span<const double> target_cosines,
                                  std::span<const double> nontarget_cosines, double level) {
  if (target_cosines.empty() || nontarget_cosines.empty()) throw EmptyScores();
  auto mean = [](std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
  };
  const double mt = mean(target_cosines), mn = mean(nontarget_cosines);
  if (mt == mn) throw DegenerateReference();
  const double alpha = 2.0 * level / (mt - mn);
  return {alpha, level - alpha * mt};
}

Scorer calibrated_cosine(const Calibration& calib) {
  return [calib](std::span<const double> a, std::span<const double> b) {
    return llr_score(a, b, calib);
  };
}

std::string_view to_string(MatrixBlock b) {
  switch (b) {
    case MatrixBlock::OO: return "oo";
    case MatrixBlock::OA: return "oa";
    case MatrixBlock::AA: return "aa";
  }
  return "?";
}

SimilarityMatrix similarity_matrix(const SpeakerGroups& group_a, const SpeakerGroups& group_b,
                                   const Scorer& scorer, MatrixBlock block) {
  SimilarityMatrix m;
  m.block = block;
  for (const auto& [spk, utts] : group_a) {
    if (!group_b.count(spk)) throw InsufficientUtterances(spk);
    m.speakers.push_back(spk);
  }
  if (group_b.size() != group_a.size())
    throw InvalidShape("similarity matrix groups list different speakers");
  const bool exclude_self = block != MatrixBlock::OA;
  const std::size_t n = m.speakers.size();
  m.values.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = group_a.at(m.speakers[i]);
    for (std::size_t j = 0; j < n; ++j) {
      const auto& b = group_b.at(m.speakers[j]);
      const bool skip_same = exclude_self && i == j;
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t k = 0; k < a.size(); ++k)
        for (std::size_t l = 0; l < b.size(); ++l) {
          if (skip_same && k == l) continue;
          sum += scorer(a[k], b[l]);
          ++count;
        }
      if (count == 0) throw InsufficientUtterances(m.speakers[i]);
      m(i, j) = sigmoid(sum / static_cast<double>(count));
    }
  }
  return m;
}

double d_diag(const SimilarityMatrix& m) {
  const std::size_t n = m.size();
  if (n < 2) throw MatrixTooSmall();
  // Same value as mean(diagonal) - mean(off-diagonal), summed as differences
  // so that a constant matrix gives exactly zero.
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) sum += m(i, i) - m(i, j);
  const double nd = static_cast<double>(n);
  return std::abs(sum / (nd * (nd - 1.0)));
}

double g_vd(const SimilarityMatrix& m_aa, const SimilarityMatrix& m_oo) {
  const double ref = d_diag(m_oo);
  if (ref == 0.0) throw DegenerateReference();
  return 10.0 * std::log10(d_diag(m_aa) / ref);
}

EerResult eer(const ScoreSet& scores) {
  if (scores.target.empty() || scores.nontarget.empty()) throw EmptyScores();
  struct Labeled {
    double score;
    bool target;
  };
  std::vector<Labeled> all;
  all.reserve(scores.target.size() + scores.nontarget.size());
  for (double s : scores.target) all.push_back({s, true});
  for (double s : scores.nontarget) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Labeled& a, const Labeled& b) { return a.score < b.score; });

  const double nt = static_cast<double>(scores.target.size());
  const double nn = static_cast<double>(scores.nontarget.size());
  struct Point {
    double fa, fr, threshold;
  };
  // Raising the threshold moves from (fa=1, fr=0) towards (fa=0, fr=1).
  std::vector<Point> pts;
  pts.push_back({1.0, 0.0, all.front().score});
  std::size_t rejected_t = 0, rejected_n = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double s = all[i].score;
    for (; i < all.size() && all[i].score == s; ++i) (all[i].target ? rejected_t : rejected_n)++;
    const double threshold =
        i < all.size() ? s + (all[i].score - s) / 2.0 : std::nextafter(s, INFINITY);
    pts.push_back({1.0 - rejected_n / nn, rejected_t / nt, threshold});
  }

  // Lower convex hull of (fa, fr), walking fa from 0 to 1.
  std::reverse(pts.begin(), pts.end());
  std::vector<Point> hull;
  for (const Point& p : pts) {
    while (hull.size() >= 2) {
      const Point& a = hull[hull.size() - 2];
      const Point& b = hull.back();
      const double cross = (b.fa - a.fa) * (p.fr - a.fr) - (b.fr - a.fr) * (p.fa - a.fa);
      if (cross > 0.0) break;
      hull.pop_back();
    }
    hull.push_back(p);
  }

  for (std::size_t k = 0; k + 1 < hull.size(); ++k) {
    const Point& a = hull[k];
    const Point& b = hull[k + 1];
    const double da = a.fr - a.fa;
    const double db = b.fr - b.fa;
    if (da >= 0.0 && db <= 0.0) {
      if (da == db) return {a.fa, a.threshold};
      const double t = da / (da - db);
      return {a.fa + t * (b.fa - a.fa), a.threshold + t * (b.threshold - a.threshold)};
    }
  }
  return {hull.back().fa, hull.back().threshold};
}

double weighted_average_eer(std::span<const WeightedEer> subsets) {
  double num = 0.0, den = 0.0;
  for (const auto& s : subsets) {
    if (s.weight < 0.0) throw InvalidSpec("negative subset weight");
    num += s.weight * s.eer;
    den += s.weight;
  }
  if (!(den > 0.0)) throw ZeroWeightSum();
  return num / den;
}

std::string trials_to_csv(std::span<const ScoredTrial> trials) {
  std::string out = "enroll_id,test_id,score,target_flag\n";
  for (const auto& t : trials) {
    out += t.enroll_id + ',' + t.test_id + ',' + format_double(t.score) + ',' +
           (t.target ? "1" : "0") + '\n';
  }
  return out;
}

ScoreSet to_score_set(std::span<const ScoredTrial> trials) {
  ScoreSet s;
  for (const auto& t : trials) (t.target ? s.target : s.nontarget).push_back(t.score);
  return s;
}

std::string matrix_to_csv(const SimilarityMatrix& m) {
  std::string out = "speaker";
  for (const auto& s : m.speakers) out += ',' + s;
  out += '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += m.speakers[i];
    for (std::size_t j = 0; j < m.size(); ++j) out += ',' + format_double(m(i, j));
    out += '\n';
  }
  return out;
}

std::string matrix_to_json(const SimilarityMatrix& m) {
  nlohmann::ordered_json j;
  j["block"] = to_string(m.block);
  j["speakers"] = m.speakers;
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < m.size(); ++i)
    rows.emplace_back(m.values.begin() + static_cast<std::ptrdiff_t>(i * m.size()),
                      m.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * m.size()));
  j["values"] = rows;
  j["d_diag"] = m.size() >= 2 ? nlohmann::ordered_json(d_diag(m)) : nlohmann::ordered_json(nullptr);
  return j.dump(2);
}

}  // namespace ohnn
