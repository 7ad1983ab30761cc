#include <doctest.h>

#include <cmath>

#include "ohnn/anonymizer.hpp"
#include "ohnn/errors.hpp"
#include "ohnn/random.hpp"
#include "oracles.hpp"

using namespace ohnn;

namespace {

Vec random_vec(Rng& rng, std::size_t d) {
  Vec v(d);
  for (double& x : v) x = rng.normal();
  return v;
}

double orthogonality_error(const Mat& w) {
  const Mat g = w.transposed() * w;
  return max_abs_diff(g, Mat::identity(w.dim()));
}

HouseholderStack roh(std::size_t d, std::vector<std::size_t> sizes, std::vector<double> params) {
  HouseholderStack s;
  s.variant = StackVariant::Roh;
  s.dim = d;
  s.layer_sizes = std::move(sizes);
  s.params = std::move(params);
  return s;
}

}  // namespace

TEST_CASE("single reflection stack") {
  const auto s = roh(3, {1}, {1, 0, 0});
  CHECK(apply_stack(s, Vec{2, 3, 4}) == Vec{-2, 3, 4});
}

TEST_CASE("apply_stack equals the dense product of its reflections") {
  Rng rng(21);
  for (int t = 0; t < 200; ++t) {
    const std::size_t d = 1 + rng.below(16);
    const std::size_t layers = 1 + rng.below(4);
    std::vector<std::size_t> sizes;
    for (std::size_t l = 0; l < layers; ++l) sizes.push_back(1 + rng.below(d));
    const auto s = init_stack(StackVariant::Roh, d, sizes, rng.below(1000));
    std::vector<std::vector<std::vector<double>>> dense_layers;
    std::size_t k = 0;
    for (std::size_t q : sizes) {
      dense_layers.emplace_back();
      for (std::size_t i = 0; i < q; ++i, ++k) {
        auto p = s.reflection_params(k);
        dense_layers.back().emplace_back(p.begin(), p.end());
      }
    }
    const auto w = oracle::stack_product(dense_layers, d);
    const Vec x = random_vec(rng, d);
    const Vec y = apply_stack(s, x);
    const auto ref = oracle::matvec(w, x);
    for (std::size_t i = 0; i < d; ++i)
      CHECK(std::abs(y[i] - ref[i]) <= 1e-10 * std::max(1.0, std::abs(ref[i])));
  }
}

TEST_CASE("random ROH stack at full size preserves norms and is orthogonal") {
  const auto s = init_stack(StackVariant::Roh, 192, 12, 192, 50);
  Rng rng(1);
  const Vec x = random_vec(rng, 192);
  const double ratio = norm(apply_stack(s, x)) / norm(x);
  CHECK(ratio >= 1.0 - 1e-10);
  CHECK(ratio <= 1.0 + 1e-10);
  CHECK(orthogonality_error(stack_matrix(s, x)) < 1e-9);
}

TEST_CASE("inverse runs the reflections in reverse") {
  Rng rng(8);
  for (auto variant : {StackVariant::Roh, StackVariant::Loh}) {
    const auto s = init_stack(variant, 10, 3, 4, 77);
    const Vec x = random_vec(rng, 10);
    const Vec back = apply_stack_inverse(s, apply_stack(s, x), x);
    for (std::size_t i = 0; i < 10; ++i) CHECK(std::abs(back[i] - x[i]) < 1e-9);
  }
}

TEST_CASE("LOH stacks are orthogonal for every input") {
  Rng rng(9);
  for (auto red : {LohReduction::MeanPool, LohReduction::Diagonal}) {
    const auto s = init_stack(StackVariant::Loh, 12, 2, 5, 3, red);
    for (int t = 0; t < 10; ++t) CHECK(orthogonality_error(stack_matrix(s, random_vec(rng, 12))) < 1e-12);
  }
}

TEST_CASE("LOH falls back when the generated vector vanishes") {
  auto s = init_stack(StackVariant::Loh, 4, 1, 1, 3);
  std::fill(s.params.begin(), s.params.end(), 0.0);
  const Vec x{3, 0, 4, 0};
  const Vec v = reflection_vector(s, 0, x);
  CHECK(v[0] == doctest::Approx(1.0 + 3.0 / 10.0));
  CHECK(v[2] == doctest::Approx(4.0 / 10.0));
  CHECK(orthogonality_error(stack_matrix(s, x)) < 1e-12);
}

TEST_CASE("init_stack determinism and seeds") {
  const auto a = init_stack(StackVariant::Roh, 16, 4, 8, 50);
  const auto b = init_stack(StackVariant::Roh, 16, 4, 8, 50);
  const auto c = init_stack(StackVariant::Roh, 16, 4, 8, 1986);
  CHECK(a == b);
  CHECK(a.params != c.params);
  const auto l = init_stack(StackVariant::Loh, 16, 2, 3, 50);
  CHECK(l.params.size() == 6 * 4 * 16);
  CHECK(l.params_per_reflection() == 64);
}

TEST_CASE("validate rejects malformed stacks") {
  CHECK_THROWS_AS(validate(roh(3, {}, {})), InvalidShape);
  CHECK_THROWS_AS(validate(roh(3, {4}, std::vector<double>(12, 1.0))), InvalidShape);
  CHECK_THROWS_AS(validate(roh(3, {1}, {1, 0})), InvalidShape);
  CHECK_THROWS_AS(validate(roh(3, {1}, {0, 0, 0})), Error);
  CHECK_THROWS_AS(apply_stack(roh(3, {1}, {1, 0, 0}), Vec{1, 2}), DimensionMismatch);
}

TEST_CASE("backprop_reflections matches finite differences") {
  Rng rng(12);
  for (auto variant : {StackVariant::Roh, StackVariant::Loh}) {
    auto s = init_stack(variant, 5, 2, 3, 4);
    const Vec x = random_vec(rng, 5), c = random_vec(rng, 5);
    auto loss = [&](const HouseholderStack& st) { return dot(c, apply_stack(st, x)); };
    const auto vecs = reflection_vectors(s, x);
    Vec z = x;
    apply_reflections(s, vecs, z);
    std::vector<double> grad(s.params.size(), 0.0);
    const Vec gin = backprop_reflections(s, vecs, x, z, c, grad);
    for (std::size_t p = 0; p < s.params.size(); ++p) {
      auto plus = s, minus = s;
      plus.params[p] += 1e-6;
      minus.params[p] -= 1e-6;
      const double num = (loss(plus) - loss(minus)) / 2e-6;
      CHECK(std::abs(grad[p] - num) < 1e-6 * std::max(1.0, std::abs(num)));
    }
    // With fixed vectors the input gradient is W^T c.
    if (variant == StackVariant::Roh) {
      const Vec wt = apply_stack_inverse(s, c, x);
      for (std::size_t i = 0; i < 5; ++i) CHECK(gin[i] == doctest::Approx(wt[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("anonymize hand cases") {
  // v orthogonal to x - mu leaves x fixed.
  const Vec mu{1, 1, 1};
  const auto m = make_simplified(roh(3, {1}, {0, 0, 1}), mu);
  const Vec x{4, -2, 1};
  const Vec y = anonymize(m, x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(x[i]));

  const auto s = init_stack(StackVariant::Roh, 6, 2, 3, 5);
  const auto z = make_simplified(s, Vec(6, 0.0));
  Rng rng(1);
  const Vec v = random_vec(rng, 6);
  CHECK(anonymize(z, v) == apply_stack(s, v));
}

TEST_CASE("GeneralWhitened keeps mean and covariance (Monte-Carlo)") {
  constexpr std::size_t d = 8, n = 10000;
  Rng rng(31);
  Mat a(d);
  for (double& x : a.data()) x = rng.normal() * 0.4;
  Mat cov = a * a.transposed();
  for (std::size_t i = 0; i < d; ++i) cov(i, i) += 0.5;
  Vec mu(d);
  for (double& x : mu) x = rng.normal();
  const auto model = make_whitened(init_stack(StackVariant::Roh, d, 4, 8, 50), mu, cov);
  const Whitening w = cholesky_whitening(cov);

  std::vector<Vec> out;
  for (std::size_t s = 0; s < n; ++s) {
    Vec z(d);
    for (double& x : z) x = rng.normal();
    Vec x = w.dewhiten * z;
    for (std::size_t i = 0; i < d; ++i) x[i] += mu[i];
    out.push_back(anonymize(model, x));
  }
  std::vector<double> mean;
  oracle::Dense c;
  oracle::mean_cov(out, mean, c);
  for (std::size_t i = 0; i < d; ++i) {
    CHECK(std::abs(mean[i] - mu[i]) < 3.0 * std::sqrt(cov(i, i) / n) + 1e-12);
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = std::sqrt((cov(i, j) * cov(i, j) + cov(i, i) * cov(j, j)) / n);
      CHECK(std::abs(c[i][j] - cov(i, j)) < 4.0 * sd);
    }
  }
}

TEST_CASE("anonymize_backward matches finite differences for both forms") {
  Rng rng(14);
  Mat cov = Mat::identity(4);
  cov(0, 1) = cov(1, 0) = 0.3;
  cov(2, 2) = 2.0;
  for (int form = 0; form < 2; ++form) {
    auto s = init_stack(StackVariant::Loh, 4, 2, 2, 6);
    const Vec mu{0.1, -0.2, 0.3, 0.0};
    auto build = [&](const HouseholderStack& st) {
      return form == 0 ? make_simplified(st, mu) : make_whitened(st, mu, cov);
    };
    const Vec x = random_vec(rng, 4), c = random_vec(rng, 4);
    AnonymizeTape tape;
    anonymize_with_tape(build(s), x, tape);
    std::vector<double> grad(s.params.size(), 0.0);
    anonymize_backward(build(s), x, tape, c, grad);
    for (std::size_t p = 0; p < s.params.size(); ++p) {
      auto plus = s, minus = s;
      plus.params[p] += 1e-6;
      minus.params[p] -= 1e-6;
      const double num = (dot(c, anonymize(build(plus), x)) - dot(c, anonymize(build(minus), x))) / 2e-6;
      CHECK(std::abs(grad[p] - num) < 1e-6 * std::max(1.0, std::abs(num)));
    }
  }
}

TEST_CASE("selection baseline") {
  // d=2 toy pool: source along +x; the three farthest by cosine distance are
  // the ones pointing left, down-left and down.
  EmbeddingPool pool(2);
  const std::vector<std::pair<std::string, Vec>> spk = {
      {"a", {1, 0.1}}, {"b", {0, 1}}, {"c", {-1, 0}}, {"d", {-1, -1}}, {"e", {0.2, -1}}};
  for (const auto& [id, v] : spk) pool.add({id, id + "-u0", Split::Train, v});
  const Vec src{1, 0};
  // cos distances: a ~0.005, b 1, c 2, d 1.707, e 0.804 -> far set {c, d, b}.
  const Vec out = select_anonymize(pool, src, {3, 3, 50});
  CHECK(out[0] == doctest::Approx((0.0 - 1.0 - 1.0) / 3.0));
  CHECK(out[1] == doctest::Approx((1.0 + 0.0 - 1.0) / 3.0));

  // n_pick = n_far = pool size: mean of all centroids regardless of seed.
  const Vec all1 = select_anonymize(pool, src, {5, 5, 1});
  const Vec all2 = select_anonymize(pool, src, {5, 5, 2});
  CHECK(all1 == all2);
  CHECK(all1[0] == doctest::Approx((1.0 + 0.0 - 1.0 - 1.0 + 0.2) / 5.0));

  CHECK_THROWS_AS(select_anonymize(pool, src, {6, 3, 0}), PoolTooSmall);

  // Different seeds usually draw different subsets.
  int differ = 0;
  for (std::uint64_t s = 0; s < 10; ++s)
    differ += select_anonymize(pool, src, {5, 2, s}) != select_anonymize(pool, src, {5, 2, s + 100});
  CHECK(differ > 0);
}

TEST_CASE("model container round trip") {
  Mat cov = Mat::identity(5);
  cov(0, 4) = cov(4, 0) = 0.2;
  for (auto variant : {StackVariant::Roh, StackVariant::Loh})
    for (int form = 0; form < 2; ++form) {
      auto s = init_stack(variant, 5, 3, 2, 9, LohReduction::Diagonal);
      const Vec mu{0.1, 0.2, 0.3, 0.4, 0.5};
      const auto m = form == 0 ? make_simplified(s, mu, 42) : make_whitened(s, mu, cov, 42);
      const auto bytes = encode_model(m);
      CHECK(decode_model(bytes) == m);
      CHECK(encode_model(decode_model(bytes)) == bytes);
      for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() - 1}) {
        try {
          decode_model(std::span(bytes).first(cut));
          FAIL("expected FormatError");
        } catch (const FormatError& e) {
          CHECK(e.offset() <= cut);
        }
      }
      auto bad = bytes;
      bad[0] = 'X';
      CHECK_THROWS_AS(decode_model(bad), FormatError);
    }
}
