#include "ohnn/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "ohnn/errors.hpp"

namespace ohnn {

Mat Mat::identity(std::size_t dim) {
  Mat m(dim);
  for (std::size_t i = 0; i < dim; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::diagonal(std::span<const double> diag) {
  Mat m(diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

Mat Mat::transposed() const {
  Mat t(dim_);
  for (std::size_t r = 0; r < dim_; ++r)
    for (std::size_t c = 0; c < dim_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Mat Mat::operator*(const Mat& rhs) const {
  if (rhs.dim_ != dim_) throw DimensionMismatch(dim_, rhs.dim_);
  Mat out(dim_);
  for (std::size_t r = 0; r < dim_; ++r)
    for (std::size_t k = 0; k < dim_; ++k) {
      const double a = (*this)(r, k);
      if (a == 0.0) continue;
      for (std::size_t c = 0; c < dim_; ++c) out(r, c) += a * rhs(k, c);
    }
  return out;
}

Vec Mat::operator*(std::span<const double> x) const {
  if (x.size() != dim_) throw DimensionMismatch(dim_, x.size());
  Vec out(dim_, 0.0);
  for (std::size_t r = 0; r < dim_; ++r) out[r] = dot(row(r), x);
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const Mat& a, const Mat& b) {
  if (a.dim() != b.dim()) throw DimensionMismatch(a.dim(), b.dim());
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

bool all_finite(std::span<const double> a) {
  for (double x : a)
    if (!std::isfinite(x)) return false;
  return true;
}

void householder_apply_inplace(std::span<const double> v, std::span<double> x) {
  const double vv = dot(v, v);
  const double scale = 2.0 * dot(v, x) / vv;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] -= scale * v[i];
}

Vec householder_apply(std::span<const double> v, std::span<const double> x) {
  if (v.size() != x.size()) throw DimensionMismatch(v.size(), x.size());
  if (norm(v) < kReflectionFloor) throw ZeroReflectionVector();
  Vec out(x.begin(), x.end());
  householder_apply_inplace(v, out);
  return out;
}

Mat householder_matrix(std::span<const double> v) {
  if (norm(v) < kReflectionFloor) throw ZeroReflectionVector();
  const std::size_t d = v.size();
  const double vv = dot(v, v);
  Mat h = Mat::identity(d);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) h(r, c) -= 2.0 * v[r] * v[c] / vv;
  return h;
}

Whitening cholesky_whitening(const Mat& cov) {
  const std::size_t d = cov.dim();
  Mat sym(d);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) sym(r, c) = 0.5 * (cov(r, c) + cov(c, r));

  // cov = R R^T with R lower triangular; R is the de-whitening factor.
  Mat chol(d);
  for (std::size_t j = 0; j < d; ++j) {
    double diag = sym(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= chol(j, k) * chol(j, k);
    if (!(diag > 0.0)) throw NotPositiveDefinite(j);
    chol(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < d; ++i) {
      double s = sym(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= chol(i, k) * chol(j, k);
      chol(i, j) = s / chol(j, j);
    }
  }

  // Forward substitution column by column: inv = R^{-1}, also lower triangular.
  Mat inv(d);
  for (std::size_t c = 0; c < d; ++c) {
    inv(c, c) = 1.0 / chol(c, c);
    for (std::size_t r = c + 1; r < d; ++r) {
      double s = 0.0;
      for (std::size_t k = c; k < r; ++k) s += chol(r, k) * inv(k, c);
      inv(r, c) = -s / chol(r, r);
    }
  }
  return {std::move(inv), std::move(chol)};
}

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw ZeroVector();
  const double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

}  // namespace ohnn
