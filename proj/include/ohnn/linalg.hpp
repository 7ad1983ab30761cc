#pragma once

// Dense primitives used by the anonymizer, losses and metrics. Everything is
// double precision; vectors are plain std::vector<double> and functions take
// spans so callers can pass slices of larger buffers.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace ohnn {

using Vec = std::vector<double>;

// Reflection vectors shorter than this are rejected.
inline constexpr double kReflectionFloor = 1e-8;

// Square row-major matrix.
class Mat {
 public:
  Mat() = default;
  explicit Mat(std::size_t dim, double fill = 0.0) : dim_(dim), data_(dim * dim, fill) {}

  static Mat identity(std::size_t dim);
  static Mat diagonal(std::span<const double> diag);

  std::size_t dim() const { return dim_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * dim_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * dim_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * dim_, dim_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * dim_, dim_}; }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  Mat transposed() const;
  Mat operator*(const Mat& rhs) const;
  Vec operator*(std::span<const double> x) const;

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
// Largest absolute entry of a - b.
double max_abs_diff(const Mat& a, const Mat& b);
bool all_finite(std::span<const double> a);

// x - 2 <v,x>/<v,v> v, without forming the matrix.
Vec householder_apply(std::span<const double> v, std::span<const double> x);
// In-place variant used on hot paths. Caller guarantees |v| >= floor.
void householder_apply_inplace(std::span<const double> v, std::span<double> x);
// I - 2 v v^T / v^T v.
Mat householder_matrix(std::span<const double> v);

// Returns (L, L^{-1}) with L^{-1} L^{-T} = cov, so L (x - mu) is white.
// cov is symmetrized before factorization.
struct Whitening {
  Mat whiten;    // L
  Mat dewhiten;  // L^{-1}
};
Whitening cholesky_whitening(const Mat& cov);

double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace ohnn
