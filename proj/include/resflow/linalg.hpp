#pragma once

// Dense 64-bit linear algebra used throughout the library: a row-major
// matrix, moment estimators, the cyclic Jacobi symmetric eigensolver and a
// seeded Gaussian sampler.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace resflow {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
// y = M x
Vector matvec(const Matrix& m, std::span<const double> x);
// y = M^T x
Vector matvec_t(const Matrix& m, std::span<const double> x);

double frobenius_norm(const Matrix& m);
double dot(std::span<const double> a, std::span<const double> b);

// Sum of squares that does not depend on the order of the entries: the
// squares are sorted before accumulation. Two permutations of the same vector
// therefore produce bit-identical norms.
double squared_norm(std::span<const double> v);

struct EigDecomposition {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // column j pairs with eigenvalues[j]
  std::size_t source_dim = 0;
};

Vector empirical_mean(const Matrix& data);
// Biased (1/N) covariance.
Matrix empirical_cov(const Matrix& data, std::span<const double> mean);

// Cyclic Jacobi rotations. Input is symmetrized if it is not symmetric to
// 1e-9 relative.
EigDecomposition sym_eig(const Matrix& m);

// mt19937_64 with explicitly defined uniform, normal and integer draws so
// results do not depend on the standard library's distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Box-Muller; the second variate of each pair is cached.
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

// Deterministic seed derivation (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

Matrix sample_standard_normal(std::size_t n, std::size_t d, std::uint64_t seed);

}  // namespace resflow
