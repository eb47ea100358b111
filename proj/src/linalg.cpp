#include "resflow/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "resflow/error.hpp"

namespace resflow {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, Errc::dim_mismatch,
          "matrix data length " + std::to_string(data_.size()) + " != " +
              std::to_string(rows_) + "x" + std::to_string(cols_));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), Errc::dim_mismatch, "matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Vector matvec(const Matrix& m, std::span<const double> x) {
  require(m.cols() == x.size(), Errc::dim_mismatch, "matvec: dimension mismatch");
  Vector y(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
  return y;
}

Vector matvec_t(const Matrix& m, std::span<const double> x) {
  require(m.rows() == x.size(), Errc::dim_mismatch, "matvec_t: dimension mismatch");
  Vector y(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) y[c] += row[c] * x[r];
  }
  return y;
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> v) {
  std::vector<double> sq(v.size());
  std::transform(v.begin(), v.end(), sq.begin(), [](double x) { return x * x; });
  std::sort(sq.begin(), sq.end());
  return std::accumulate(sq.begin(), sq.end(), 0.0);
}

Vector empirical_mean(const Matrix& data) {
  require(data.rows() >= 1, Errc::invalid_argument, "no samples");
  Vector mean(data.cols(), 0.0);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    auto row = data.row(i);
    for (std::size_t j = 0; j < data.cols(); ++j) mean[j] += row[j];
  }
  const double inv_n = 1.0 / static_cast<double>(data.rows());
  for (double& m : mean) m *= inv_n;
  return mean;
}

Matrix empirical_cov(const Matrix& data, std::span<const double> mean) {
  require(data.rows() >= 1, Errc::invalid_argument, "no samples");
  require(mean.size() == data.cols(), Errc::dim_mismatch,
          "empirical_cov: mean has " + std::to_string(mean.size()) + " entries, data has " +
              std::to_string(data.cols()) + " columns");
  const std::size_t d = data.cols();
  Matrix cov(d, d);
  Vector centered(d);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    auto row = data.row(i);
    for (std::size_t j = 0; j < d; ++j) centered[j] = row[j] - mean[j];
    for (std::size_t a = 0; a < d; ++a) {
      const double ca = centered[a];
      auto crow = cov.row(a);
      for (std::size_t b = a; b < d; ++b) crow[b] += ca * centered[b];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(data.rows());
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) *= inv_n;
      cov(b, a) = cov(a, b);
    }
  }
  return cov;
}

EigDecomposition sym_eig(const Matrix& m) {
  require(m.rows() == m.cols(), Errc::invalid_argument,
          "sym_eig: matrix is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
              ", not square");
  const std::size_t n = m.rows();
  Matrix a = m;
  const double scale = std::max(frobenius_norm(m), 1e-300);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > 1e-9 * scale) {
        const double avg = 0.5 * (a(i, j) + a(j, i));
        a(i, j) = a(j, i) = avg;
      }
    }
  }
  Matrix v = Matrix::identity(n);

  auto off_diag = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
    return std::sqrt(2.0 * s);
  };

  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    if (off_diag() <= 1e-15 * scale) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double app = a(p, p);
        const double aqq = a(q, q);
        // Skip rotations that would not change the diagonal in double precision.
        if (sweep > 3 && std::abs(apq) < 1e-18 * (std::abs(app) + std::abs(aqq))) {
          a(p, q) = a(q, p) = 0.0;
          continue;
        }
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

  EigDecomposition out;
  out.source_dim = n;
  out.eigenvalues.resize(n);
  out.eigenvectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.eigenvalues[j] = a(order[j], order[j]);
    for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, j) = v(k, order[j]);
  }
  return out;
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double phi = 2.0 * std::numbers::pi * u2;
  cached_ = r * std::sin(phi);
  has_cached_ = true;
  return r * std::cos(phi);
}

std::uint64_t Rng::below(std::uint64_t n) {
  require(n > 0, Errc::invalid_argument, "Rng::below: empty range");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Matrix sample_standard_normal(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix out(n, d);
  for (double& v : out.data()) v = rng.normal();
  return out;
}

}  // namespace resflow
