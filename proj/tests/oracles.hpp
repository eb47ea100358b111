#pragma once

// Reference computations for the tests. Each one is written without calling
// the library routine it checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "resflow/linalg.hpp"

namespace oracle {

using resflow::Matrix;
using resflow::Vector;

// ln|det A| by Gaussian elimination with partial pivoting.
inline double log_abs_det(Matrix a) {
  const std::size_t n = a.rows();
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(a(r, c)) > std::fabs(a(p, c))) p = r;
    if (a(p, c) == 0.0) return -INFINITY;
    if (p != c)
      for (std::size_t j = 0; j < n; ++j) std::swap(a(p, j), a(c, j));
    acc += std::log(std::fabs(a(c, c)));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a(r, c) / a(c, c);
      for (std::size_t j = c; j < n; ++j) a(r, j) -= f * a(c, j);
    }
  }
  return acc;
}

// Inverse by Gauss-Jordan elimination.
inline Matrix inverse(Matrix a) {
  const std::size_t n = a.rows();
  Matrix inv = Matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) inv(i, i) = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::fabs(a(r, c)) > std::fabs(a(p, c))) p = r;
    for (std::size_t j = 0; j < n; ++j) {
      std::swap(a(p, j), a(c, j));
      std::swap(inv(p, j), inv(c, j));
    }
    const double d = a(c, c);
    for (std::size_t j = 0; j < n; ++j) {
      a(c, j) /= d;
      inv(c, j) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a(r, c);
      for (std::size_t j = 0; j < n; ++j) {
        a(r, j) -= f * a(c, j);
        inv(r, j) -= f * inv(c, j);
      }
    }
  }
  return inv;
}

inline Matrix mul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += a(i, k) * b(k, j);
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// Central-difference Jacobian of f: R^n -> R^m at x.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x,
                          double h = 1e-5) {
  const std::size_t n = x.size();
  const std::size_t m = f(x).size();
  Matrix j(m, n);
  for (std::size_t c = 0; c < n; ++c) {
    Vector xp = x, xm = x;
    xp[c] += h;
    xm[c] -= h;
    const Vector fp = f(xp), fm = f(xm);
    for (std::size_t r = 0; r < m; ++r) j(r, c) = (fp[r] - fm[r]) / (2.0 * h);
  }
  return j;
}

// Two-pass mean and biased covariance.
inline Vector mean(const Matrix& x) {
  Vector m(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) m[j] += x(i, j);
  for (double& v : m) v /= static_cast<double>(x.rows());
  return m;
}

inline Matrix covariance(const Matrix& x) {
  const Vector m = mean(x);
  Matrix c(x.cols(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t a = 0; a < x.cols(); ++a)
      for (std::size_t b = 0; b < x.cols(); ++b) c(a, b) += (x(i, a) - m[a]) * (x(i, b) - m[b]);
  for (double& v : c.data()) v /= static_cast<double>(x.rows());
  return c;
}

// Number of eigenvalues of symmetric M strictly below t, from the inertia of
// the LDL^T factorization of M - tI (Sylvester's law).
inline std::size_t count_below(const Matrix& m, double t) {
  const std::size_t n = m.rows();
  Matrix a = m;
  for (std::size_t i = 0; i < n; ++i) a(i, i) -= t;
  std::size_t negative = 0;
  for (std::size_t c = 0; c < n; ++c) {
    double d = a(c, c);
    if (d == 0.0) d = -1e-300;
    if (d < 0.0) ++negative;
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a(r, c) / d;
      for (std::size_t j = c + 1; j < n; ++j) a(r, j) -= f * a(c, j);
    }
  }
  return negative;
}

// Eigenvalues (descending) by bisection on the inertia count.
inline Vector eigenvalues_bisection(const Matrix& m) {
  const std::size_t n = m.rows();
  double bound = 0.0;  // Gershgorin
  for (std::size_t i = 0; i < n; ++i) {
    double r = 0.0;
    for (std::size_t j = 0; j < n; ++j) r += std::fabs(m(i, j));
    bound = std::max(bound, r);
  }
  Vector out;
  for (std::size_t k = 0; k < n; ++k) {
    // k-th smallest: smallest t with count_below(t) > k.
    double lo = -bound - 1.0, hi = bound + 1.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::fabs(lo)); ++it) {
      const double mid = 0.5 * (lo + hi);
      (count_below(m, mid) > k ? hi : lo) = mid;
    }
    out.push_back(0.5 * (lo + hi));
  }
  std::sort(out.begin(), out.end(), std::greater<>());
  return out;
}

// ---- metrics by exhaustive enumeration ------------------------------------

inline double auroc_pairs(std::span<const double> in, std::span<const double> out) {
  std::uint64_t twice = 0;
  for (double a : in)
    for (double b : out) twice += a > b ? 2 : (a == b ? 1 : 0);
  return static_cast<double>(twice) /
         (2.0 * static_cast<double>(in.size()) * static_cast<double>(out.size()));
}

inline std::vector<double> thresholds_desc(std::span<const double> a, std::span<const double> b) {
  std::vector<double> t(a.begin(), a.end());
  t.insert(t.end(), b.begin(), b.end());
  std::sort(t.begin(), t.end(), std::greater<>());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

inline std::uint64_t count_ge(std::span<const double> v, double t) {
  return static_cast<std::uint64_t>(std::count_if(v.begin(), v.end(), [t](double s) { return s >= t; }));
}

inline double tnr_at_tpr(std::span<const double> in, std::span<const double> out, double target) {
  // Largest threshold that keeps the in-distribution acceptance at the target.
  for (double t : thresholds_desc(in, out)) {
    const std::uint64_t tp = count_ge(in, t);
    if (static_cast<double>(tp) / static_cast<double>(in.size()) >= target - 1e-12) {
      const std::uint64_t below = out.size() - count_ge(out, t);
      return static_cast<double>(below) / static_cast<double>(out.size());
    }
  }
  return 0.0;
}

inline double average_precision(std::span<const double> pos, std::span<const double> neg) {
  double ap = 0.0;
  for (double t : thresholds_desc(pos, neg)) {
    const auto at = static_cast<std::uint64_t>(std::count(pos.begin(), pos.end(), t));
    if (at == 0) continue;
    const std::uint64_t tp = count_ge(pos, t), fp = count_ge(neg, t);
    ap += static_cast<double>(at) / static_cast<double>(pos.size()) *
          (static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  return ap;
}

inline double detection_accuracy(std::span<const double> in, std::span<const double> out) {
  double best = 0.5;
  for (double t : thresholds_desc(in, out)) {
    const std::uint64_t tp = count_ge(in, t), fp = count_ge(out, t);
    best = std::max(best, 0.5 * (static_cast<double>(tp) / static_cast<double>(in.size()) +
                                 static_cast<double>(out.size() - fp) /
                                     static_cast<double>(out.size())));
  }
  return best;
}

}  // namespace oracle
