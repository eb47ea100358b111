#pragma once

// Maximum-likelihood Gaussian fit and the linear flow it induces.
//
// For data with empirical mean mu and covariance Sigma = Q D Q^T, the linear
// flow maps x to z = D^{-1/2} Q^T (x - mu) using only the k eigenpairs whose
// eigenvalue exceeds rank_tol * lambda_max. When Sigma is full rank this is
// the exact inverse of x = Q D^{1/2} z + mu; otherwise it is the dimension
// reducing map whose Gaussian matches the pseudo-inverse Mahalanobis form.

#include <cstddef>
#include <span>
#include <vector>

#include "resflow/linalg.hpp"

namespace resflow {

inline constexpr double kDefaultRankTol = 1e-10;

struct GaussianModel {
  Vector mu;
  Matrix sigma;
  std::size_t rank = 0;
  Matrix q_k;          // d x k, retained eigenvectors
  Vector d_k;          // k retained eigenvalues, descending
  Matrix a_forward;    // k x d, D^{-1/2} Q^T
  Matrix a_inverse;    // d x k, Q D^{1/2}
  double logdet_half = 0.0;  // sum of 0.5 * ln(d_k)

  std::size_t dim() const noexcept { return mu.size(); }
};

GaussianModel fit_gaussian(const Matrix& data, double rank_tol = kDefaultRankTol);

// Builds the model from an already computed mean/covariance pair.
GaussianModel gaussian_from_moments(Vector mu, Matrix sigma, double rank_tol = kDefaultRankTol);

Vector linear_forward(const GaussianModel& model, std::span<const double> x);
Vector linear_inverse(const GaussianModel& model, std::span<const double> z);

// Norm of the component of x - mu outside the retained subspace.
double off_subspace_residual(const GaussianModel& model, std::span<const double> x);

// log N(z; 0, I_k) for the reduced coordinates.
double standard_normal_logpdf(std::span<const double> z);

double gaussian_logprob(const GaussianModel& model, std::span<const double> x);

// -(x - mu)^T Sigma^+ (x - mu)
double mahalanobis_score(const GaussianModel& model, std::span<const double> x);

// Per-class Gaussian discriminant models (class c has its own covariance).
struct GdaModel {
  std::vector<GaussianModel> classes;
};

// Classes with fewer samples than dimensions get their covariance shrunk by
// 1e-6 * trace / d on the diagonal.
GdaModel fit_gda(const std::vector<Matrix>& per_class, double rank_tol = kDefaultRankTol);

double gda_logprob(const GdaModel& gda, std::span<const double> x, std::size_t cls);

}  // namespace resflow
