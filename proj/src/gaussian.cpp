#include "resflow/gaussian.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "resflow/error.hpp"

namespace resflow {

GaussianModel gaussian_from_moments(Vector mu, Matrix sigma, double rank_tol) {
  require(sigma.rows() == mu.size() && sigma.cols() == mu.size(), Errc::dim_mismatch,
          "covariance shape does not match mean");
  require(rank_tol >= 0.0, Errc::invalid_argument, "rank_tol must be non-negative");
  const EigDecomposition eig = sym_eig(sigma);
  const std::size_t d = mu.size();
  const double lambda_max = eig.eigenvalues.empty() ? 0.0 : eig.eigenvalues.front();

  std::size_t k = 0;
  if (lambda_max > 0.0) {
    while (k < d && eig.eigenvalues[k] > rank_tol * lambda_max && eig.eigenvalues[k] > 0.0) ++k;
  }
  require(k > 0, Errc::numeric, "zero-rank covariance");

  GaussianModel m;
  m.mu = std::move(mu);
  m.sigma = std::move(sigma);
  m.rank = k;
  m.q_k = Matrix(d, k);
  m.d_k.resize(k);
  m.a_forward = Matrix(k, d);
  m.a_inverse = Matrix(d, k);
  m.logdet_half = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double lambda = eig.eigenvalues[j];
    const double root = std::sqrt(lambda);
    m.d_k[j] = lambda;
    m.logdet_half += 0.5 * std::log(lambda);
    for (std::size_t i = 0; i < d; ++i) {
      const double q = eig.eigenvectors(i, j);
      m.q_k(i, j) = q;
      m.a_forward(j, i) = q / root;
      m.a_inverse(i, j) = q * root;
    }
  }
  return m;
}

GaussianModel fit_gaussian(const Matrix& data, double rank_tol) {
  require(data.rows() >= 2, Errc::invalid_argument,
          "fit_gaussian needs at least 2 samples, got " + std::to_string(data.rows()));
  Vector mu = empirical_mean(data);
  Matrix sigma = empirical_cov(data, mu);
  return gaussian_from_moments(std::move(mu), std::move(sigma), rank_tol);
}

Vector linear_forward(const GaussianModel& model, std::span<const double> x) {
  require(x.size() == model.dim(), Errc::dim_mismatch,
          "linear_forward: expected dimension " + std::to_string(model.dim()) + ", got " +
              std::to_string(x.size()));
  Vector centered(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) centered[i] = x[i] - model.mu[i];
  return matvec(model.a_forward, centered);
}

Vector linear_inverse(const GaussianModel& model, std::span<const double> z) {
  require(z.size() == model.rank, Errc::dim_mismatch,
          "linear_inverse: expected dimension " + std::to_string(model.rank) + ", got " +
              std::to_string(z.size()));
  Vector x = matvec(model.a_inverse, z);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += model.mu[i];
  return x;
}

double off_subspace_residual(const GaussianModel& model, std::span<const double> x) {
  const Vector back = linear_inverse(model, linear_forward(model, x));
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - back[i]) * (x[i] - back[i]);
  return std::sqrt(s);
}

double standard_normal_logpdf(std::span<const double> z) {
  const double k = static_cast<double>(z.size());
  return -0.5 * k * std::log(2.0 * std::numbers::pi) - 0.5 * squared_norm(z);
}

double gaussian_logprob(const GaussianModel& model, std::span<const double> x) {
  const Vector z = linear_forward(model, x);
  return standard_normal_logpdf(z) - model.logdet_half;
}

double mahalanobis_score(const GaussianModel& model, std::span<const double> x) {
  return -squared_norm(linear_forward(model, x));
}

GdaModel fit_gda(const std::vector<Matrix>& per_class, double rank_tol) {
  require(!per_class.empty(), Errc::invalid_argument, "fit_gda: no classes");
  GdaModel gda;
  gda.classes.reserve(per_class.size());
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const Matrix& data = per_class[c];
    require(data.rows() >= 2, Errc::invalid_argument,
            "fit_gda: class " + std::to_string(c) + " has fewer than 2 samples");
    Vector mu = empirical_mean(data);
    Matrix sigma = empirical_cov(data, mu);
    const std::size_t d = data.cols();
    if (data.rows() < d) {
      double trace = 0.0;
      for (std::size_t i = 0; i < d; ++i) trace += sigma(i, i);
      const double shrink = 1e-6 * trace / static_cast<double>(d);
      for (std::size_t i = 0; i < d; ++i) sigma(i, i) += shrink;
    }
    gda.classes.push_back(gaussian_from_moments(std::move(mu), std::move(sigma), rank_tol));
  }
  return gda;
}

double gda_logprob(const GdaModel& gda, std::span<const double> x, std::size_t cls) {
  require(cls < gda.classes.size(), Errc::invalid_argument,
          "unknown class id " + std::to_string(cls));
  return gaussian_logprob(gda.classes[cls], x);
}

}  // namespace resflow
