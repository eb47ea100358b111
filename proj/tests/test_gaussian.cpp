#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "resflow/error.hpp"
#include "resflow/gaussian.hpp"

using namespace resflow;

namespace {

constexpr double kLn2Pi = 1.8378770664093454835606594728112;

GaussianModel model_from(Vector mu, Matrix sigma) { return gaussian_from_moments(std::move(mu), std::move(sigma)); }

}  // namespace

TEST_CASE("fit_gaussian on two 1-D points") {
  const auto g = fit_gaussian(Matrix(2, 1, {1, 3}));
  CHECK(g.mu == Vector{2});
  CHECK(g.sigma == Matrix(1, 1, {1}));
  CHECK(g.rank == 1);
  CHECK(g.a_forward(0, 0) == doctest::Approx(1));
  CHECK(g.logdet_half == doctest::Approx(0));
}

TEST_CASE("fit_gaussian on a line drops the null direction") {
  Matrix x(5, 2);
  for (std::size_t i = 0; i < 5; ++i) x(i, 0) = x(i, 1) = static_cast<double>(i);
  const auto g = fit_gaussian(x);
  CHECK(g.rank == 1);
  CHECK(g.a_forward.rows() == 1);
  CHECK(g.a_forward.cols() == 2);
  CHECK(std::isfinite(gaussian_logprob(g, Vector{7, -3})));
  // x - mu = (-1, -3); its part along (1, -1) / sqrt(2) has length sqrt(2).
  CHECK(off_subspace_residual(g, Vector{1, -1}) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("fit_gaussian recovers a known covariance") {
  const Matrix a(3, 3, {1.0, 0.0, 0.0, 0.5, 2.0, 0.0, -0.3, 0.4, 0.7});
  const Vector b{1, -2, 0.5};
  const Matrix z = sample_standard_normal(500, 3, 17);
  Matrix x(500, 3);
  for (std::size_t i = 0; i < 500; ++i)
    for (std::size_t r = 0; r < 3; ++r) {
      x(i, r) = b[r];
      for (std::size_t c = 0; c < 3; ++c) x(i, r) += a(r, c) * z(i, c);
    }
  const auto g = fit_gaussian(x);
  const Matrix aat = oracle::mul(a, oracle::transpose(a));
  double diff = 0.0;
  for (std::size_t i = 0; i < 9; ++i) diff += std::pow(g.sigma.data()[i] - aat.data()[i], 2);
  CHECK(std::sqrt(diff) < 0.2);
}

TEST_CASE("fit_gaussian errors") {
  CHECK_THROWS_AS(fit_gaussian(Matrix(1, 2, {1, 2})), Error);
  CHECK_THROWS_AS(fit_gaussian(Matrix(3, 2, {1, 2, 1, 2, 1, 2})), Error);  // zero covariance
}

TEST_CASE("linear_forward") {
  const auto g = model_from({1, 2}, Matrix::identity(2));
  CHECK(linear_forward(g, Vector{1, 2}) == Vector{0, 0});
  CHECK(linear_forward(g, Vector{2, 2}) == Vector{1, 0});

  SUBCASE("round trip is the projection onto the retained subspace") {
    const Matrix basis = sample_standard_normal(4, 6, 23);  // rank 4 in d = 6
    Matrix x = oracle::mul(sample_standard_normal(200, 4, 5), basis);
    const auto gd = fit_gaussian(x);
    REQUIRE(gd.rank == 4);
    const Matrix probe = sample_standard_normal(10, 6, 8);
    for (std::size_t i = 0; i < 10; ++i) {
      const auto p = probe.row(i);
      const Vector back = linear_inverse(gd, linear_forward(gd, p));
      for (std::size_t r = 0; r < 6; ++r) {
        double proj = gd.mu[r];
        for (std::size_t c = 0; c < 4; ++c)
          for (std::size_t s = 0; s < 6; ++s)
            proj += gd.q_k(r, c) * gd.q_k(s, c) * (p[s] - gd.mu[s]);
        CHECK(std::fabs(back[r] - proj) < 1e-8);
      }
    }
  }
  CHECK_THROWS_AS(linear_forward(g, Vector{1}), Error);
  CHECK_THROWS_AS(linear_inverse(g, Vector{1, 2, 3}), Error);
}

TEST_CASE("gaussian_logprob closed forms") {
  CHECK(gaussian_logprob(model_from({0, 0}, Matrix::identity(2)), Vector{0, 0}) ==
        doctest::Approx(-kLn2Pi).epsilon(1e-14));
  CHECK(gaussian_logprob(model_from({3}, Matrix(1, 1, {4})), Vector{3}) ==
        doctest::Approx(-0.5 * kLn2Pi - 0.5 * std::log(4.0)).epsilon(1e-14));
}

TEST_CASE("gaussian density integrates to one") {
  const Matrix sigma(2, 2, {2.0, 0.6, 0.6, 0.5});
  const auto g = model_from({0.5, -1}, sigma);
  const double sx = std::sqrt(2.0), sy = std::sqrt(0.5);
  const int n = 400;
  const double hx = 16 * sx / n, hy = 16 * sy / n;
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Vector x{0.5 - 8 * sx + (i + 0.5) * hx, -1 - 8 * sy + (j + 0.5) * hy};
      total += std::exp(gaussian_logprob(g, x)) * hx * hy;
    }
  CHECK(std::fabs(total - 1.0) < 0.02);
}

TEST_CASE("mahalanobis_score") {
  const auto g = model_from({1, 1}, Matrix::identity(2));
  CHECK(mahalanobis_score(g, Vector{1, 1}) == 0.0);
  CHECK(mahalanobis_score(g, Vector{4, 5}) == doctest::Approx(-25));

  SUBCASE("degenerate model matches an explicit pseudo-inverse") {
    const Matrix b = sample_standard_normal(2, 5, 31);  // rows span the support
    const Matrix z = sample_standard_normal(300, 2, 32);
    Matrix x = oracle::mul(z, b);
    const auto gd = fit_gaussian(x);
    REQUIRE(gd.rank == 2);
    // Sigma = B^T S B with S = cov(z), so Sigma^+ = B^+ S^{-1} B^{+T}, B^+ = B^T (B B^T)^{-1}.
    const Matrix bp = oracle::mul(oracle::transpose(b), oracle::inverse(oracle::mul(b, oracle::transpose(b))));
    const Matrix pinv = oracle::mul(oracle::mul(bp, oracle::inverse(oracle::covariance(z))), oracle::transpose(bp));
    const Matrix probe = sample_standard_normal(20, 5, 33);
    for (std::size_t i = 0; i < 20; ++i) {
      Vector d(5);
      for (std::size_t r = 0; r < 5; ++r) d[r] = probe(i, r) - gd.mu[r];
      double q = 0.0;
      for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t c = 0; c < 5; ++c) q += d[r] * pinv(r, c) * d[c];
      CHECK(std::fabs(mahalanobis_score(gd, probe.row(i)) + q) < 1e-8 * std::max(1.0, q));
    }
  }
}

TEST_CASE("gda_logprob") {
  const GaussianModel a = model_from({0, 0}, Matrix::identity(2));
  GdaModel same{{a, a}};
  for (const Vector& x : {Vector{1, 2}, Vector{-3, 0.5}})
    CHECK(gda_logprob(same, x, 0) == gda_logprob(same, x, 1));

  GdaModel two{{model_from({0, 0}, Matrix(2, 2, {0.01, 0, 0, 0.01})), model_from({2, 0}, Matrix::identity(2))}};
  const Vector mid{1, 0};
  CHECK(gda_logprob(two, mid, 1) > gda_logprob(two, mid, 0));

  const GaussianModel i3 = model_from({1, 2, 3}, Matrix::identity(3));
  CHECK(gda_logprob(GdaModel{{i3}}, Vector{1, 2, 3}, 0) == doctest::Approx(-1.5 * kLn2Pi));
  CHECK_THROWS_AS(gda_logprob(GdaModel{{i3}}, Vector{1, 2, 3}, 1), Error);
}

TEST_CASE("fit_gda shrinks undersampled classes") {
  const Matrix few = sample_standard_normal(3, 5, 2);
  const auto gda = fit_gda({few, sample_standard_normal(50, 5, 3)});
  CHECK(gda.classes[0].rank == 5);
  CHECK(std::isfinite(gda_logprob(gda, Vector{1, 1, 1, 1, 1}, 0)));
  CHECK_THROWS_AS(fit_gda({}), Error);
}
