#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "resflow/error.hpp"
#include "resflow/linalg.hpp"

using namespace resflow;

TEST_CASE("empirical_mean") {
  CHECK(empirical_mean(Matrix(2, 2, {1, 3, 3, 1})) == Vector{2, 2});
  CHECK(empirical_mean(Matrix(1, 2, {5, -2})) == Vector{5, -2});

  const Matrix x = sample_standard_normal(1000, 3, 11);
  for (double m : empirical_mean(x)) CHECK(std::fabs(m) < 0.15);

  CHECK_THROWS_AS(empirical_mean(Matrix(0, 3)), Error);
}

TEST_CASE("empirical_cov") {
  const Matrix one(1, 2, {0, 0});
  CHECK(empirical_cov(one, empirical_mean(one)) == Matrix(2, 2));

  const Matrix two(2, 2, {1, 0, -1, 0});
  CHECK(empirical_cov(two, empirical_mean(two)) == Matrix(2, 2, {1, 0, 0, 0}));

  SUBCASE("agrees with a two-pass reference") {
    Matrix x = sample_standard_normal(300, 5, 3);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < 5; ++j) x(i, j) = x(i, j) * (j + 1) + 0.3 * x(i, 0) + j;
    const Matrix c = empirical_cov(x, empirical_mean(x));
    const Matrix ref = oracle::covariance(x);
    for (std::size_t i = 0; i < c.data().size(); ++i)
      CHECK(c.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
  }

  CHECK_THROWS_AS(empirical_cov(two, Vector{0, 0, 0}), Error);
}

TEST_CASE("sym_eig small cases") {
  const auto e = sym_eig(Matrix::identity(3));
  CHECK(e.eigenvalues == Vector{1, 1, 1});

  const auto d = sym_eig(Matrix(2, 2, {1, 0, 0, 4}));
  CHECK(d.eigenvalues[0] == doctest::Approx(4));
  CHECK(d.eigenvalues[1] == doctest::Approx(1));
  CHECK(std::fabs(d.eigenvectors(1, 0)) == doctest::Approx(1));
  CHECK(std::fabs(d.eigenvectors(0, 1)) == doctest::Approx(1));
  CHECK(d.eigenvectors(0, 0) == doctest::Approx(0));

  CHECK_THROWS_AS(sym_eig(Matrix(2, 3)), Error);
}

TEST_CASE("sym_eig matches inertia bisection and is orthogonal") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Matrix g = sample_standard_normal(8, 8, seed);
    Matrix m(8, 8);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) m(i, j) = g(i, j) + g(j, i);
    const auto eig = sym_eig(m);
    const Vector ref = oracle::eigenvalues_bisection(m);
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::fabs(eig.eigenvalues[i] - ref[i]) < 1e-8);

    const Matrix qtq = oracle::mul(oracle::transpose(eig.eigenvectors), eig.eigenvectors);
    double worst = 0.0;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j) worst = std::max(worst, std::fabs(qtq(i, j) - (i == j)));
    CHECK(worst <= 1e-10);

    // M q = lambda q
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t r = 0; r < 8; ++r) {
        double mq = 0.0;
        for (std::size_t k = 0; k < 8; ++k) mq += m(r, k) * eig.eigenvectors(k, c);
        CHECK(std::fabs(mq - eig.eigenvalues[c] * eig.eigenvectors(r, c)) < 1e-9);
      }
  }
}

TEST_CASE("sym_eig symmetrizes a slightly asymmetric input") {
  Matrix m(2, 2, {2, 1, 1 + 1e-6, 2});
  const auto e = sym_eig(m);
  CHECK(e.eigenvalues[0] == doctest::Approx(3 + 0.5e-6).epsilon(1e-12));
  CHECK(e.eigenvalues[1] == doctest::Approx(1 - 0.5e-6).epsilon(1e-12));
}

TEST_CASE("sample_standard_normal") {
  CHECK(sample_standard_normal(4, 3, 9) == sample_standard_normal(4, 3, 9));
  CHECK_FALSE(sample_standard_normal(4, 3, 9) == sample_standard_normal(4, 3, 10));

  const Matrix x = sample_standard_normal(100000, 1, 42);
  double m = 0.0, v = 0.0;
  for (double a : x.data()) m += a;
  m /= 1e5;
  for (double a : x.data()) v += (a - m) * (a - m);
  v /= 1e5;
  CHECK(std::fabs(m) < 0.02);
  CHECK(v >= 0.97);
  CHECK(v <= 1.03);

  const Matrix one = sample_standard_normal(1, 3, 1);
  for (double a : one.data()) CHECK(std::isfinite(a));
}

TEST_CASE("rng draws") {
  Rng r(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7);
  }
  CHECK_THROWS_AS(r.below(0), Error);
  CHECK(mix_seed(1, 2) == mix_seed(1, 2));
  CHECK(mix_seed(1, 2) != mix_seed(2, 1));
}

TEST_CASE("squared_norm is order independent") {
  const Vector a{1e16, 1.0, -1e16, 3.5, 1e-8};
  const Vector b{1e-8, 3.5, -1e16, 1.0, 1e16};
  CHECK(squared_norm(a) == squared_norm(b));
  CHECK(squared_norm(Vector{3, 4}) == 25.0);
}

TEST_CASE("matrix helpers") {
  const Matrix a(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(matvec(a, Vector{1, 1, 1}) == Vector{6, 15});
  CHECK(matvec_t(a, Vector{1, 1}) == Vector{5, 7, 9});
  CHECK(matmul(a, a.transposed()) == Matrix(2, 2, {14, 32, 32, 77}));
  CHECK_THROWS_AS(matmul(a, a), Error);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), Error);
}
