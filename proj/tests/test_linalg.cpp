#include "contractive/linalg.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

using namespace contractive;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("determinant agrees with the 2x2 and 3x3 cofactor formulas", "[linalg]") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (int k = 0; k < 200; ++k) {
    Matrix a(2, 2);
    a << normal(rng), normal(rng), normal(rng), normal(rng);
    CHECK_THAT(determinant(a), WithinAbs(a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0), 1e-14));

    Matrix b(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) b(i, j) = normal(rng);
    const double cof = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1)) -
                       b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0)) +
                       b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
    CHECK_THAT(determinant(b), WithinAbs(cof, 1e-12));
  }
}

TEST_CASE("Gauss-Legendre is exact for polynomials of degree 2n-1", "[linalg][quadrature]") {
  for (int n : {1, 2, 3, 5, 8, 16, 32}) {
    const GaussLegendre gl(n);
    const int deg = 2 * n - 1;
    // int_{-0.5}^{2} x^deg dx
    const double exact = (std::pow(2.0, deg + 1) - std::pow(-0.5, deg + 1)) / (deg + 1);
    const double got = gl.integrate([deg](double x) { return std::pow(x, deg); }, -0.5, 2.0);
    CHECK_THAT(got, WithinRel(exact, 1e-12));
  }
}

TEST_CASE("Gauss-Legendre integral is signed", "[linalg][quadrature]") {
  const GaussLegendre gl(8);
  const double fwd = gl.integrate([](double x) { return std::exp(x); }, 0.0, 1.0);
  const double back = gl.integrate([](double x) { return std::exp(x); }, 1.0, 0.0);
  CHECK_THAT(fwd, WithinRel(std::exp(1.0) - 1.0, 1e-14));
  CHECK_THAT(back, WithinAbs(-fwd, 1e-15));
  CHECK(gl.integrate([](double) { return 1.0; }, 0.3, 0.3) == 0.0);
}

TEST_CASE("closed-form 2x2 exponential matches Pade exponential", "[linalg][expm]") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  int real_cases = 0;
  for (int k = 0; k < 200; ++k) {
    Matrix b(2, 2);
    b << normal(rng), normal(rng), normal(rng), normal(rng);
    const double t = 0.7;
    Matrix out;
    const bool real = expm_2x2_real(b, t, out);
    const double disc = std::pow(b.trace(), 2) - 4.0 * b.determinant();
    if (disc < 0.0) {
      CHECK_FALSE(real);
      continue;
    }
    if (disc < 1e-6) continue;
    REQUIRE(real);
    ++real_cases;
    const Matrix ref = expm(t * b);
    CHECK((out - ref).norm() <= 1e-12 * (1.0 + ref.norm()));
  }
  CHECK(real_cases > 50);
}

TEST_CASE("expm of a rotation generator is a rotation", "[linalg][expm]") {
  Matrix j(2, 2);
  j << 0.0, -1.0, 1.0, 0.0;
  const Matrix r = expm(0.3 * j);
  CHECK_THAT(r(0, 0), WithinAbs(std::cos(0.3), 1e-15));
  CHECK_THAT(r(1, 0), WithinAbs(std::sin(0.3), 1e-15));
  CHECK_THAT(determinant(r), WithinAbs(1.0, 1e-15));
}

TEST_CASE("expm_symmetric agrees with the general exponential", "[linalg][expm]") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> normal;
  for (int n = 1; n <= 5; ++n) {
    Matrix a(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = normal(rng);
    const Matrix s = a + a.transpose();
    const Matrix ref = expm(s);
    CHECK((expm_symmetric(s) - ref).norm() <= 1e-12 * ref.norm());
    // det exp(S) = exp(tr S)
    CHECK_THAT(determinant(expm_symmetric(s)), WithinRel(std::exp(s.trace()), 1e-12));
  }
}

TEST_CASE("eigenvalues of small matrices", "[linalg]") {
  Matrix rot(2, 2);
  rot << 0.0, 2.0, -2.0, 0.0;
  const auto [l1, l2] = eigenvalues_2x2(rot);
  CHECK_THAT(std::abs(l1.imag()), WithinAbs(2.0, 1e-15));
  CHECK_THAT(l1.real(), WithinAbs(0.0, 1e-15));
  CHECK_THAT((l1 + l2).real(), WithinAbs(0.0, 1e-15));

  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 1.0, -2.0, 5.0;
  auto ev = eigenvalues(d);
  REQUIRE(ev.size() == 3);
  double sum = 0.0;
  for (const auto& l : ev) sum += l.real();
  CHECK_THAT(sum, WithinAbs(4.0, 1e-14));
}

TEST_CASE("operator 2-norm", "[linalg]") {
  Matrix d = Matrix::Zero(3, 3);
  d.diagonal() << 1.0, -7.0, 2.0;
  CHECK_THAT(operator_norm2(d), WithinRel(7.0, 1e-14));
  Matrix n(2, 2);
  n << 0.0, 3.0, 0.0, 0.0;
  CHECK_THAT(operator_norm2(n), WithinRel(3.0, 1e-14));
}

TEST_CASE("Box sampling stays inside the box", "[linalg]") {
  Box box{Vector(2), Vector(2)};
  box.lo << -1.0, 10.0;
  box.hi << 1.0, 10.5;
  REQUIRE(box.valid());
  std::mt19937_64 rng(1);
  for (int k = 0; k < 1000; ++k) {
    const Vector x = box.sample(rng);
    CHECK(((x.array() >= box.lo.array()) && (x.array() <= box.hi.array())).all());
  }
  Box bad{Vector::Constant(1, 1.0), Vector::Constant(1, 0.0)};
  CHECK_FALSE(bad.valid());
}
