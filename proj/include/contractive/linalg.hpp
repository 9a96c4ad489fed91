#pragma once

#include "contractive/errors.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

namespace contractive {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Complex = std::complex<double>;

/// Determinant by LU with partial pivoting.
inline double determinant(const Matrix& m) {
  if (m.rows() == 0) return 1.0;
  return m.partialPivLu().determinant();
}

inline double log_abs_det(const Matrix& m) { return std::log(std::abs(determinant(m))); }

inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// Axis-aligned sampling region.
struct Box {
  Vector lo;
  Vector hi;

  static Box cube(Eigen::Index n, double lo, double hi) {
    return Box{Vector::Constant(n, lo), Vector::Constant(n, hi)};
  }

  Eigen::Index dim() const { return lo.size(); }

  bool valid() const {
    return lo.size() > 0 && lo.size() == hi.size() && (lo.array() <= hi.array()).all();
  }

  template <class Rng>
  Vector sample(Rng& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector x(lo.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = lo[i] + (hi[i] - lo[i]) * unit(rng);
    return x;
  }
};

/// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;

  explicit GaussLegendre(int n) : nodes(n), weights(n) {
    if (n < 1) throw PreconditionError("Gauss-Legendre rule needs at least one node");
    if (n == 1) {
      nodes[0] = 0.0;
      weights[0] = 2.0;
      return;
    }
    // P_n(x) and P_n'(x) by the three-term recurrence
    auto legendre = [n](double x) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      return std::pair{p1, n * (x * p1 - p0) / (x * x - 1.0)};
    };
    for (int i = 0; i < (n + 1) / 2; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      for (int iter = 0; iter < 100; ++iter) {
        const auto [p, dp] = legendre(x);
        const double dx = p / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      const double dp = legendre(x).second;
      const double w = 2.0 / ((1.0 - x * x) * dp * dp);
      nodes[i] = -x;
      nodes[n - 1 - i] = x;
      weights[i] = w;
      weights[n - 1 - i] = w;
    }
  }

  /// Integral of g over [a, b]; a > b gives the signed value.
  template <class G>
  double integrate(G&& g, double a, double b) const {
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    double sum = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) sum += weights[k] * g(mid + half * nodes[k]);
    return half * sum;
  }
};

/// Eigenvalues of a real 2x2 matrix from its trace and discriminant.
inline std::pair<Complex, Complex> eigenvalues_2x2(const Matrix& m) {
  const double half_tr = 0.5 * (m(0, 0) + m(1, 1));
  const double half_diff = 0.5 * (m(0, 0) - m(1, 1));
  const double disc = half_diff * half_diff + m(0, 1) * m(1, 0);
  if (disc >= 0.0) {
    const double r = std::sqrt(disc);
    return {Complex(half_tr - r, 0.0), Complex(half_tr + r, 0.0)};
  }
  const double r = std::sqrt(-disc);
  return {Complex(half_tr, -r), Complex(half_tr, r)};
}

inline std::vector<Complex> eigenvalues(const Matrix& m) {
  if (m.rows() == 2) {
    auto [l0, l1] = eigenvalues_2x2(m);
    return {l0, l1};
  }
  Eigen::EigenSolver<Matrix> solver(m, false);
  if (solver.info() != Eigen::Success) throw Error("eigenvalue solver failed");
  std::vector<Complex> out(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[i] = solver.eigenvalues()[i];
  return out;
}

/// exp(t B) for a real 2x2 B in closed form; requires real eigenvalues.
/// Returns false when the eigenvalues are complex.
inline bool expm_2x2_real(const Matrix& b, double t, Matrix& out) {
  const double half_tr = 0.5 * (b(0, 0) + b(1, 1));
  const double half_diff = 0.5 * (b(0, 0) - b(1, 1));
  const double disc = half_diff * half_diff + b(0, 1) * b(1, 0);
  if (disc < 0.0) return false;
  const double mu = std::sqrt(disc);
  const double x = t * mu;
  const double ch = std::cosh(x);
  // sinh(t mu) / mu, continuous at mu = 0
  const double sh = (std::abs(x) < 1e-8) ? t * (1.0 + x * x / 6.0) : std::sinh(x) / mu;
  Matrix shifted = b - half_tr * Matrix::Identity(2, 2);
  out = std::exp(t * half_tr) * (ch * Matrix::Identity(2, 2) + sh * shifted);
  return true;
}

/// General small-matrix exponential (Pade scaling and squaring).
inline Matrix expm(const Matrix& m) { return m.exp(); }

/// exp(M) for symmetric M via its eigendecomposition.
inline Matrix expm_symmetric(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(m);
  const Matrix& v = solver.eigenvectors();
  return v * solver.eigenvalues().array().exp().matrix().asDiagonal() * v.transpose();
}

inline double operator_norm2(const Matrix& m) {
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

}  // namespace contractive
