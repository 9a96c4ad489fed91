#pragma once

#include "contractive/errors.hpp"
#include "contractive/linalg.hpp"
#include "contractive/steppers.hpp"
#include "contractive/system.hpp"
#include "contractive/tableau.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace contractive {

/// R(z) = 1 + z b^T (I - z a)^{-1} 1.
inline Complex stability_function(const ButcherTableau& tableau, Complex z) {
  using CMatrix = Eigen::MatrixXcd;
  using CVector = Eigen::VectorXcd;
  const int s = tableau.stages();
  const CMatrix m = CMatrix::Identity(s, s) - z * tableau.a().cast<Complex>();
  Eigen::PartialPivLU<CMatrix> lu(m);
  if (!(lu.rcond() > 1e-14)) throw PoleError("stability function of '" + tableau.name() + "' has a pole near z");
  const CVector y = lu.solve(CVector::Ones(s));
  return 1.0 + z * tableau.b().cast<Complex>().dot(y);
}

enum class LinearVerdict { Contractive, NotContractive, Borderline };

inline const char* to_string(LinearVerdict v) {
  switch (v) {
    case LinearVerdict::Contractive: return "Contractive";
    case LinearVerdict::NotContractive: return "NotContractive";
    case LinearVerdict::Borderline: return "Borderline";
  }
  return "?";
}

/// Order and leading error coefficients of R(z) = e^z + a z^{p+1} + b z^{p+2} + ...
struct StabilityReport {
  int order = 0;
  double coeff_a = 0.0;
  double coeff_b = 0.0;
  /// Exact values when the tableau has rational entries.
  std::optional<Rational> exact_a;
  std::optional<Rational> exact_b;
  /// Taylor coefficients r_0, r_1, ... of R.
  std::vector<double> series;
  LinearVerdict verdict = LinearVerdict::NotContractive;
  std::optional<double> axis_ustar;
};

inline constexpr double kSeriesMatchTol = 1e-10;

namespace detail {
inline Rational inverse_factorial(int k) {
  boost::multiprecision::cpp_int f = 1;
  for (int i = 2; i <= k; ++i) f *= i;
  return Rational(1) / Rational(f);
}
}  // namespace detail

/// Series of R about 0: r_0 = 1, r_{k+1} = b^T a^k 1. Fills order, a and b.
inline StabilityReport stability_series(const ButcherTableau& tableau, int terms = 12) {
  if (terms < 4) throw PreconditionError("stability series needs at least 4 terms");
  StabilityReport rep;
  rep.series.assign(terms, 0.0);
  rep.series[0] = 1.0;

  if (const auto& ex = tableau.exact()) {
    const std::size_t s = ex->b.size();
    std::vector<Rational> v(s, Rational(1));  // a^k 1
    std::vector<Rational> r(terms);
    r[0] = 1;
    for (int k = 1; k < terms; ++k) {
      Rational acc = 0;
      for (std::size_t i = 0; i < s; ++i) acc += ex->b[i] * v[i];
      r[k] = acc;
      std::vector<Rational> next(s, Rational(0));
      for (std::size_t i = 0; i < s; ++i)
        for (std::size_t j = 0; j < s; ++j) next[i] += ex->a[i][j] * v[j];
      v = std::move(next);
    }
    for (int k = 0; k < terms; ++k) rep.series[k] = to_double(r[k]);
    int mismatch = -1;
    for (int k = 0; k < terms; ++k)
      if (r[k] != detail::inverse_factorial(k)) {
        mismatch = k;
        break;
      }
    if (mismatch == 1) throw PreconditionError("tableau '" + tableau.name() + "' is inconsistent (order 0)");
    if (mismatch < 0 || mismatch + 1 >= terms)
      throw PreconditionError("stability series of '" + tableau.name() + "' needs more than " +
                              std::to_string(terms) + " terms");
    rep.order = mismatch - 1;
    rep.exact_a = r[mismatch] - detail::inverse_factorial(mismatch);
    rep.exact_b = r[mismatch + 1] - detail::inverse_factorial(mismatch + 1);
    rep.coeff_a = to_double(*rep.exact_a);
    rep.coeff_b = to_double(*rep.exact_b);
    return rep;
  }

  const Matrix& a = tableau.a();
  const Vector& b = tableau.b();
  Vector v = Vector::Ones(tableau.stages());
  std::vector<double> inv_fact(terms, 1.0);
  for (int k = 1; k < terms; ++k) inv_fact[k] = inv_fact[k - 1] / k;
  for (int k = 1; k < terms; ++k) {
    rep.series[k] = b.dot(v);
    v = a * v;
  }
  int mismatch = -1;
  for (int k = 0; k < terms; ++k)
    if (std::abs(rep.series[k] - inv_fact[k]) > kSeriesMatchTol * inv_fact[k]) {
      mismatch = k;
      break;
    }
  if (mismatch == 1) throw PreconditionError("tableau '" + tableau.name() + "' is inconsistent (order 0)");
  if (mismatch < 0 || mismatch + 1 >= terms)
    throw PreconditionError("stability series of '" + tableau.name() + "' needs more than " +
                            std::to_string(terms) + " terms");
  rep.order = mismatch - 1;
  rep.coeff_a = rep.series[mismatch] - inv_fact[mismatch];
  rep.coeff_b = rep.series[mismatch + 1] - inv_fact[mismatch + 1];
  return rep;
}

inline constexpr double kBorderlineTol = 1e-12;

/// Sufficient condition for linear contractivity in 2D: 4 | (p+1) and a < 0,
/// or 4 | (p+2) and b < a. Equality in the applicable comparison is Borderline.
inline LinearVerdict linear_verdict(const StabilityReport& rep) {
  const int p = rep.order;
  const bool exact = rep.exact_a && rep.exact_b;
  if ((p + 1) % 4 == 0) {
    if (exact) {
      if (*rep.exact_a < 0) return LinearVerdict::Contractive;
      if (*rep.exact_a == 0) return LinearVerdict::Borderline;
      return LinearVerdict::NotContractive;
    }
    if (std::abs(rep.coeff_a) <= kBorderlineTol) return LinearVerdict::Borderline;
    return rep.coeff_a < 0 ? LinearVerdict::Contractive : LinearVerdict::NotContractive;
  }
  if ((p + 2) % 4 == 0) {
    if (exact) {
      if (*rep.exact_b < *rep.exact_a) return LinearVerdict::Contractive;
      if (*rep.exact_b == *rep.exact_a) return LinearVerdict::Borderline;
      return LinearVerdict::NotContractive;
    }
    const double diff = rep.coeff_b - rep.coeff_a;
    if (std::abs(diff) <= kBorderlineTol) return LinearVerdict::Borderline;
    return diff < 0 ? LinearVerdict::Contractive : LinearVerdict::NotContractive;
  }
  return LinearVerdict::NotContractive;
}

/// R(u) R(-u) and |R(iu)|^2, the determinants for the traceless 2D spectra
/// {u, -u} and {iu, -iu}.
struct AxisProducts {
  double real_axis;
  double imag_axis;
};

inline AxisProducts axis_products(const ButcherTableau& tableau, double u) {
  const Complex rp = stability_function(tableau, Complex(u, 0.0));
  const Complex rm = stability_function(tableau, Complex(-u, 0.0));
  const Complex ri = stability_function(tableau, Complex(0.0, u));
  return {(rp * rm).real(), std::norm(ri)};
}

struct AxisScan {
  enum class Status { Passed, Violated, Pole };
  enum class Axis { None, Real, Imaginary };

  Status status = Status::Passed;
  /// Largest u such that every sampled u' < u satisfied both bounds.
  double u_star = 0.0;
  /// First violating u (bisection-refined) or the pole location.
  std::optional<double> failure_u;
  Axis axis = Axis::None;
  /// Largest sampled value of max(product) - 1 on the passing range.
  double max_excess = 0.0;

  bool passed() const { return status == Status::Passed; }
};

inline constexpr double kAxisScanTol = 1e-14;

/// Scan 0 <= u <= u_max on a uniform grid of n_samples points, refining the
/// first violation by bisection.
inline AxisScan axis_scan(const ButcherTableau& tableau, double u_max, int n_samples = 2001) {
  if (!(u_max > 0.0)) throw PreconditionError("axis_scan needs u_max > 0");
  if (n_samples < 2) throw PreconditionError("axis_scan needs at least two samples");
  const int s = tableau.stages();
  const Matrix& a = tableau.a();
  // det(I - z a) along both axes; a sign change or zero between samples is a pole.
  auto resolvent_det = [&](Complex z) {
    const Eigen::MatrixXcd m = Eigen::MatrixXcd::Identity(s, s) - z * a.cast<Complex>();
    return m.partialPivLu().determinant();
  };
  // Rounding in R grows with |R|, so near a pole the tolerance scales with it.
  auto check = [&](double u, AxisScan::Axis& axis, double& excess) {
    const Complex rp = stability_function(tableau, Complex(u, 0.0));
    const Complex rm = stability_function(tableau, Complex(-u, 0.0));
    const Complex ri = stability_function(tableau, Complex(0.0, u));
    const double real_axis = (rp * rm).real(), imag_axis = std::norm(ri);
    const double tol_real = kAxisScanTol * std::max({1.0, std::abs(rp), std::abs(rm)});
    const double tol_imag = kAxisScanTol * std::max(1.0, imag_axis);
    excess = std::max(real_axis, imag_axis) - 1.0;
    if (real_axis > 1.0 + tol_real) {
      axis = AxisScan::Axis::Real;
      return false;
    }
    if (imag_axis > 1.0 + tol_imag) {
      axis = AxisScan::Axis::Imaginary;
      return false;
    }
    return true;
  };

  AxisScan out;
  double prev_u = 0.0;
  double prev_det_p = 1.0, prev_det_m = 1.0;
  for (int k = 0; k < n_samples; ++k) {
    const double u = u_max * k / (n_samples - 1);
    const double det_p = resolvent_det(Complex(u, 0.0)).real();
    const double det_m = resolvent_det(Complex(-u, 0.0)).real();
    const bool pole = std::abs(det_p) < 1e-12 || std::abs(det_m) < 1e-12 || det_p * prev_det_p < 0.0 ||
                      det_m * prev_det_m < 0.0 || std::abs(resolvent_det(Complex(0.0, u))) < 1e-12;
    if (pole) {
      // Bisect the sign change of the real-axis resolvent determinant.
      double lo = prev_u, hi = u;
      for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        const double dp = resolvent_det(Complex(mid, 0.0)).real();
        const double dm = resolvent_det(Complex(-mid, 0.0)).real();
        if (dp * prev_det_p > 0.0 && dm * prev_det_m > 0.0)
          lo = mid;
        else
          hi = mid;
      }
      out.status = AxisScan::Status::Pole;
      out.failure_u = hi;
      out.u_star = prev_u;
      return out;
    }
    AxisScan::Axis axis = AxisScan::Axis::None;
    double excess = 0.0;
    if (!check(u, axis, excess)) {
      double lo = prev_u, hi = u;
      for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, hi); ++it) {
        const double mid = 0.5 * (lo + hi);
        AxisScan::Axis ax = AxisScan::Axis::None;
        double ex = 0.0;
        if (check(mid, ax, ex))
          lo = mid;
        else {
          hi = mid;
          axis = ax;
        }
      }
      out.status = AxisScan::Status::Violated;
      out.failure_u = hi;
      out.axis = axis;
      out.u_star = prev_u;
      return out;
    }
    out.max_excess = std::max(out.max_excess, excess);
    out.u_star = u;
    prev_u = u;
    prev_det_p = det_p;
    prev_det_m = det_m;
  }
  return out;
}

struct OrderStarMembership {
  bool member = false;
  bool pole = false;
};

/// z lies in the order star when |R(z)| < |e^z|.
inline OrderStarMembership order_star_member(const ButcherTableau& tableau, Complex z) {
  try {
    const Complex r = stability_function(tableau, z);
    return {std::abs(r) < std::exp(z.real()), false};
  } catch (const PoleError&) {
    return {false, true};
  }
}

/// Quantities governing Euler's method in n dimensions.
struct EulerTraceSquare {
  double trace_f2 = 0.0;          ///< tr(F^2)
  double symmetric_norm2 = 0.0;   ///< ||S||_F^2, S = (F + F^T)/2
  double antisymmetric_norm2 = 0.0;  ///< ||A||_F^2, A = (F - F^T)/2
  double frobenius_gap = 0.0;     ///< ||S||^2 - ||A||^2
  bool eigen_ok = true;           ///< eigenvalues were computed
  bool sector_ok = false;         ///< every eigenvalue has |Re| >= |Im|
  bool zero_eigenvalue = false;   ///< some eigenvalue is (numerically) zero
  double sector_margin = 0.0;     ///< min over eigenvalues of |Re| - |Im|
};

inline EulerTraceSquare euler_trace_square_test(const Matrix& f) {
  if (f.rows() != f.cols()) throw PreconditionError("euler_trace_square_test needs a square matrix");
  EulerTraceSquare out;
  out.trace_f2 = (f * f).trace();
  const Matrix sym = 0.5 * (f + f.transpose());
  const Matrix anti = 0.5 * (f - f.transpose());
  out.symmetric_norm2 = sym.squaredNorm();
  out.antisymmetric_norm2 = anti.squaredNorm();
  out.frobenius_gap = out.symmetric_norm2 - out.antisymmetric_norm2;
  try {
    const auto eig = eigenvalues(f);
    const double scale = std::max(1.0, f.norm());
    out.sector_margin = std::numeric_limits<double>::infinity();
    for (const auto& l : eig) {
      out.sector_margin = std::min(out.sector_margin, std::abs(l.real()) - std::abs(l.imag()));
      if (std::abs(l) <= 1e-12 * scale) out.zero_eigenvalue = true;
    }
    out.sector_ok = out.sector_margin >= -1e-12 * scale;
  } catch (const Error&) {
    out.eigen_ok = false;
  }
  return out;
}

struct EulerLogDet {
  double exact = 0.0;         ///< ln |det(I + hF)|
  double second_order = 0.0;  ///< h tr F - h^2 tr(F^2) / 2
};

inline EulerLogDet euler_logdet_expansion(const Matrix& f, double h) {
  if (f.rows() != f.cols()) throw PreconditionError("euler_logdet_expansion needs a square matrix");
  const Matrix m = Matrix::Identity(f.rows(), f.cols()) + h * f;
  const double det = determinant(m);
  if (det == 0.0) throw SingularSystemError("I + hF is singular", h);
  return {std::log(std::abs(det)), h * f.trace() - 0.5 * h * h * (f * f).trace()};
}

/// Largest det A of one step of the tableau over random traceless linear
/// fields x' = F x with ||F||_2 = 1 in `dim` dimensions.
inline double sampled_traceless_det_max(const ButcherTableau& tableau, int dim, int n_samples, double h,
                                        std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  double worst = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < n_samples; ++k) {
    Matrix f(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < dim; ++j) f(i, j) = normal(rng);
    f -= (f.trace() / dim) * Matrix::Identity(dim, dim);
    f /= operator_norm2(f);
    const System sys = builtin_systems::linear(f);
    const auto out = implicit_rk_step(tableau, sys, Vector::Zero(dim), h);
    worst = std::max(worst, determinant(out.jacobian));
  }
  return worst;
}

}  // namespace contractive
