#pragma once

#include "contractive/errors.hpp"
#include "contractive/linalg.hpp"
#include "contractive/system.hpp"
#include "contractive/tableau.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace contractive {

struct SolverConfig {
  double tol = 1e-12;  ///< max-norm of the stage residual
  int max_iters = 50;  ///< per phase (simplified Newton, then fixed point)
};

/// Result of one step x -> g(x) together with A = dg(x).
struct StepOutcome {
  Vector x_next;
  Matrix jacobian;
  std::vector<Vector> stage_states;
  std::vector<Matrix> stage_jacobians;
  int newton_iters = 0;
  bool converged = true;
  /// det A when the stepper can form it from better-conditioned factors; NaN
  /// otherwise.
  double det_jacobian = std::numeric_limits<double>::quiet_NaN();

  double det() const { return std::isnan(det_jacobian) ? determinant(jacobian) : det_jacobian; }
};

/// A one-step map with Jacobian, x -> (g(x), dg(x)).
using StepFunction = std::function<StepOutcome(const Vector& x, double h)>;

namespace detail {
inline void require_positive_step(double h) {
  if (!(h > 0.0) || !std::isfinite(h)) throw PreconditionError("step size must be positive and finite");
}
}  // namespace detail

/// x_{n+1} = x_n + h f(x_n), A = I + h F(x_n).
inline StepOutcome euler_step(const System& system, const Vector& x, double h) {
  detail::require_positive_step(h);
  const Vector fx = system(x);
  const Matrix jac = eval_jacobian(system, x);
  const auto n = static_cast<Eigen::Index>(system.dim());
  StepOutcome out;
  out.x_next = x + h * fx;
  out.jacobian = Matrix::Identity(n, n) + h * jac;
  out.stage_states = {x};
  out.stage_jacobians = {Matrix::Identity(n, n)};
  out.det_jacobian = determinant(out.jacobian);
  return out;
}

/// One step of a (generally implicit) Runge-Kutta method.
///
/// Stages X_i = x + h sum_j a_ij f(X_j) are solved by simplified Newton with
/// F frozen at x, falling back to fixed-point iteration. The stage Jacobians
/// A_i = I + h sum_j a_ij F(X_j) A_j are then obtained from one (n s) x (n s)
/// linear solve, and A = I + h sum_i b_i F(X_i) A_i. Given converged stages the
/// propagated A is the exact derivative of the discrete map.
inline StepOutcome implicit_rk_step(const ButcherTableau& tableau, const System& system, const Vector& x,
                                    double h, const SolverConfig& solver = {}) {
  detail::require_positive_step(h);
  system.check_state(x);
  const Eigen::Index n = system.dim();
  const int s = tableau.stages();
  const Matrix& a = tableau.a();
  const Vector& b = tableau.b();

  // Stage increments Z_i = X_i - x stacked into one vector.
  Vector z = Vector::Zero(n * s);
  std::vector<Vector> fz(s);
  auto stage = [&](const Vector& zz, int i) -> Vector { return x + zz.segment(i * n, n); };
  auto residual = [&](const Vector& zz, Vector& g) {
    for (int i = 0; i < s; ++i) fz[i] = system(stage(zz, i));
    g.resize(n * s);
    for (int i = 0; i < s; ++i) {
      Vector acc = Vector::Zero(n);
      for (int j = 0; j < s; ++j)
        if (a(i, j) != 0.0) acc += a(i, j) * fz[j];
      g.segment(i * n, n) = zz.segment(i * n, n) - h * acc;
    }
    return g.lpNorm<Eigen::Infinity>();
  };

  StepOutcome out;
  Vector g;
  if (tableau.is_explicit()) {
    for (int i = 0; i < s; ++i) {
      Vector acc = Vector::Zero(n);
      for (int j = 0; j < i; ++j)
        if (a(i, j) != 0.0) acc += a(i, j) * fz[j];
      z.segment(i * n, n) = h * acc;
      fz[i] = system(stage(z, i));
    }
  } else {
    double res = residual(z, g);
    int iters = 0;
    if (res > solver.tol) {
      const Matrix j0 = eval_jacobian(system, x);
      Matrix newton = Matrix::Identity(n * s, n * s);
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j) newton.block(i * n, j * n, n, n) -= h * a(i, j) * j0;
      Eigen::PartialPivLU<Matrix> lu(newton);
      Vector best = z;
      double best_res = res;
      if (lu.rcond() > 1e-14) {
        while (res > solver.tol && iters < solver.max_iters) {
          z -= lu.solve(g);
          ++iters;
          if (!z.allFinite()) break;
          try {
            res = residual(z, g);
          } catch (const EvaluationError&) {
            break;
          }
          if (res < best_res) {
            best_res = res;
            best = z;
          }
        }
      }
      if (!(best_res <= solver.tol)) {
        // Fixed-point iteration Z <- h (A (x) I) f(x + Z) from the best iterate.
        z = best;
        res = residual(z, g);
        int fp_iters = 0;
        while (res > solver.tol && fp_iters < solver.max_iters) {
          z -= g;
          ++fp_iters;
          if (!z.allFinite()) break;
          try {
            res = residual(z, g);
          } catch (const EvaluationError&) {
            break;
          }
          if (res < best_res) {
            best_res = res;
            best = z;
          }
        }
        iters += fp_iters;
        if (!(best_res <= solver.tol))
          throw ConvergenceError("stage equations of '" + tableau.name() + "' did not converge", best_res);
      }
      z = best;
      residual(z, g);
    }
    out.newton_iters = iters;
  }

  // Stage variational equations, solved exactly as one block system.
  std::vector<Matrix> fj(s);
  out.stage_states.resize(s);
  for (int i = 0; i < s; ++i) {
    out.stage_states[i] = stage(z, i);
    fj[i] = eval_jacobian(system, out.stage_states[i]);
  }
  Matrix block = Matrix::Identity(n * s, n * s);
  Matrix rhs(n * s, n);
  for (int i = 0; i < s; ++i) {
    rhs.block(i * n, 0, n, n) = Matrix::Identity(n, n);
    for (int j = 0; j < s; ++j)
      if (a(i, j) != 0.0) block.block(i * n, j * n, n, n) -= h * a(i, j) * fj[j];
  }
  Eigen::PartialPivLU<Matrix> lu(block);
  if (!(lu.rcond() > 1e-14))
    throw SingularSystemError("stage variational system of '" + tableau.name() + "' is singular", h);
  const Matrix stacked = lu.solve(rhs);

  out.stage_jacobians.resize(s);
  Vector incr = Vector::Zero(n);
  Matrix jac = Matrix::Identity(n, n);
  for (int i = 0; i < s; ++i) {
    out.stage_jacobians[i] = stacked.block(i * n, 0, n, n);
    incr += b[i] * fz[i];
    jac += h * b[i] * fj[i] * out.stage_jacobians[i];
  }
  out.x_next = x + h * incr;
  out.jacobian = std::move(jac);
  out.converged = true;

  // det A = det(I - h ((a - 1 b^T) (x) I) F) / det(I - h (a (x) I) F). Near a
  // pole of the stage system A is large and det(A) formed from its entries
  // loses about eps ||A||^2; the quotient loses about eps ||A||.
  Matrix numer = Matrix::Identity(n * s, n * s);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j)
      if (const double c = a(i, j) - b[j]; c != 0.0) numer.block(i * n, j * n, n, n) -= h * c * fj[j];
  out.det_jacobian = determinant(numer) / lu.determinant();
  return out;
}

/// |det A - (1 + h sum_i b_i det A_i tr F(X_i))| for a symplectic tableau in 2D.
inline double det_identity_check(const ButcherTableau& tableau, const StepOutcome& outcome, const System& system,
                                 double h) {
  if (system.dim() != 2) throw PreconditionError("determinant identity is stated for two-dimensional systems");
  if (!is_symplectic(tableau, 1e-12))
    throw PreconditionError("determinant identity requires a symplectic tableau; '" + tableau.name() + "' is not");
  if (static_cast<int>(outcome.stage_states.size()) != tableau.stages() ||
      static_cast<int>(outcome.stage_jacobians.size()) != tableau.stages())
    throw PreconditionError("step outcome does not match the tableau's stage count");
  double rhs = 1.0;
  for (int i = 0; i < tableau.stages(); ++i)
    rhs += h * tableau.b()[i] * determinant(outcome.stage_jacobians[i]) * divergence(system, outcome.stage_states[i]);
  return std::abs(determinant(outcome.jacobian) - rhs);
}

inline StepFunction make_euler_stepper(System system) {
  return [system = std::move(system)](const Vector& x, double h) { return euler_step(system, x, h); };
}

inline StepFunction make_rk_stepper(ButcherTableau tableau, System system, SolverConfig solver = {}) {
  return [tableau = std::move(tableau), system = std::move(system), solver](const Vector& x, double h) {
    return implicit_rk_step(tableau, system, x, h, solver);
  };
}

/// Stepper for a registry method name ("euler" uses the dedicated Euler step).
inline StepFunction make_stepper(const std::string& method, System system, SolverConfig solver = {}) {
  if (method == "euler") return make_euler_stepper(std::move(system));
  return make_rk_stepper(tableau_registry(method), std::move(system), solver);
}

}  // namespace contractive
