#pragma once

#include "contractive/errors.hpp"
#include "contractive/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace contractive {

using Field = std::function<Vector(const Vector&)>;
using JacobianFn = std::function<Matrix(const Vector&)>;

/// Relative step of the central-difference Jacobian, cbrt(machine epsilon).
inline const double kFdStep = std::cbrt(std::numeric_limits<double>::epsilon());

/// An autonomous ODE x' = f(x) on R^n. Immutable after construction.
class System {
 public:
  System(std::string name, int dim, Field field, JacobianFn jacobian = {},
         std::optional<double> lipschitz_bound = std::nullopt)
      : name_(std::move(name)),
        dim_(dim),
        field_(std::move(field)),
        jacobian_(std::move(jacobian)),
        lipschitz_(lipschitz_bound) {
    if (dim_ < 1) throw PreconditionError("system dimension must be positive");
    if (!field_) throw PreconditionError("system needs a field evaluator");
  }

  const std::string& name() const { return name_; }
  int dim() const { return dim_; }
  bool has_jacobian() const { return static_cast<bool>(jacobian_); }
  std::optional<double> lipschitz_bound() const { return lipschitz_; }

  /// f(x), checked for length and finiteness.
  Vector operator()(const Vector& x) const {
    check_state(x);
    Vector v = field_(x);
    if (v.size() != dim_) throw EvaluationError("field returned wrong length", x);
    if (!v.allFinite()) throw EvaluationError("non-finite field value", x);
    return v;
  }

  /// The user-supplied Jacobian; callers should prefer eval_jacobian().
  Matrix analytic_jacobian(const Vector& x) const {
    check_state(x);
    Matrix m = jacobian_(x);
    if (m.rows() != dim_ || m.cols() != dim_) throw EvaluationError("Jacobian has wrong shape", x);
    if (!m.allFinite()) throw EvaluationError("non-finite Jacobian entry", x);
    return m;
  }

  void check_state(const Vector& x) const {
    if (x.size() != dim_)
      throw PreconditionError("state has length " + std::to_string(x.size()) + ", system '" +
                              name_ + "' has dimension " + std::to_string(dim_));
  }

 private:
  std::string name_;
  int dim_;
  Field field_;
  JacobianFn jacobian_;
  std::optional<double> lipschitz_;
};

/// Central-difference Jacobian of a field with per-component step eps * max(1, |x_i|).
/// `order` selects the 3-point (2) or 5-point (4) stencil.
inline Matrix fd_field_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x,
                                double eps = kFdStep, int order = 2) {
  if (order != 2 && order != 4) throw PreconditionError("finite-difference order must be 2 or 4");
  const Eigen::Index n = x.size();
  Matrix jac(n, n);
  auto eval = [&](const Vector& y) {
    Vector v = f(y);
    if (!v.allFinite()) throw EvaluationError("non-finite field value", y);
    return v;
  };
  Vector y = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double step = eps * std::max(1.0, std::abs(x[j]));
    y[j] = x[j] + step;
    const Vector fp = eval(y);
    const double up = y[j];
    y[j] = x[j] - step;
    const Vector fm = eval(y);
    const double down = y[j];
    if (order == 2) {
      jac.col(j) = (fp - fm) / (up - down);
    } else {
      y[j] = x[j] + 2.0 * step;
      const Vector fpp = eval(y);
      y[j] = x[j] - 2.0 * step;
      const Vector fmm = eval(y);
      jac.col(j) = (8.0 * (fp - fm) - (fpp - fmm)) / (12.0 * step);
    }
    y[j] = x[j];
  }
  return jac;
}

/// F(x) = df(x): analytic when supplied, otherwise central differences.
inline Matrix eval_jacobian(const System& system, const Vector& x) {
  if (system.has_jacobian()) return system.analytic_jacobian(x);
  system.check_state(x);
  return fd_field_jacobian([&](const Vector& y) { return system(y); }, x);
}

/// tr F(x).
inline double divergence(const System& system, const Vector& x) {
  return eval_jacobian(system, x).trace();
}

inline constexpr double kClassifyTolerance = 1e-12;

struct ContractivityClass {
  enum class Kind { WeaklyContractive, StronglyContractive, VolumePreserving, Indefinite };

  Kind kind = Kind::Indefinite;
  /// Largest sampled divergence; the bound b for StronglyContractive.
  double bound = 0.0;
  /// Sampled states paired with tr F.
  std::vector<std::pair<Vector, double>> evidence;

  /// Sample with the largest divergence (the violating state when Indefinite).
  const std::pair<Vector, double>& worst() const {
    return *std::max_element(evidence.begin(), evidence.end(),
                             [](const auto& a, const auto& b) { return a.second < b.second; });
  }
};

inline const char* to_string(ContractivityClass::Kind kind) {
  switch (kind) {
    case ContractivityClass::Kind::WeaklyContractive: return "WeaklyContractive";
    case ContractivityClass::Kind::StronglyContractive: return "StronglyContractive";
    case ContractivityClass::Kind::VolumePreserving: return "VolumePreserving";
    case ContractivityClass::Kind::Indefinite: return "Indefinite";
  }
  return "?";
}

/// Classify from the divergence at the given states.
inline ContractivityClass classify(const System& system, const std::vector<Vector>& states,
                                   double tol = kClassifyTolerance) {
  if (states.empty()) throw PreconditionError("classify needs at least one sample state");
  ContractivityClass out;
  double max_div = -std::numeric_limits<double>::infinity();
  double max_abs = 0.0;
  for (const auto& x : states) {
    const double d = divergence(system, x);
    out.evidence.emplace_back(x, d);
    max_div = std::max(max_div, d);
    max_abs = std::max(max_abs, std::abs(d));
  }
  out.bound = max_div;
  using Kind = ContractivityClass::Kind;
  if (max_abs <= tol)
    out.kind = Kind::VolumePreserving;
  else if (max_div < -tol)
    out.kind = Kind::StronglyContractive;
  else if (max_div <= tol)
    out.kind = Kind::WeaklyContractive;
  else
    out.kind = Kind::Indefinite;
  return out;
}

inline std::vector<Vector> sample_states(const Box& box, int n_samples, std::uint64_t seed) {
  if (!box.valid()) throw PreconditionError("sample box is empty or malformed");
  if (n_samples < 1) throw PreconditionError("need at least one sample");
  std::mt19937_64 rng(seed);
  std::vector<Vector> states;
  states.reserve(n_samples);
  for (int k = 0; k < n_samples; ++k) states.push_back(box.sample(rng));
  return states;
}

/// Classify from n_samples uniform random states in the box.
inline ContractivityClass classify(const System& system, const Box& box, int n_samples,
                                   std::uint64_t seed = 20240601) {
  if (box.dim() != system.dim()) throw PreconditionError("sample box dimension mismatch");
  return classify(system, sample_states(box, n_samples, seed));
}

// ---------------------------------------------------------------------------
// Builtin test problems

namespace builtin_systems {

inline System lorenz(double sigma = 10.0, double rho = 28.0, double beta = 8.0 / 3.0) {
  auto field = [=](const Vector& x) {
    Vector v(3);
    v << sigma * (x[1] - x[0]), rho * x[0] - x[1] - x[0] * x[2], -beta * x[2] + x[0] * x[1];
    return v;
  };
  auto jac = [=](const Vector& x) {
    Matrix m(3, 3);
    m << -sigma, sigma, 0.0,
         rho - x[2], -1.0, -x[0],
         x[1], x[0], -beta;
    return m;
  };
  return System("lorenz", 3, field, jac);
}

/// x'' = -sin x - eps x' as a first-order system in (x, v).
inline System pendulum(double eps = 0.1) {
  auto field = [=](const Vector& x) {
    Vector v(2);
    v << x[1], -std::sin(x[0]) - eps * x[1];
    return v;
  };
  auto jac = [=](const Vector& x) {
    Matrix m(2, 2);
    m << 0.0, 1.0, -std::cos(x[0]), -eps;
    return m;
  };
  return System("pendulum", 2, field, jac, std::sqrt(2.0 + eps * eps));
}

inline System linear(const Matrix& a, std::string name = "linear-nd") {
  if (a.rows() != a.cols() || a.rows() < 1) throw PreconditionError("linear system needs a square matrix");
  const int n = static_cast<int>(a.rows());
  return System(std::move(name), n, [a](const Vector& x) -> Vector { return a * x; },
                [a](const Vector&) -> Matrix { return a; }, operator_norm2(a));
}

inline System linear2d(double a11, double a12, double a21, double a22) {
  Matrix a(2, 2);
  a << a11, a12, a21, a22;
  return linear(a, "linear2d");
}

/// Linear field [[0,1],[-1,-eps]]: an elliptic fixed point with weak damping.
inline System near_elliptic(double eps = 0.01) {
  Matrix a(2, 2);
  a << 0.0, 1.0, -1.0, -eps;
  return linear(a, "near-elliptic");
}

/// f(x, y) = (x^2, 0): divergence 2x changes sign.
inline System quadratic_drift() {
  auto field = [](const Vector& x) {
    Vector v(2);
    v << x[0] * x[0], 0.0;
    return v;
  };
  auto jac = [](const Vector& x) {
    Matrix m = Matrix::Zero(2, 2);
    m(0, 0) = 2.0 * x[0];
    return m;
  };
  return System("quadratic-drift", 2, field, jac);
}

}  // namespace builtin_systems

inline std::vector<std::string> builtin_names() {
  return {"lorenz", "pendulum", "linear2d", "linear-nd", "near-elliptic", "quadratic-drift"};
}

/// Builtin registry. Empty params select the defaults where a default exists.
inline System builtin(const std::string& name, const std::vector<double>& params = {}) {
  auto expect = [&](std::size_t count) {
    if (params.size() != count)
      throw PreconditionError("builtin '" + name + "' takes " + std::to_string(count) +
                              " parameters, got " + std::to_string(params.size()));
  };
  namespace b = builtin_systems;
  if (name == "lorenz") {
    if (params.empty()) return b::lorenz();
    expect(3);
    return b::lorenz(params[0], params[1], params[2]);
  }
  if (name == "pendulum") {
    if (params.empty()) return b::pendulum();
    expect(1);
    return b::pendulum(params[0]);
  }
  if (name == "near-elliptic") {
    if (params.empty()) return b::near_elliptic();
    expect(1);
    return b::near_elliptic(params[0]);
  }
  if (name == "linear2d") {
    expect(4);
    return b::linear2d(params[0], params[1], params[2], params[3]);
  }
  if (name == "linear-nd") {
    if (params.empty()) throw PreconditionError("builtin 'linear-nd' takes n followed by n*n entries");
    const double nd = params[0];
    if (nd < 1 || nd != std::floor(nd)) throw PreconditionError("linear-nd dimension must be a positive integer");
    const auto n = static_cast<Eigen::Index>(nd);
    expect(static_cast<std::size_t>(1 + n * n));
    Matrix a(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) a(i, j) = params[1 + i * n + j];
    return b::linear(a);
  }
  if (name == "quadratic-drift") {
    expect(0);
    return b::quadratic_drift();
  }
  throw UnknownNameError("unknown builtin system '" + name + "'");
}

}  // namespace contractive
