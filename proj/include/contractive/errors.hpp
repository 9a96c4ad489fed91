#pragma once

#include <Eigen/Dense>

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace contractive {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated a documented precondition (bad dimension, h <= 0, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Lookup of an unknown builtin, tableau or scheme name.
class UnknownNameError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input (tableau files, manifests, configs).
class ParseError : public Error {
 public:
  using Error::Error;
};

namespace detail {
inline std::string format_state(const Eigen::VectorXd& x) {
  std::ostringstream os;
  os.precision(17);
  os << "(";
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (i) os << ", ";
    os << x[i];
  }
  os << ")";
  return os.str();
}
}  // namespace detail

/// Field or Jacobian produced a non-finite value.
class EvaluationError : public Error {
 public:
  EvaluationError(const std::string& what, Eigen::VectorXd state)
      : Error(what + " at x = " + detail::format_state(state)), state_(std::move(state)) {}
  const Eigen::VectorXd& state() const { return state_; }

 private:
  Eigen::VectorXd state_;
};

/// Stage equations did not converge within the iteration budget.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what + " (last residual " + std::to_string(residual) + ")"), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Linear system of the stage variational equations is singular.
class SingularSystemError : public Error {
 public:
  SingularSystemError(const std::string& what, double h)
      : Error(what + " (h = " + std::to_string(h) + ")"), h_(h) {}
  double step_size() const { return h_; }

 private:
  double h_;
};

/// Stability function evaluated at (or scanned across) a pole.
class PoleError : public Error {
 public:
  using Error::Error;
};

/// A field has positive divergence somewhere in the sampled region.
class IndefiniteError : public Error {
 public:
  IndefiniteError(const std::string& what, Eigen::VectorXd state, double divergence)
      : Error(what + ": div f = " + std::to_string(divergence) + " at x = " +
              detail::format_state(state)),
        state_(std::move(state)),
        divergence_(divergence) {}
  const Eigen::VectorXd& state() const { return state_; }
  double divergence() const { return divergence_; }

 private:
  Eigen::VectorXd state_;
  double divergence_;
};

}  // namespace contractive
