#pragma once

#include "contractive/errors.hpp"
#include "contractive/linalg.hpp"
#include "contractive/steppers.hpp"
#include "contractive/system.hpp"
#include "contractive/tableau.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace contractive {

/// Splitting construction failed a numerical consistency check.
class SplittingError : public Error {
 public:
  using Error::Error;
};

/// Constant weights s_ij with s_ij + s_ji >= 0 and sum s_ij = 1.
struct WeightMatrix {
  Matrix s;

  int dim() const { return static_cast<int>(s.rows()); }
  /// Row sums r_i = sum_j s_ij.
  Vector row_sums() const { return s.rowwise().sum(); }

  void validate(double tol = 1e-14) const {
    if (s.rows() != s.cols() || s.rows() < 1) throw PreconditionError("weight matrix must be square");
    if (!s.allFinite()) throw PreconditionError("weight matrix has non-finite entries");
    for (Eigen::Index i = 0; i < s.rows(); ++i)
      for (Eigen::Index j = i; j < s.cols(); ++j)
        if (s(i, j) + s(j, i) < -tol)
          throw PreconditionError("weights violate s_ij + s_ji >= 0 at (" + std::to_string(i + 1) + "," +
                                  std::to_string(j + 1) + ")");
    if (std::abs(s.sum() - 1.0) > tol) throw PreconditionError("weights do not sum to 1");
  }
};

/// Named weight schemes: "offdiag-uniform", "diag-1overn", "pair(i,j)" (1-based).
inline WeightMatrix weight_scheme(int n, const std::string& scheme) {
  if (n < 2) throw PreconditionError("splitting needs dimension n >= 2");
  WeightMatrix w{Matrix::Zero(n, n)};
  if (scheme == "offdiag-uniform") {
    w.s.setConstant(1.0 / (static_cast<double>(n) * (n - 1)));
    w.s.diagonal().setZero();
  } else if (scheme == "diag-1overn") {
    w.s.diagonal().setConstant(1.0 / n);
  } else {
    static const std::regex pair_re(R"(pair\(\s*(\d+)\s*,\s*(\d+)\s*\))");
    std::smatch m;
    if (!std::regex_match(scheme, m, pair_re)) throw UnknownNameError("unknown weight scheme '" + scheme + "'");
    const int i = std::stoi(m[1]), j = std::stoi(m[2]);
    if (i < 1 || j < 1 || i > n || j > n || i == j)
      throw PreconditionError("invalid indices in weight scheme '" + scheme + "' for n = " + std::to_string(n));
    w.s(i - 1, j - 1) = 0.5;
    w.s(j - 1, i - 1) = 0.5;
  }
  w.validate();
  return w;
}

struct QuadratureConfig {
  int nodes = 32;          ///< Gauss-Legendre nodes per line integral
  double fd_step = 1e-5;   ///< relative step for cross derivatives of line integrals
  double tolerance = 1e-8; ///< accepted reconstruction / closure / divergence residual

  void validate() const {
    if (nodes < 8) throw PreconditionError("quadrature needs at least 8 nodes");
    if (!(tolerance > 0.0)) throw PreconditionError("quadrature tolerance must be positive");
    if (!(fd_step > 0.0)) throw PreconditionError("quadrature fd_step must be positive");
  }
};

namespace detail {

/// Line integrals I_i(x) = int_{c_i}^{x_i} tr F(x with x_i = t) dt and the
/// detraced field f~_i = f_i - r_i I_i built from them.
class DetracedField {
 public:
  DetracedField(System system, const WeightMatrix& weights, Vector anchor, QuadratureConfig quad,
                std::optional<double> constant_divergence)
      : system_(std::move(system)),
        rows_(weights.row_sums()),
        anchor_(std::move(anchor)),
        quad_(quad),
        rule_(quad.nodes),
        constant_div_(constant_divergence) {}

  const System& system() const { return system_; }
  const Vector& anchor() const { return anchor_; }
  const QuadratureConfig& quad() const { return quad_; }
  const Vector& row_sums() const { return rows_; }
  std::optional<double> constant_divergence() const { return constant_div_; }

  double line_integral(int i, const Vector& x) const {
    if (constant_div_) return *constant_div_ * (x[i] - anchor_[i]);
    Vector y = x;
    return rule_.integrate(
        [&](double t) {
          y[i] = t;
          const double d = divergence(system_, y);
          if (!std::isfinite(d)) throw EvaluationError("non-finite divergence in line integral", y);
          return d;
        },
        anchor_[i], x[i]);
  }

  /// Gradient of I_i: d_i I_i = tr F(x); other entries by central differences.
  Vector line_integral_gradient(int i, const Vector& x, double div_at_x) const {
    const Eigen::Index n = x.size();
    Vector g = Vector::Zero(n);
    g[i] = div_at_x;
    if (constant_div_) return g;
    Vector xp = x, xm = x;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double step = quad_.fd_step * std::max(1.0, std::abs(x[j]));
      xp[j] = x[j] + step;
      xm[j] = x[j] - step;
      g[j] = (line_integral(i, xp) - line_integral(i, xm)) / (xp[j] - xm[j]);
      xp[j] = x[j];
      xm[j] = x[j];
    }
    return g;
  }

  double component(int i, const Vector& x) const {
    const double r = rows_[i];
    return system_(x)[i] - (r != 0.0 ? r * line_integral(i, x) : 0.0);
  }

  Vector value(const Vector& x) const {
    Vector v = system_(x);
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if (rows_[i] != 0.0) v[i] -= rows_[i] * line_integral(static_cast<int>(i), x);
    return v;
  }

  /// Diagonal of d f~: F_ii - r_i tr F.
  Vector diagonal(const Vector& x) const {
    const Matrix f = eval_jacobian(system_, x);
    return f.diagonal() - rows_ * f.trace();
  }

  Matrix jacobian(const Vector& x) const {
    Matrix f = eval_jacobian(system_, x);
    const double div = f.trace();
    for (Eigen::Index i = 0; i < f.rows(); ++i)
      if (rows_[i] != 0.0)
        f.row(i) -= rows_[i] * line_integral_gradient(static_cast<int>(i), x, div).transpose();
    return f;
  }

 private:
  System system_;
  Vector rows_;
  Vector anchor_;
  QuadratureConfig quad_;
  GaussLegendre rule_;
  std::optional<double> constant_div_;
};

}  // namespace detail

/// f~ = f - sum_j d_j S_ij, divergence-free by construction.
/// `constant_divergence` enables the closed form I_i = tr F (x_i - c_i).
inline System detrace(const System& system, const WeightMatrix& weights, const Vector& anchor,
                      const QuadratureConfig& quad = {}, std::optional<double> constant_divergence = std::nullopt) {
  if (system.dim() < 2) throw PreconditionError("splitting needs dimension n >= 2");
  if (weights.dim() != system.dim()) throw PreconditionError("weight matrix dimension does not match the system");
  weights.validate();
  quad.validate();
  system.check_state(anchor);
  auto ctx = std::make_shared<const detail::DetracedField>(system, weights, anchor, quad, constant_divergence);
  return System(
      system.name() + "~", system.dim(), [ctx](const Vector& x) { return ctx->value(x); },
      [ctx](const Vector& x) { return ctx->jacobian(x); });
}

enum class PieceKind { SPiece, APiece, Combined };

inline const char* to_string(PieceKind k) {
  switch (k) {
    case PieceKind::SPiece: return "S";
    case PieceKind::APiece: return "A";
    case PieceKind::Combined: return "C";
  }
  return "?";
}

/// One summand of the splitting: a field on the full state that moves only
/// the coordinates in `indices` (one or two, 0-based).
struct Piece {
  std::vector<int> indices;
  PieceKind kind = PieceKind::Combined;
  System field;
};

namespace detail {

/// Field plus Jacobian whose active diagonal entries are supplied directly and
/// the rest taken by central differences of the field.
inline Matrix piece_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x,
                             const std::vector<std::pair<int, double>>& diag, double fd_step) {
  Matrix jac = fd_field_jacobian(f, x, fd_step);
  for (const auto& [i, v] : diag) jac(i, i) = v;
  return jac;
}

struct DiagonalSource {
  std::function<double(int, const Vector&)> component;
  std::function<Vector(const Vector&)> diagonal;
};

/// Tridiagonal divergence-free pieces on (k, k+1), k = 0..n-2.
///   g_0 = f~_0,  g_k = f~_k - v_{k-1},
///   v_k(x) = -int_{c_{k+1}}^{x_{k+1}} D_k dt,  D_k = sum_{m<=k} d_m f~_m,
/// and the last piece carries f~_{n-1} itself.
inline std::vector<Piece> tridiagonal_pieces(const DiagonalSource& src, int n, const Vector& anchor,
                                             const QuadratureConfig& quad, const std::string& label) {
  auto rule = std::make_shared<const GaussLegendre>(quad.nodes);
  auto partial_trace = [src](int k, const Vector& x) { return src.diagonal(x).head(k + 1).sum(); };
  // v_k as a function of the full state.
  auto v = [=](int k, const Vector& x) {
    Vector y = x;
    return -rule->integrate(
        [&](double t) {
          y[k + 1] = t;
          return partial_trace(k, y);
        },
        anchor[k + 1], x[k + 1]);
  };
  std::vector<Piece> pieces;
  for (int k = 0; k + 1 < n; ++k) {
    const bool last = (k + 2 == n);
    auto field = [=](const Vector& x) {
      Vector out = Vector::Zero(n);
      out[k] = src.component(k, x) - (k > 0 ? v(k - 1, x) : 0.0);
      out[k + 1] = last ? src.component(k + 1, x) : v(k, x);
      return out;
    };
    auto jac = [=](const Vector& x) {
      const Vector d = src.diagonal(x);
      const double dk = d.head(k + 1).sum();
      const double second = last ? d[k + 1] : -dk;
      return piece_jacobian(field, x, {{k, dk}, {k + 1, second}}, kFdStep);
    };
    pieces.push_back(Piece{{k, k + 1},
                           PieceKind::APiece,
                           System(label + "/A(" + std::to_string(k + 1) + "," + std::to_string(k + 2) + ")", n,
                                  field, jac)});
  }
  return pieces;
}

/// |f~_{n-1}(x) - [f~_{n-1}(x; x_{n-1} = c_{n-1}) - int D_{n-2}]|: zero iff f~
/// is divergence-free along the last coordinate line through x.
inline double closure_residual(const DiagonalSource& src, int n, const Vector& anchor, const QuadratureConfig& quad,
                               const Vector& x) {
  const GaussLegendre rule(quad.nodes);
  const int last = n - 1;
  Vector y = x;
  const double integral = rule.integrate(
      [&](double t) {
        y[last] = t;
        return src.diagonal(y).head(last).sum();
      },
      anchor[last], x[last]);
  Vector base = x;
  base[last] = anchor[last];
  return std::abs(src.component(last, x) - (src.component(last, base) - integral));
}

}  // namespace detail

/// n-1 two-dimensional divergence-free pieces summing to the traceless field
/// `f_tilde`. Throws SplittingError when the closure residual at any of
/// `check_states` exceeds the quadrature tolerance.
inline std::vector<Piece> feng_wang_pieces(const System& f_tilde, const Vector& anchor, const QuadratureConfig& quad = {},
                                           const std::vector<Vector>& check_states = {}) {
  const int n = f_tilde.dim();
  if (n < 2) throw PreconditionError("splitting needs dimension n >= 2");
  quad.validate();
  f_tilde.check_state(anchor);
  detail::DiagonalSource src{[f_tilde](int i, const Vector& x) { return f_tilde(x)[i]; },
                             [f_tilde](const Vector& x) -> Vector { return eval_jacobian(f_tilde, x).diagonal(); }};
  for (const auto& x : check_states) {
    const double div = src.diagonal(x).sum();
    const double closure = detail::closure_residual(src, n, anchor, quad, x);
    if (std::abs(div) > quad.tolerance || closure > quad.tolerance)
      throw SplittingError("field is not divergence-free enough to split: div = " + std::to_string(div) +
                           ", closure residual = " + std::to_string(closure) + " at x = " +
                           contractive::detail::format_state(x));
  }
  return detail::tridiagonal_pieces(src, n, anchor, quad, f_tilde.name());
}

struct SplittingPlan {
  std::string scheme;  ///< weight scheme label, or "custom"
  std::optional<WeightMatrix> weights;
  Vector anchor;
  QuadratureConfig quad;
  std::optional<double> constant_divergence;
  System system;
  std::vector<Piece> pieces;
};

struct PlanOptions {
  Vector anchor;  ///< empty selects the origin
  QuadratureConfig quad;
  Box region;     ///< where contractivity and consistency are sampled
  int n_samples = 64;
  std::uint64_t seed = 20240601;
  int closure_checks = 8;
};

/// Detect constant divergence from samples; returns the common value.
inline std::optional<double> detect_constant_divergence(const ContractivityClass& cls, double rel_tol = 1e-12) {
  const double d0 = cls.evidence.front().second;
  for (const auto& [x, d] : cls.evidence)
    if (std::abs(d - d0) > rel_tol * std::max(1.0, std::abs(d0))) return std::nullopt;
  return d0;
}

/// Split a weakly contractive field into S-pieces (carrying all the
/// divergence) and tridiagonal A-pieces (divergence-free).
inline SplittingPlan contractive_plan(const System& system, const WeightMatrix& weights, const PlanOptions& opts,
                                      std::string scheme = "custom") {
  const int n = system.dim();
  if (n < 2) throw PreconditionError("splitting needs dimension n >= 2");
  if (weights.dim() != n) throw PreconditionError("weight matrix dimension does not match the system");
  weights.validate();
  opts.quad.validate();
  if (opts.region.dim() != n) throw PreconditionError("plan region dimension does not match the system");
  const Vector anchor = opts.anchor.size() == 0 ? Vector::Zero(n) : opts.anchor;
  system.check_state(anchor);

  const auto states = sample_states(opts.region, opts.n_samples, opts.seed);
  const auto cls = classify(system, states);
  if (cls.kind == ContractivityClass::Kind::Indefinite) {
    const auto& [x, d] = cls.worst();
    throw IndefiniteError("field is not weakly contractive on the sampled region", x, d);
  }
  const bool traceless = cls.kind == ContractivityClass::Kind::VolumePreserving;
  std::optional<double> const_div = detect_constant_divergence(cls);
  if (traceless) const_div = 0.0;

  SplittingPlan plan{scheme, weights, anchor, opts.quad, const_div, system, {}};
  auto ctx = std::make_shared<const detail::DetracedField>(system, weights, anchor, opts.quad, const_div);

  if (!traceless) {
    const Matrix& s = weights.s;
    for (int i = 0; i < n; ++i) {
      for (int j = i; j < n; ++j) {
        const double sij = s(i, j), sji = s(j, i);
        if (i == j && sij == 0.0) continue;
        if (i != j && sij == 0.0 && sji == 0.0) continue;
        const bool single = (i == j);
        auto field = [ctx, n, i, j, sij, sji, single](const Vector& x) {
          Vector out = Vector::Zero(n);
          out[i] = sij * ctx->line_integral(i, x);
          if (!single) out[j] = sji * ctx->line_integral(j, x);
          return out;
        };
        auto jac = [ctx, n, i, j, sij, sji, single](const Vector& x) {
          const double div = divergence(ctx->system(), x);
          Matrix out = Matrix::Zero(n, n);
          out.row(i) = sij * ctx->line_integral_gradient(i, x, div).transpose();
          if (!single) out.row(j) = sji * ctx->line_integral_gradient(j, x, div).transpose();
          return out;
        };
        const std::string name = system.name() + "/S(" + std::to_string(i + 1) +
                                 (single ? "" : "," + std::to_string(j + 1)) + ")";
        plan.pieces.push_back(
            Piece{single ? std::vector<int>{i} : std::vector<int>{i, j}, PieceKind::SPiece, System(name, n, field, jac)});
      }
    }
  }

  detail::DiagonalSource src{[ctx](int i, const Vector& x) { return ctx->component(i, x); },
                             [ctx](const Vector& x) { return ctx->diagonal(x); }};
  const int checks = std::min<int>(opts.closure_checks, static_cast<int>(states.size()));
  for (int k = 0; k < checks; ++k) {
    const double closure = detail::closure_residual(src, n, anchor, opts.quad, states[k]);
    if (closure > opts.quad.tolerance)
      throw SplittingError("closure residual " + std::to_string(closure) + " exceeds tolerance at x = " +
                           contractive::detail::format_state(states[k]));
  }
  auto a_pieces = detail::tridiagonal_pieces(src, n, anchor, opts.quad, system.name());
  for (auto& p : a_pieces) plan.pieces.push_back(std::move(p));
  return plan;
}

inline SplittingPlan contractive_plan(const System& system, const std::string& scheme, const PlanOptions& opts) {
  return contractive_plan(system, weight_scheme(system.dim(), scheme), opts, scheme);
}

/// Plan from hand-derived pieces. Each piece must move one or two coordinates.
inline SplittingPlan plan_from_pieces(const System& system, std::vector<Piece> pieces) {
  for (const auto& p : pieces) {
    if (p.indices.empty() || p.indices.size() > 2) throw PreconditionError("pieces must act on one or two coordinates");
    if (p.field.dim() != system.dim()) throw PreconditionError("piece dimension does not match the system");
  }
  return SplittingPlan{"custom", std::nullopt, Vector::Zero(system.dim()), {}, std::nullopt, system, std::move(pieces)};
}

struct PieceDiagnostics {
  std::vector<int> indices;
  PieceKind kind;
  double min_divergence = 0.0;
  double max_divergence = 0.0;
  /// max |div - (s_ij + s_ji) tr F| for S-pieces, |div| for A-pieces.
  double divergence_error = 0.0;
};

struct PlanDiagnostics {
  double reconstruction_residual = 0.0;  ///< max ||sum pieces - f||_inf
  double closure_residual = 0.0;
  std::vector<PieceDiagnostics> pieces;

  double max_piece_divergence() const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& p : pieces) m = std::max(m, p.max_divergence);
    return m;
  }
};

/// Check reconstruction, per-piece divergence (5-point central differences of
/// the piece field, independent of the piece's own Jacobian) and closure.
inline PlanDiagnostics check_plan(const SplittingPlan& plan, const std::vector<Vector>& states) {
  PlanDiagnostics out;
  const int n = plan.system.dim();
  for (const auto& p : plan.pieces) {
    PieceDiagnostics d{p.indices, p.kind, std::numeric_limits<double>::infinity(),
                       -std::numeric_limits<double>::infinity(), 0.0};
    out.pieces.push_back(d);
  }
  std::optional<detail::DetracedField> ctx;
  if (plan.weights)
    ctx.emplace(plan.system, *plan.weights, plan.anchor, plan.quad, plan.constant_divergence);
  for (const auto& x : states) {
    Vector sum = Vector::Zero(n);
    const double div_f = divergence(plan.system, x);
    for (std::size_t k = 0; k < plan.pieces.size(); ++k) {
      const auto& p = plan.pieces[k];
      sum += p.field(x);
      const Matrix jac = fd_field_jacobian([&](const Vector& y) { return p.field(y); }, x, 1e-3, 4);
      const double div = jac.trace();
      auto& d = out.pieces[k];
      d.min_divergence = std::min(d.min_divergence, div);
      d.max_divergence = std::max(d.max_divergence, div);
      double expected = 0.0;
      if (p.kind == PieceKind::SPiece && plan.weights) {
        const int i = p.indices[0];
        const int j = p.indices.size() > 1 ? p.indices[1] : i;
        expected = (i == j ? plan.weights->s(i, i) : plan.weights->s(i, j) + plan.weights->s(j, i)) * div_f;
      }
      if (p.kind != PieceKind::Combined) d.divergence_error = std::max(d.divergence_error, std::abs(div - expected));
    }
    out.reconstruction_residual = std::max(out.reconstruction_residual, (sum - plan.system(x)).lpNorm<Eigen::Infinity>());
    if (ctx) {
      detail::DiagonalSource src{[&](int i, const Vector& y) { return ctx->component(i, y); },
                                 [&](const Vector& y) { return ctx->diagonal(y); }};
      out.closure_residual = std::max(out.closure_residual, detail::closure_residual(src, n, plan.anchor, plan.quad, x));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Composition

/// Substep schedule: (piece index, fraction of h).
inline std::vector<std::pair<std::size_t, double>> composition_schedule(std::size_t n_pieces, int order) {
  if (order != 1 && order != 2) throw PreconditionError("composition order must be 1 or 2");
  std::vector<std::pair<std::size_t, double>> out;
  if (n_pieces == 0) return out;
  if (order == 1 || n_pieces == 1) {
    for (std::size_t k = 0; k < n_pieces; ++k) out.emplace_back(k, 1.0);
    return out;
  }
  for (std::size_t k = 0; k + 1 < n_pieces; ++k) out.emplace_back(k, 0.5);
  out.emplace_back(n_pieces - 1, 1.0);
  for (std::size_t k = n_pieces - 1; k-- > 0;) out.emplace_back(k, 0.5);
  return out;
}

/// Require a method that is contractive in two dimensions: symplectic with b_i > 0.
inline void require_2d_contractive(const ButcherTableau& method) {
  if (!is_symplectic(method, 1e-12) || !method.positive_weights())
    throw PreconditionError("method '" + method.name() +
                            "' is not a symplectic Runge-Kutta method with positive weights");
}

/// One composed step: each piece advanced by `method` with a positive substep;
/// the Jacobian is the product of the piece Jacobians.
inline StepOutcome composed_step(const SplittingPlan& plan, const ButcherTableau& method, const Vector& x, double h,
                                 int order = 1, const SolverConfig& solver = {}) {
  detail::require_positive_step(h);
  require_2d_contractive(method);
  plan.system.check_state(x);
  const auto n = static_cast<Eigen::Index>(plan.system.dim());
  StepOutcome out;
  out.x_next = x;
  out.jacobian = Matrix::Identity(n, n);
  out.det_jacobian = 1.0;
  for (const auto& [k, frac] : composition_schedule(plan.pieces.size(), order)) {
    const auto& piece = plan.pieces[k];
    StepOutcome sub;
    try {
      sub = implicit_rk_step(method, piece.field, out.x_next, frac * h, solver);
    } catch (const Error& e) {
      throw Error("piece " + std::to_string(k) + " (" + piece.field.name() + "): " + e.what());
    }
    out.stage_states.push_back(out.x_next);
    out.x_next = sub.x_next;
    out.jacobian = sub.jacobian * out.jacobian;
    out.det_jacobian *= sub.det();
    out.newton_iters += sub.newton_iters;
  }
  return out;
}

inline StepFunction make_composed_stepper(SplittingPlan plan, ButcherTableau method, int order = 1,
                                          SolverConfig solver = {}) {
  require_2d_contractive(method);
  composition_schedule(plan.pieces.size(), order);
  auto shared = std::make_shared<const SplittingPlan>(std::move(plan));
  return [shared, method = std::move(method), order, solver](const Vector& x, double h) {
    return composed_step(*shared, method, x, h, order, solver);
  };
}

// ---------------------------------------------------------------------------
// Lorenz: exact flows of the linear part and of the (x2, x3) rotation.

struct LorenzParams {
  double sigma = 10.0;
  double rho = 28.0;
  double beta = 8.0 / 3.0;
};

namespace detail {

/// exp(t L) for L = [[-sigma, sigma, 0], [rho, -1, 0], [0, 0, -beta]].
inline Matrix lorenz_linear_flow(const LorenzParams& p, double t) {
  Matrix block(2, 2);
  block << -p.sigma, p.sigma, p.rho, -1.0;
  Matrix e2;
  if (!expm_2x2_real(block, t, e2)) e2 = expm(t * block);
  Matrix e = Matrix::Zero(3, 3);
  e.topLeftCorner(2, 2) = e2;
  e(2, 2) = std::exp(-p.beta * t);
  return e;
}

/// Flow of x1' = 0, x2' = -x1 x3, x3' = x1 x2: rotate (x2, x3) by t x1.
inline StepOutcome lorenz_rotation_flow(const Vector& x, double t) {
  const double angle = t * x[0];
  const double c = std::cos(angle), s = std::sin(angle);
  StepOutcome out;
  out.x_next.resize(3);
  out.x_next << x[0], c * x[1] - s * x[2], s * x[1] + c * x[2];
  out.jacobian.resize(3, 3);
  out.jacobian << 1.0, 0.0, 0.0,
                  -t * out.x_next[2], c, -s,
                  t * out.x_next[1], s, c;
  return out;
}

}  // namespace detail

/// Splitting step for Lorenz composed from the two exact flows. order 1:
/// rotation(h) after linear(h); order 2: linear(h/2), rotation(h), linear(h/2).
/// log|det A| = -(sigma + 1 + beta) h for every x.
inline StepOutcome lorenz_exact_split_step(const LorenzParams& p, const Vector& x, double h, int order = 2) {
  if (x.size() != 3) throw PreconditionError("Lorenz state must have length 3");
  if (!(h >= 0.0) || !std::isfinite(h)) throw PreconditionError("step size must be non-negative and finite");
  if (order != 1 && order != 2) throw PreconditionError("composition order must be 1 or 2");
  StepOutcome out;
  if (order == 1) {
    const Matrix e = detail::lorenz_linear_flow(p, h);
    const Vector y = e * x;
    auto rot = detail::lorenz_rotation_flow(y, h);
    out.x_next = rot.x_next;
    out.jacobian = rot.jacobian * e;
    out.stage_states = {y};
  } else {
    const Matrix e = detail::lorenz_linear_flow(p, 0.5 * h);
    const Vector y = e * x;
    auto rot = detail::lorenz_rotation_flow(y, h);
    out.x_next = e * rot.x_next;
    out.jacobian = e * rot.jacobian * e;
    out.stage_states = {y, rot.x_next};
  }
  return out;
}

inline StepFunction make_lorenz_exact_stepper(LorenzParams p, int order = 2) {
  if (order != 1 && order != 2) throw PreconditionError("composition order must be 1 or 2");
  return [p, order](const Vector& x, double h) { return lorenz_exact_split_step(p, x, h, order); };
}

// ---------------------------------------------------------------------------
// Explicit contractive splitting f = (f - M x) + M x.

struct SpectrumValidation {
  bool passed = false;
  Matrix m;
  /// Smallest separation between eigenvalues of dF - M over the samples; zero
  /// at a double eigenvalue, where the spectrum is about to turn complex.
  double margin = 0.0;
  /// Smallest |Re lambda| over the samples.
  double axis_gap = 0.0;
  double max_imag = 0.0;
  Vector worst_state;
  int n_samples = 0;
};

inline constexpr double kRealSpectrumTol = 1e-8;

inline void check_splitting_matrix(const Matrix& m, int n) {
  if (m.rows() != n || m.cols() != n) throw PreconditionError("M must be n x n");
  const double scale = std::max(1.0, m.norm());
  if ((m - m.transpose()).lpNorm<Eigen::Infinity>() > 1e-12 * scale) throw PreconditionError("M must be symmetric");
  if (std::abs(m.trace()) > 1e-12 * scale) throw PreconditionError("M must be traceless");
  Eigen::SelfAdjointEigenSolver<Matrix> es(m);
  const Vector ev = es.eigenvalues();
  for (Eigen::Index i = 1; i < ev.size(); ++i)
    if (ev[i] - ev[i - 1] <= 1e-12 * scale) throw PreconditionError("M must have distinct eigenvalues");
}

/// Sample dF(x) - M over the region; passes when every spectrum is real.
inline SpectrumValidation validate_real_spectrum(const System& system, const Matrix& m, const Box& region,
                                                 int n_samples, std::uint64_t seed = 99) {
  check_splitting_matrix(m, system.dim());
  if (region.dim() != system.dim()) throw PreconditionError("region dimension does not match the system");
  SpectrumValidation out;
  out.m = m;
  out.passed = true;
  out.margin = std::numeric_limits<double>::infinity();
  out.axis_gap = std::numeric_limits<double>::infinity();
  out.n_samples = n_samples;
  for (const auto& x : sample_states(region, n_samples, seed)) {
    const auto ev = eigenvalues(eval_jacobian(system, x) - m);
    double imag = 0.0, gap = std::numeric_limits<double>::infinity(), axis = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < ev.size(); ++i) {
      imag = std::max(imag, std::abs(ev[i].imag()));
      axis = std::min(axis, std::abs(ev[i].real()));
      for (std::size_t j = i + 1; j < ev.size(); ++j) gap = std::min(gap, std::abs(ev[i] - ev[j]));
    }
    if (imag > out.max_imag || out.worst_state.size() == 0) {
      out.max_imag = std::max(out.max_imag, imag);
      out.worst_state = x;
    }
    if (imag > kRealSpectrumTol) out.passed = false;
    out.margin = std::min(out.margin, gap);
    out.axis_gap = std::min(out.axis_gap, axis);
  }
  return out;
}

/// Search M = m diag(d) with d traceless and distinct, doubling m until the
/// spectrum of dF - M is real on the region.
inline SpectrumValidation find_splitting_matrix(const System& system, const Box& region, int n_samples,
                                                std::uint64_t seed = 99, double max_scale = 1e6) {
  const int n = system.dim();
  Vector d(n);
  for (int i = 0; i < n; ++i) d[i] = 0.5 * (n - 1) - i;
  d /= d.norm();
  SpectrumValidation last;
  for (double scale = 1.0; scale <= max_scale; scale *= 2.0) {
    last = validate_real_spectrum(system, Matrix(scale * d.asDiagonal()), region, n_samples, seed);
    if (last.passed && last.margin > 0.0) return last;
  }
  last.passed = false;
  return last;
}

/// Euler step of f - M x followed by the exact flow exp(h M) of M x.
inline StepOutcome explicit_contractive_step(const System& system, const SpectrumValidation& validation,
                                             const Vector& x, double h) {
  if (!validation.passed)
    throw PreconditionError("explicit contractive step requires a passed real-spectrum validation");
  check_splitting_matrix(validation.m, system.dim());
  detail::require_positive_step(h);
  const Matrix& m = validation.m;
  const auto n = static_cast<Eigen::Index>(system.dim());
  const Vector y = x + h * (system(x) - m * x);
  const Matrix euler_jac = Matrix::Identity(n, n) + h * (eval_jacobian(system, x) - m);
  const Matrix flow = expm_symmetric(h * m);
  StepOutcome out;
  out.x_next = flow * y;
  out.jacobian = flow * euler_jac;
  out.stage_states = {x, y};
  return out;
}

inline StepFunction make_explicit_split_stepper(System system, SpectrumValidation validation) {
  if (!validation.passed) throw PreconditionError("explicit contractive step requires a passed real-spectrum validation");
  return [system = std::move(system), validation = std::move(validation)](const Vector& x, double h) {
    return explicit_contractive_step(system, validation, x, h);
  };
}

// ---------------------------------------------------------------------------
// Plan manifest:
//
//   # contractive splitting plan
//   system lorenz
//   params 10 28 2.6666666666666665
//   scheme pair(1,2)
//   anchor 0 0 0
//   quadrature 32 1e-05 1e-08      (nodes, fd_step, tolerance)
//   piece S 1 2
//   piece A 1 2
//   piece A 2 3
//
// Indices are 1-based. Piece lines are optional on input; when present they
// must match the plan rebuilt from the other fields.

struct PlanManifest {
  std::string system;
  std::vector<double> params;
  std::string scheme;
  Vector anchor;
  QuadratureConfig quad;
  std::vector<std::pair<PieceKind, std::vector<int>>> pieces;
};

inline void write_manifest(std::ostream& os, const SplittingPlan& plan, const std::string& system_name,
                           const std::vector<double>& params) {
  os.precision(17);
  os << "# contractive splitting plan\n";
  os << "system " << system_name << "\n";
  os << "params";
  for (double p : params) os << " " << p;
  os << "\n";
  os << "scheme " << plan.scheme << "\n";
  os << "anchor";
  for (Eigen::Index i = 0; i < plan.anchor.size(); ++i) os << " " << plan.anchor[i];
  os << "\n";
  os << "quadrature " << plan.quad.nodes << " " << plan.quad.fd_step << " " << plan.quad.tolerance << "\n";
  for (const auto& p : plan.pieces) {
    os << "piece " << to_string(p.kind);
    for (int i : p.indices) os << " " << i + 1;
    os << "\n";
  }
}

inline PlanManifest parse_manifest(std::istream& in) {
  PlanManifest m;
  std::string line;
  int line_no = 0;
  std::vector<double> anchor;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    auto fail = [&](const std::string& msg) { return ParseError("manifest line " + std::to_string(line_no) + ": " + msg); };
    auto read_doubles = [&](std::vector<double>& out) {
      std::string tok;
      while (ls >> tok) {
        try {
          std::size_t used = 0;
          out.push_back(std::stod(tok, &used));
          if (used != tok.size()) throw fail("bad number '" + tok + "'");
        } catch (const std::logic_error&) {
          throw fail("bad number '" + tok + "'");
        }
      }
    };
    if (key == "system") {
      if (!(ls >> m.system)) throw fail("missing system name");
    } else if (key == "params") {
      read_doubles(m.params);
    } else if (key == "scheme") {
      std::getline(ls >> std::ws, m.scheme);
      while (!m.scheme.empty() && std::isspace(static_cast<unsigned char>(m.scheme.back()))) m.scheme.pop_back();
    } else if (key == "anchor") {
      read_doubles(anchor);
    } else if (key == "quadrature") {
      if (!(ls >> m.quad.nodes >> m.quad.fd_step >> m.quad.tolerance)) throw fail("quadrature needs nodes fd_step tolerance");
    } else if (key == "piece") {
      std::string kind;
      if (!(ls >> kind)) throw fail("piece needs a kind");
      PieceKind k;
      if (kind == "S") k = PieceKind::SPiece;
      else if (kind == "A") k = PieceKind::APiece;
      else if (kind == "C") k = PieceKind::Combined;
      else throw fail("unknown piece kind '" + kind + "'");
      std::vector<int> idx;
      for (int i; ls >> i;) idx.push_back(i - 1);
      if (idx.empty() || idx.size() > 2) throw fail("piece needs one or two indices");
      m.pieces.emplace_back(k, idx);
    } else {
      throw fail("unknown key '" + key + "'");
    }
  }
  if (m.system.empty()) throw ParseError("manifest: missing 'system'");
  if (m.scheme.empty()) throw ParseError("manifest: missing 'scheme'");
  m.anchor = Eigen::Map<const Vector>(anchor.data(), static_cast<Eigen::Index>(anchor.size()));
  return m;
}

/// Piece list of `plan` equals the manifest's (when the manifest lists pieces).
inline bool manifest_matches(const PlanManifest& m, const SplittingPlan& plan) {
  if (m.pieces.empty()) return true;
  if (m.pieces.size() != plan.pieces.size()) return false;
  for (std::size_t k = 0; k < m.pieces.size(); ++k)
    if (m.pieces[k].first != plan.pieces[k].kind || m.pieces[k].second != plan.pieces[k].indices) return false;
  return true;
}

}  // namespace contractive
