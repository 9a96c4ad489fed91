#pragma once

#include "contractive/errors.hpp"
#include "contractive/linalg.hpp"
#include "contractive/steppers.hpp"
#include "contractive/system.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace contractive {

/// Contraction bookkeeping along a run. Entry 0 is the initial state; the
/// per-step quantities at index k describe the step that ends at times[k].
struct TrajectoryRecord {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<double> step_logdet;
  std::vector<double> cum_logdet;
  std::vector<double> div_integral;  ///< int tr F dt over the step
  std::vector<double> ratio;         ///< step_logdet / (h tr F(mid)), NaN where undefined

  std::size_t steps() const { return times.empty() ? 0 : times.size() - 1; }

  double cumulative_div_integral() const {
    double acc = 0.0;
    for (double d : div_integral) acc += d;
    return acc;
  }

  /// Steps with |det A| > 1 + tol.
  int violations(double tol = 1e-10) const {
    int count = 0;
    for (std::size_t k = 1; k < step_logdet.size(); ++k)
      if (std::exp(step_logdet[k]) > 1.0 + tol) ++count;
    return count;
  }
};

/// Run aborted by a stepper error; carries the record up to the failure.
class RunAborted : public Error {
 public:
  RunAborted(const std::string& what, TrajectoryRecord partial) : Error(what), partial_(std::move(partial)) {}
  const TrajectoryRecord& partial() const { return partial_; }

 private:
  TrajectoryRecord partial_;
};

inline constexpr double kRatioMinDivergence = 1e-14;

namespace detail {
/// int_0^h tr F(x0 + (t/h)(x1 - x0)) dt by 3-point Gauss.
inline double step_divergence_integral(const System& system, const Vector& x0, const Vector& x1, double h) {
  static const double node = std::sqrt(0.6);
  static const std::array<std::pair<double, double>, 3> rule{{{-node, 5.0 / 9.0}, {0.0, 8.0 / 9.0}, {node, 5.0 / 9.0}}};
  double sum = 0.0;
  for (const auto& [xi, w] : rule) sum += w * divergence(system, x0 + 0.5 * (1.0 + xi) * (x1 - x0));
  return 0.5 * h * sum;
}
}  // namespace detail

/// Iterate `stepper` n_steps times from x0, accumulating log|det A|.
inline TrajectoryRecord run(const System& system, const StepFunction& stepper, const Vector& x0, double h,
                            int n_steps) {
  if (n_steps < 1) throw PreconditionError("run needs at least one step");
  detail::require_positive_step(h);
  system.check_state(x0);
  TrajectoryRecord rec;
  rec.times.push_back(0.0);
  rec.states.push_back(x0);
  rec.step_logdet.push_back(0.0);
  rec.cum_logdet.push_back(0.0);
  rec.div_integral.push_back(0.0);
  rec.ratio.push_back(std::numeric_limits<double>::quiet_NaN());
  Vector x = x0;
  double cum = 0.0;
  for (int k = 1; k <= n_steps; ++k) {
    StepOutcome step;
    double logdet = 0.0, div_int = 0.0, div_mid = 0.0;
    try {
      step = stepper(x, h);
      if (!step.x_next.allFinite()) throw EvaluationError("step produced a non-finite state", x);
      logdet = std::log(std::abs(step.det()));
      div_int = detail::step_divergence_integral(system, x, step.x_next, h);
      div_mid = divergence(system, 0.5 * (x + step.x_next));
    } catch (const Error& e) {
      throw RunAborted("run aborted at step " + std::to_string(k) + ": " + e.what(), std::move(rec));
    }
    cum += logdet;
    rec.times.push_back(k * h);
    rec.states.push_back(step.x_next);
    rec.step_logdet.push_back(logdet);
    rec.cum_logdet.push_back(cum);
    rec.div_integral.push_back(div_int);
    const double denom = h * div_mid;
    rec.ratio.push_back(std::abs(denom) > kRatioMinDivergence ? logdet / denom
                                                                : std::numeric_limits<double>::quiet_NaN());
    x = step.x_next;
  }
  return rec;
}

/// Central-difference Jacobian of a map, per-component step eps * max(1, |x_i|).
/// order 4 uses the 5-point stencil; pair it with a larger eps (about 1e-3).
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& map, const Vector& x, double eps = kFdStep,
                          int order = 2) {
  if (!(eps > 0.0)) throw PreconditionError("fd_jacobian needs eps > 0");
  return fd_field_jacobian(map, x, eps, order);
}

/// Jacobian of the step map x -> stepper(x, h).x_next by central differences.
inline Matrix fd_step_jacobian(const StepFunction& stepper, const Vector& x, double h, double eps = kFdStep,
                               int order = 2) {
  return fd_jacobian([&](const Vector& y) { return stepper(y, h).x_next; }, x, eps, order);
}

/// Largest entrywise difference relative to max(1, max |A_ij|).
inline double relative_difference(const Matrix& a, const Matrix& b) {
  return (a - b).lpNorm<Eigen::Infinity>() / std::max(1.0, a.lpNorm<Eigen::Infinity>());
}

struct RatioProfile {
  bool empty = true;
  int count = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double max_deviation = 0.0;  ///< max |ratio - 1|
};

inline RatioProfile ratio_profile(const TrajectoryRecord& rec) {
  RatioProfile p;
  double sum = 0.0;
  for (std::size_t k = 1; k < rec.ratio.size(); ++k) {
    const double r = rec.ratio[k];
    if (!std::isfinite(r)) continue;
    if (p.count == 0) p.min = p.max = r;
    p.min = std::min(p.min, r);
    p.max = std::max(p.max, r);
    p.max_deviation = std::max(p.max_deviation, std::abs(r - 1.0));
    sum += r;
    ++p.count;
  }
  p.empty = p.count == 0;
  if (!p.empty) p.mean = sum / p.count;
  return p;
}

/// CSV: t,x1..xn,step_logdet,cum_logdet,div_integral,ratio with 17 significant digits.
inline void write_csv(std::ostream& os, const TrajectoryRecord& rec) {
  const Eigen::Index n = rec.states.empty() ? 0 : rec.states.front().size();
  os << "t";
  for (Eigen::Index i = 0; i < n; ++i) os << ",x" << i + 1;
  os << ",step_logdet,cum_logdet,div_integral,ratio\n";
  std::ostringstream line;
  line << std::setprecision(17);
  for (std::size_t k = 0; k < rec.times.size(); ++k) {
    line.str("");
    line << rec.times[k];
    for (Eigen::Index i = 0; i < n; ++i) line << "," << rec.states[k][i];
    line << "," << rec.step_logdet[k] << "," << rec.cum_logdet[k] << "," << rec.div_integral[k] << ","
         << rec.ratio[k];
    os << line.str() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Compliance scans over random field families.

/// Random field with divergence level `trace` (exactly, or as the most
/// negative value for nonlinear families) and ||F|| < L. The same index gives
/// the same base field at every trace level.
using FieldFamily = std::function<System(double trace, int index)>;

struct FamilyInfo {
  std::string name;
  std::string description;
  FieldFamily generator;
  Box state_box;
};

namespace detail {
inline std::mt19937_64 family_rng(std::uint64_t seed, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

inline Matrix rot90() {
  Matrix j(2, 2);
  j << 0.0, 1.0, -1.0, 0.0;
  return j;
}
}  // namespace detail

/// Families: "linear2d" (random traceless part: saddles and centres),
/// "near-elliptic" (eigenvalues near the imaginary axis), "pendulum"
/// (nonlinear, divergence varying within [trace, trace/3]).
inline FamilyInfo field_family(const std::string& name, double lipschitz, std::uint64_t seed) {
  if (!(lipschitz > 0.0)) throw PreconditionError("family bound L must be positive");
  if (name == "linear2d") {
    auto gen = [lipschitz, seed](double trace, int index) {
      auto rng = detail::family_rng(seed, index);
      std::normal_distribution<double> normal;
      std::uniform_real_distribution<double> unit(0.1, 1.0);
      Matrix g(2, 2);
      const double p = normal(rng), q = normal(rng), w = normal(rng);
      g << p, q + w, q - w, -p;
      const double budget = lipschitz - 0.5 * std::abs(trace);
      if (!(budget > 0.0)) throw PreconditionError("trace level too large for the family bound");
      g *= 0.95 * budget * unit(rng) / operator_norm2(g);
      return builtin_systems::linear(g + 0.5 * trace * Matrix::Identity(2, 2), "linear2d-family");
    };
    return {name, "random linear 2D fields F = G + (tr/2) I, G traceless", gen, Box::cube(2, -1.0, 1.0)};
  }
  if (name == "near-elliptic") {
    auto gen = [lipschitz, seed](double trace, int index) {
      auto rng = detail::family_rng(seed, index);
      std::uniform_real_distribution<double> omega_dist(0.2, 1.0), delta_dist(0.0, 0.5), angle_dist(0.0, 2 * std::numbers::pi);
      const double budget = lipschitz - 0.5 * std::abs(trace);
      if (!(budget > 0.0)) throw PreconditionError("trace level too large for the family bound");
      const double omega = omega_dist(rng) * budget / 1.5;
      const double delta = delta_dist(rng) * omega;
      const double th = angle_dist(rng);
      Matrix sym(2, 2);
      sym << std::cos(th), std::sin(th), std::sin(th), -std::cos(th);
      const Matrix g = omega * detail::rot90() + delta * sym;
      return builtin_systems::linear(g + 0.5 * trace * Matrix::Identity(2, 2), "near-elliptic-family");
    };
    return {name, "linear 2D centres: omega J + delta S with delta < omega/2", gen, Box::cube(2, -1.0, 1.0)};
  }
  if (name == "pendulum") {
    const double y_max = std::numbers::pi;
    auto gen = [lipschitz, seed, y_max](double trace, int index) {
      auto rng = detail::family_rng(seed, index);
      std::uniform_real_distribution<double> pd(0.5, 1.5), qd(-0.5, 0.5), wd(0.5, 2.0);
      double p = pd(rng), q = qd(rng), w2 = wd(rng);
      const double damping_bound = std::abs(trace) * (1.0 + y_max / 3.0);
      const double budget = lipschitz - damping_bound;
      if (!(budget > 0.0)) throw PreconditionError("trace level too large for the family bound");
      const double scale = std::min(1.0, 0.95 * budget / (std::abs(p) + std::abs(q) + w2));
      p *= scale;
      q *= scale;
      w2 *= scale;
      auto field = [=](const Vector& x) {
        Vector v(2);
        v << p * x[1] + q * std::sin(x[1]), -w2 * std::sin(x[0]) + trace * x[1] * (2.0 + std::cos(x[0])) / 3.0;
        return v;
      };
      auto jac = [=](const Vector& x) {
        Matrix m(2, 2);
        m << 0.0, p + q * std::cos(x[1]),
             -w2 * std::cos(x[0]) - trace * x[1] * std::sin(x[0]) / 3.0, trace * (2.0 + std::cos(x[0])) / 3.0;
        return m;
      };
      return System("pendulum-family", 2, field, jac, lipschitz);
    };
    return {name, "nonlinear pendulum-like fields, tr F = trace (2 + cos x)/3", gen,
            Box{Vector::Constant(2, -y_max), Vector::Constant(2, y_max)}};
  }
  throw UnknownNameError("unknown field family '" + name + "'");
}

struct ComplianceConfig {
  std::string method = "midpoint";
  std::string family = "linear2d";
  double lipschitz = 10.0;
  std::vector<double> h_grid;
  std::vector<double> trace_levels{0.0, -1e-6, -1e-3, -1.0};
  int n_fields = 50;
  int n_states = 4;
  std::uint64_t seed = 1;
  double violation_tol = 1e-10;
};

/// 10^(k/4) for k = -32..0: 1e-8 .. 1.
inline std::vector<double> default_h_grid() {
  std::vector<double> g;
  for (int k = -32; k <= 0; ++k) g.push_back(std::pow(10.0, k / 4.0));
  return g;
}

struct ComplianceCell {
  double trace = 0.0;
  double h = 0.0;
  int violations = 0;  ///< steps with |det A| > 1 + tol
  int failures = 0;    ///< stepper errors, counted against the method
  double max_det = 0.0;
};

struct ComplianceReport {
  std::string method;
  std::string family;
  std::string family_description;
  double lipschitz = 0.0;
  std::uint64_t seed = 0;
  int n_fields = 0;
  int n_states = 0;
  std::vector<double> h_grid;
  std::vector<double> trace_levels;
  std::vector<ComplianceCell> cells;
  /// Per trace level: largest h such that it and every smaller grid h are
  /// violation-free; 0 when the smallest grid h already violates.
  std::vector<double> h_star_estimate;
  double weak_level = 0.0;
  double strong_level = 0.0;
  bool contractive = false;
};

inline ComplianceReport compliance_scan(const ComplianceConfig& cfg) {
  if (cfg.trace_levels.empty()) throw PreconditionError("compliance scan needs trace levels");
  for (double t : cfg.trace_levels)
    if (t > 0.0) throw PreconditionError("trace levels must be <= 0");
  if (cfg.n_fields < 1 || cfg.n_states < 1) throw PreconditionError("compliance scan needs fields and states");
  std::vector<double> grid = cfg.h_grid.empty() ? default_h_grid() : cfg.h_grid;
  std::sort(grid.begin(), grid.end());
  for (double h : grid)
    if (!(h > 0.0)) throw PreconditionError("h grid entries must be positive");

  const auto family = field_family(cfg.family, cfg.lipschitz, cfg.seed);
  ComplianceReport rep;
  rep.method = cfg.method;
  rep.family = cfg.family;
  rep.family_description = family.description;
  rep.lipschitz = cfg.lipschitz;
  rep.seed = cfg.seed;
  rep.n_fields = cfg.n_fields;
  rep.n_states = cfg.n_states;
  rep.h_grid = grid;
  rep.trace_levels = cfg.trace_levels;

  for (double trace : cfg.trace_levels) {
    std::vector<ComplianceCell> row(grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) row[j] = ComplianceCell{trace, grid[j], 0, 0, 0.0};
    for (int f = 0; f < cfg.n_fields; ++f) {
      const System sys = family.generator(trace, f);
      const StepFunction stepper = make_stepper(cfg.method, sys);
      std::mt19937_64 state_rng(cfg.seed * 7919 + static_cast<std::uint64_t>(f));
      std::vector<Vector> states;
      for (int s = 0; s < cfg.n_states; ++s) states.push_back(family.state_box.sample(state_rng));
      for (std::size_t j = 0; j < grid.size(); ++j) {
        for (const auto& x : states) {
          try {
            const double det = std::abs(stepper(x, grid[j]).det());
            row[j].max_det = std::max(row[j].max_det, det);
            if (!(det <= 1.0 + cfg.violation_tol)) ++row[j].violations;
          } catch (const Error&) {
            ++row[j].failures;
          }
        }
      }
    }
    double h_star = 0.0;
    for (const auto& cell : row) {
      if (cell.violations > 0 || cell.failures > 0) break;
      h_star = cell.h;
    }
    rep.h_star_estimate.push_back(h_star);
    rep.cells.insert(rep.cells.end(), row.begin(), row.end());
  }

  // Weakest nonzero level against the strongest level.
  std::size_t weak = 0, strong = 0;
  bool have_nonzero = false;
  for (std::size_t i = 0; i < cfg.trace_levels.size(); ++i) {
    const double t = cfg.trace_levels[i];
    if (t < cfg.trace_levels[strong]) strong = i;
    if (t < 0.0 && (!have_nonzero || t > cfg.trace_levels[weak])) {
      weak = i;
      have_nonzero = true;
    }
  }
  if (!have_nonzero)
    weak = static_cast<std::size_t>(std::max_element(cfg.trace_levels.begin(), cfg.trace_levels.end()) -
                                    cfg.trace_levels.begin());
  rep.weak_level = cfg.trace_levels[weak];
  rep.strong_level = cfg.trace_levels[strong];
  rep.contractive = rep.h_star_estimate[strong] > 0.0 && rep.h_star_estimate[weak] >= 0.5 * rep.h_star_estimate[strong];
  return rep;
}

/// Line-oriented text table.
inline void write_compliance_report(std::ostream& os, const ComplianceReport& rep) {
  os << std::setprecision(17);
  os << "method=" << rep.method << " family=" << rep.family << " L=" << rep.lipschitz << " seed=" << rep.seed
     << " n_fields=" << rep.n_fields << " n_states=" << rep.n_states << "\n";
  os << "# " << rep.family_description << "\n";
  os << "trace h violations failures max_det\n";
  for (const auto& c : rep.cells)
    os << c.trace << " " << c.h << " " << c.violations << " " << c.failures << " " << c.max_det << "\n";
  for (std::size_t i = 0; i < rep.trace_levels.size(); ++i)
    os << "hstar trace=" << rep.trace_levels[i] << " h=" << rep.h_star_estimate[i] << "\n";
  os << "verdict=" << (rep.contractive ? "contractive" : "not-contractive") << " weak_level=" << rep.weak_level
     << " strong_level=" << rep.strong_level << "\n";
}

}  // namespace contractive
