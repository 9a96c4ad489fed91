// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include "contractive/contractive.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace contractive;
using namespace contractive::tableaus;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void criterion(int id, const char* name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > budget_s) {
    out.pass = false;
    out.detail += " [over time budget]";
  }
  if (!out.pass) ++g_failures;
  std::printf("%s %2d %-34s %8.3fs / %5.0fs  %s\n", out.pass ? "PASS" : "FAIL", id, name, secs, budget_s,
              out.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double det2(const Matrix& m) { return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0); }

Matrix random_matrix(std::mt19937_64& rng, int n, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) m(i, j) = normal(rng);
  return m;
}

// x' = a1 sin y + a2 y + c x^2 - alpha x - gamma x^3,  y' = b1 sin x + b2 x - 2 c x y - delta y
// tr F = -alpha - 3 gamma x^2 - delta <= 0.
System nonlinear_weak_field(std::mt19937_64& rng, bool traceless) {
  std::normal_distribution<double> normal;
  const double a1 = normal(rng), a2 = normal(rng), b1 = normal(rng), b2 = normal(rng), c = 0.5 * normal(rng);
  const double alpha = traceless ? 0.0 : 0.5 * std::abs(normal(rng));
  const double gamma = traceless ? 0.0 : 0.2 * std::abs(normal(rng));
  const double delta = traceless ? 0.0 : 0.5 * std::abs(normal(rng));
  auto f = [=](const Vector& v) {
    const double x = v[0], y = v[1];
    Vector out(2);
    out << a1 * std::sin(y) + a2 * y + c * x * x - alpha * x - gamma * x * x * x,
        b1 * std::sin(x) + b2 * x - 2.0 * c * x * y - delta * y;
    return out;
  };
  auto jac = [=](const Vector& v) {
    const double x = v[0], y = v[1];
    Matrix j(2, 2);
    j << 2.0 * c * x - alpha - 3.0 * gamma * x * x, a1 * std::cos(y) + a2,
        b1 * std::cos(x) + b2 - 2.0 * c * y, -2.0 * c * x - delta;
    return j;
  };
  return System("nonlinear-weak", 2, f, jac);
}

// Power series of R(z) = 1 + z b^T (I - zA)^{-1} 1 by fixed-point iteration on
// truncated polynomials K = 1 + z A K, in exact rationals.
std::vector<Rational> series_oracle(const std::vector<std::vector<Rational>>& a, const std::vector<Rational>& b,
                                    int terms) {
  const std::size_t s = b.size();
  std::vector<std::vector<Rational>> k(s, std::vector<Rational>(terms, Rational(0)));
  for (int iter = 0; iter < terms; ++iter) {
    std::vector<std::vector<Rational>> next(s, std::vector<Rational>(terms, Rational(0)));
    for (std::size_t i = 0; i < s; ++i) {
      next[i][0] = 1;
      for (int d = 1; d < terms; ++d)
        for (std::size_t j = 0; j < s; ++j) next[i][d] += a[i][j] * k[j][d - 1];
    }
    k = next;
  }
  std::vector<Rational> r(terms, Rational(0));
  r[0] = 1;
  for (int d = 1; d < terms; ++d)
    for (std::size_t i = 0; i < s; ++i) r[d] += b[i] * k[i][d - 1];
  return r;
}

struct OracleCoeffs {
  int p = 0;
  Rational a, b;
};

OracleCoeffs order_and_coeffs(const std::vector<Rational>& r) {
  Rational fact = 1;
  std::vector<Rational> inv_fact;
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (k > 0) fact *= static_cast<int>(k);
    inv_fact.push_back(Rational(1) / fact);
  }
  std::size_t k = 0;
  while (k < r.size() && r[k] == inv_fact[k]) ++k;
  OracleCoeffs out;
  out.p = static_cast<int>(k) - 1;
  out.a = r[k] - inv_fact[k];
  out.b = r[k + 1] - inv_fact[k + 1];
  return out;
}

}  // namespace

int main() {
  std::printf("acceptance: contractive integrators\n");

  criterion(1, "euler-2d-determinant-law", 1.0, [] {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> hdist(0.0, 1.0);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
      const Matrix f = random_matrix(rng, 2);
      double h = hdist(rng);
      if (h == 0.0) h = 1.0;
      const auto out = euler_step(builtin_systems::linear(f), Vector::Zero(2), h);
      const double law = 1.0 + h * (f(0, 0) + f(1, 1)) + h * h * det2(f);
      worst = std::max(worst, std::abs(det2(out.jacobian) - law));
    }
    return Outcome{worst <= 1e-13, "max |det - law| = " + fmt("%.3g", worst)};
  });

  criterion(2, "midpoint-contraction", 30.0, [] {
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> coord(-2.0, 2.0);
    std::vector<double> hs;
    for (int k = 0; k <= 40; ++k) hs.push_back(1e-3 * std::pow(1e4, k / 40.0));
    const ButcherTableau mid = midpoint();
    double worst_excess = -1.0, worst_equality = 0.0, worst_consistency = 0.0;
    long checked = 0, skipped = 0;
    for (int field = 0; field < 500; ++field) {
      const bool linear = field < 250;
      const bool traceless = field % 2 == 0;
      System sys = nonlinear_weak_field(rng, traceless);
      if (linear) {
        Matrix f = random_matrix(rng, 2);
        const double target = traceless ? 0.0 : -std::abs(std::normal_distribution<double>()(rng));
        f.diagonal().array() += (target - f.trace()) / 2.0;
        sys = builtin_systems::linear(f);
      }
      for (int st = 0; st < 4; ++st) {
        Vector x(2);
        x << coord(rng), coord(rng);
        for (double h : hs) {
          StepOutcome out;
          try {
            out = implicit_rk_step(mid, sys, x, h);
          } catch (const ConvergenceError&) {
            ++skipped;
            continue;
          } catch (const SingularSystemError&) {
            ++skipped;
            continue;
          }
          const Matrix fbar = eval_jacobian(sys, out.stage_states[0]);
          const double d = det2(fbar) / 4.0;
          if (d < 0.0 && !(h < 1.0 / std::sqrt(-d))) continue;
          ++checked;
          // det() is formed from factor determinants; it has to agree with the
          // determinant of the returned matrix up to that matrix's conditioning.
          const double det = out.det();
          const double na = out.jacobian.norm();
          worst_consistency = std::max(worst_consistency, std::abs(det - det2(out.jacobian)) / (1.0 + na * na));
          worst_excess = std::max(worst_excess, det - 1.0);
          if (traceless) worst_equality = std::max(worst_equality, std::abs(det - 1.0));
        }
      }
    }
    std::ostringstream os;
    os << "checked=" << checked << " max(det-1)=" << fmt("%.3g", worst_excess)
       << " traceless max|det-1|=" << fmt("%.3g", worst_equality) << " solver-skips=" << skipped
       << " det consistency=" << fmt("%.2g", worst_consistency);
    return Outcome{checked > 0 && worst_excess <= 1e-12 && worst_equality <= 1e-12 && worst_consistency <= 1e-14,
                   os.str()};
  });

  criterion(3, "symplectic-rk-det-identity", 30.0, [] {
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> coord(-2.0, 2.0);
    double worst = 0.0, worst_fd = 0.0;
    for (const auto& tab : {midpoint(), gauss2()}) {
      for (const char* name : {"pendulum", "linear2d", "near-elliptic", "quadratic-drift"}) {
        const System sys = std::string(name) == "linear2d" ? builtin(name, {-0.3, 2.0, -1.5, 0.1}) : builtin(name);
        for (int st = 0; st < 100; ++st) {
          Vector x(2);
          x << coord(rng), coord(rng);
          for (double h : {1e-3, 1e-2, 1e-1}) {
            const auto out = implicit_rk_step(tab, sys, x, h);
            double rhs = 1.0;
            for (int i = 0; i < tab.stages(); ++i)
              rhs += h * tab.b()[i] * det2(out.stage_jacobians[i]) * eval_jacobian(sys, out.stage_states[i]).trace();
            worst = std::max(worst, std::abs(det2(out.jacobian) - rhs));
            if (st < 10) {
              const Matrix fd = fd_step_jacobian([&](const Vector& y, double hh) { return implicit_rk_step(tab, sys, y, hh); },
                                                 x, h, 1e-4, 4);
              worst_fd = std::max(worst_fd, relative_difference(out.jacobian, fd));
            }
          }
        }
      }
    }
    return Outcome{worst <= 1e-10 && worst_fd <= 1e-6,
                   "max residual = " + fmt("%.3g", worst) + ", A vs FD rel = " + fmt("%.3g", worst_fd)};
  });

  criterion(4, "stability-verdict-table", 1.0, [] {
    struct Case {
      ButcherTableau tab;
      LinearVerdict expected;
    };
    const std::vector<Case> cases{{rk3(), LinearVerdict::Contractive},
                                  {rk4(), LinearVerdict::NotContractive},
                                  {midpoint(), LinearVerdict::Borderline}};
    bool ok = true;
    std::ostringstream os;
    for (const auto& c : cases) {
      const auto& ex = *c.tab.exact();
      const auto oracle = order_and_coeffs(series_oracle(ex.a, ex.b, 12));
      auto rep = stability_series(c.tab, 12);
      rep.verdict = linear_verdict(rep);
      const bool match = rep.order == oracle.p && rep.exact_a && *rep.exact_a == oracle.a && rep.exact_b &&
                         *rep.exact_b == oracle.b && rep.verdict == c.expected;
      ok = ok && match;
      os << c.tab.name() << ": p=" << rep.order << " a=" << to_string(oracle.a) << " b=" << to_string(oracle.b) << " "
         << to_string(rep.verdict) << (match ? "" : " (MISMATCH)") << "; ";
    }
    // Values stated for these methods.
    const auto r3 = stability_series(rk3(), 12);
    ok = ok && r3.order == 3 && *r3.exact_a == Rational(-1, 24);
    const auto rm = stability_series(midpoint(), 12);
    ok = ok && *rm.exact_a == Rational(1, 12) && *rm.exact_b == Rational(1, 12);
    return Outcome{ok, os.str()};
  });

  criterion(5, "stability-product-scans", 5.0, [] {
    bool ok = true;
    std::ostringstream os;
    const auto mid_scan = axis_scan(midpoint(), 1.9, 2001);
    double mid_dev = 0.0;
    for (int k = 1; k <= 1900; ++k) {
      const double u = k * 1e-3;
      const auto p = axis_products(midpoint(), u);
      mid_dev = std::max({mid_dev, std::abs(p.real_axis - 1.0), std::abs(p.imag_axis - 1.0)});
    }
    ok = ok && mid_scan.passed() && mid_dev <= 1e-14;
    os << "midpoint " << (mid_scan.passed() ? "pass" : "fail") << " max|prod-1|=" << fmt("%.2g", mid_dev);

    const auto rk3_scan = axis_scan(rk3(), 1.0, 2001);
    double worst_ratio = 0.0;
    for (int k = 1; k <= 50; ++k) {
      const double u = k * 1e-3;
      const double got = axis_products(rk3(), u).real_axis - 1.0;
      worst_ratio = std::max(worst_ratio, std::abs(got / (-std::pow(u, 4) / 12.0) - 1.0));
    }
    ok = ok && rk3_scan.passed() && worst_ratio <= 0.1;
    os << "; rk3 " << (rk3_scan.passed() ? "pass" : "fail") << " ratio dev=" << fmt("%.2g", worst_ratio);

    const auto rk4_scan = axis_scan(rk4(), 1.0, 2001);
    const bool rk4_fails = rk4_scan.status == AxisScan::Status::Violated &&
                           rk4_scan.axis == AxisScan::Axis::Real && rk4_scan.failure_u && *rk4_scan.failure_u <= 1.0;
    ok = ok && rk4_fails;
    os << "; rk4 " << (rk4_fails ? "fails at u=" + fmt("%.4g", *rk4_scan.failure_u) : std::string("did not fail"));
    return Outcome{ok, os.str()};
  });

  criterion(6, "trace-square-identity-and-logdet", 5.0, [] {
    std::mt19937_64 rng(606);
    std::uniform_int_distribution<int> dim(1, 6);
    double worst_id = 0.0, worst_lib = 0.0;
    for (int k = 0; k < 1000; ++k) {
      const int n = dim(rng);
      const Matrix f = random_matrix(rng, n);
      double tr2 = 0.0, s2 = 0.0, a2 = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          tr2 += f(i, j) * f(j, i);
          s2 += std::pow(0.5 * (f(i, j) + f(j, i)), 2);
          a2 += std::pow(0.5 * (f(i, j) - f(j, i)), 2);
        }
      const auto t = euler_trace_square_test(f);
      worst_id = std::max(worst_id, std::abs(t.trace_f2 - (t.symmetric_norm2 - t.antisymmetric_norm2)));
      worst_lib = std::max({worst_lib, std::abs(t.trace_f2 - tr2), std::abs(t.frobenius_gap - (s2 - a2))});
    }
    // Order from the last halving pair, with h scaled so that ||hF|| runs
    // from 0.05 down to 0.05/128.
    double min_order = 1e9;
    for (int k = 0; k < 50; ++k) {
      const Matrix f = random_matrix(rng, 2 + k % 5);
      const double scale = operator_norm2(f);
      double prev = -1.0, order = 0.0;
      for (int j = 0; j < 8; ++j) {
        const double h = 0.05 / std::pow(2.0, j) / scale;
        const auto e = euler_logdet_expansion(f, h);
        const double direct = std::log(std::abs((Matrix::Identity(f.rows(), f.cols()) + h * f).determinant()));
        worst_lib = std::max(worst_lib, std::abs(e.exact - direct));
        const double err = std::abs(e.exact - e.second_order);
        if (prev > 0.0) order = std::log2(prev / err);
        prev = err;
      }
      min_order = std::min(min_order, order);
    }
    return Outcome{worst_id <= 1e-10 && worst_lib <= 1e-10 && min_order >= 2.7,
                   "identity err=" + fmt("%.2g", worst_id) + " oracle err=" + fmt("%.2g", worst_lib) +
                       " min observed order=" + fmt("%.3f", min_order)};
  });

  criterion(7, "lorenz-exact-split-logdet", 10.0, [] {
    const LorenzParams p;
    const double rate = -(p.sigma + 1.0 + p.beta);
    const auto stepper = make_lorenz_exact_stepper(p, 2);
    double worst_fd = 0.0, worst_prop = 0.0;
    for (const auto& x : sample_states(Box::cube(3, -20.0, 20.0), 100, 707)) {
      for (double h : {1e-3, 1e-2, 1e-1}) {
        const Matrix fd = fd_step_jacobian(stepper, x, h, 1e-3, 4);
        worst_fd = std::max(worst_fd, std::abs(std::log(std::abs(fd.determinant())) - rate * h));
        worst_prop = std::max(worst_prop, std::abs(log_abs_det(stepper(x, h).jacobian) - rate * h));
      }
    }
    Vector x0(3);
    x0 << 1.0, 1.0, 1.0;
    const auto rec = run(builtin_systems::lorenz(), stepper, x0, 0.01, 1000);
    const double target = -410.0 / 3.0;
    const double rel = std::abs(rec.cum_logdet.back() - target) / std::abs(target);
    return Outcome{worst_fd <= 1e-10 && worst_prop <= 1e-10 && rel <= 1e-6,
                   "FD max err=" + fmt("%.2g", worst_fd) + " propagated max err=" + fmt("%.2g", worst_prop) +
                       " cumulative rel err=" + fmt("%.2g", rel)};
  });

  criterion(8, "lorenz-splitting-reconstruction", 60.0, [] {
    const System lor = builtin_systems::lorenz();
    const Box box = Box::cube(3, -20.0, 20.0);
    const auto states = sample_states(box, 100, 808);
    auto lorenz_rhs = [](const Vector& v) {
      Vector out(3);
      out << 10.0 * (v[1] - v[0]), v[0] * (28.0 - v[2]) - v[1], v[0] * v[1] - 8.0 / 3.0 * v[2];
      return out;
    };
    bool ok = true;
    std::ostringstream os;
    for (const char* scheme : {"pair(1,2)", "diag-1overn"}) {
      PlanOptions opts;
      opts.region = box;
      const auto plan = contractive_plan(lor, scheme, opts);
      double recon = 0.0, max_div = -1e300;
      for (const auto& x : states) {
        Vector sum = Vector::Zero(3);
        for (const auto& piece : plan.pieces) {
          sum += piece.field(x);
          const Matrix j = fd_field_jacobian([&](const Vector& y) { return piece.field(y); }, x, 1e-3, 4);
          max_div = std::max(max_div, j.trace());
        }
        recon = std::max(recon, (sum - lorenz_rhs(x)).lpNorm<Eigen::Infinity>());
      }
      const auto diag = check_plan(plan, states);
      Vector x0(3);
      x0 << 1.0, 1.0, 1.0;
      const auto rec = run(lor, make_composed_stepper(plan, midpoint(), 2), x0, 0.01, 1000);
      double max_det = 0.0;
      for (std::size_t k = 1; k < rec.step_logdet.size(); ++k) max_det = std::max(max_det, std::exp(rec.step_logdet[k]));
      const bool pass = recon <= 1e-8 && max_div <= 1e-8 && diag.reconstruction_residual <= 1e-8 &&
                        diag.max_piece_divergence() <= 1e-8 && max_det <= 1.0 + 1e-8;
      ok = ok && pass;
      os << scheme << ": pieces=" << plan.pieces.size() << " recon=" << fmt("%.2g", recon)
         << " max div=" << fmt("%.2g", max_div) << " max|det A|=" << fmt("%.6f", max_det) << "; ";
    }
    return Outcome{ok, os.str()};
  });

  criterion(9, "step-size-compliance-contrast", 120.0, [] {
    auto scan = [](const std::string& method, const std::string& family) {
      ComplianceConfig cfg;
      cfg.method = method;
      cfg.family = family;
      cfg.seed = 909;
      return compliance_scan(cfg);
    };
    auto level_h = [](const ComplianceReport& r, double level) {
      for (std::size_t i = 0; i < r.trace_levels.size(); ++i)
        if (r.trace_levels[i] == level) return r.h_star_estimate[i];
      return std::nan("");
    };
    const auto mid = scan("midpoint", "linear2d");
    const auto g2 = scan("gauss2", "linear2d");
    const auto eu = scan("euler", "near-elliptic");
    const auto ratio_ok = [&](const ComplianceReport& r) {
      return r.contractive && level_h(r, -1.0) > 0.0 && level_h(r, -1e-6) >= 0.5 * level_h(r, -1.0);
    };
    const bool ok = ratio_ok(mid) && ratio_ok(g2) && level_h(eu, -1e-6) <= 1e-4;
    std::ostringstream os;
    os << "midpoint h*(-1e-6)=" << fmt("%.3g", level_h(mid, -1e-6)) << " h*(-1)=" << fmt("%.3g", level_h(mid, -1.0))
       << "; gauss2 h*(-1e-6)=" << fmt("%.3g", level_h(g2, -1e-6)) << " h*(-1)=" << fmt("%.3g", level_h(g2, -1.0))
       << "; euler near-elliptic h*(-1e-6)=" << fmt("%.3g", level_h(eu, -1e-6));
    return Outcome{ok, os.str()};
  });

  criterion(10, "explicit-contractive-step", 10.0, [] {
    Matrix f(2, 2);
    f << -1.0, 5.0, -5.0, -1.0;
    const System spiral = builtin_systems::linear(f, "spiral");
    Matrix m(2, 2);
    m << 6.0, 0.0, 0.0, -6.0;
    const auto val = validate_real_spectrum(spiral, m, Box::cube(2, -1.0, 1.0), 256);
    if (!val.passed) return Outcome{false, "real-spectrum validation failed"};
    const auto stepper = make_explicit_split_stepper(spiral, val);
    const auto states = sample_states(Box::cube(2, -1.0, 1.0), 20, 1010);
    double h_star = 0.0, worst_fd = 0.0;
    for (int k = 1; k <= 1000; ++k) {
      const double h = 1e-3 * k;
      bool ok = true;
      for (const auto& x : states) {
        const auto out = stepper(x, h);
        const Matrix fd = fd_step_jacobian(stepper, x, h, 1e-4, 4);
        worst_fd = std::max(worst_fd, relative_difference(out.jacobian, fd));
        if (std::abs(det2(out.jacobian)) > 1.0 + 1e-10) ok = false;
      }
      if (!ok) break;
      h_star = h;
    }
    // det(I + h(F - M)) det(exp(hM)) = 1 - 2h - 10h^2 crosses -1 here.
    const double closed = (-2.0 + std::sqrt(84.0)) / 20.0;
    return Outcome{h_star > 0.01 && worst_fd <= 1e-6,
                   "validated margin=" + fmt("%.3g", val.margin) + " empirical h*=" + fmt("%.3f", h_star) +
                       " (closed form " + fmt("%.4f", closed) + ") A vs FD rel=" + fmt("%.2g", worst_fd)};
  });

  std::printf("%s: %d criteria failed\n", g_failures ? "FAILED" : "OK", g_failures);
  return g_failures == 0 ? 0 : 1;
}
