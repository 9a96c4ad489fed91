#pragma once

// Command implementations behind the `contractive` executable. Kept in the
// library so tests can drive them without spawning processes.

#include "contractive/contractive.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace contractive::cli {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// Flat "key = value" lines; '#' starts a comment.
inline KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError("config line " + std::to_string(line_no) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file '" + path + "'");
  return parse_key_values(in);
}

inline double parse_number(const std::string& token) {
  if (auto r = parse_rational(token)) return to_double(*r);
  try {
    std::size_t used = 0;
    const double v = std::stod(token, &used);
    if (used == token.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw ParseError("bad number '" + token + "'");
}

/// Comma- or space-separated numbers; "8/3" style fractions allowed.
inline std::vector<double> parse_list(const std::string& text) {
  std::string s = text;
  for (char& ch : s)
    if (ch == ',' || ch == ';') ch = ' ';
  std::istringstream in(s);
  std::vector<double> out;
  for (std::string tok; in >> tok;) out.push_back(parse_number(tok));
  return out;
}

inline int parse_int(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(text, &used);
    if (used == text.size()) return static_cast<int>(v);
  } catch (const std::logic_error&) {
  }
  throw ParseError("bad integer for " + what + ": '" + text + "'");
}

/// "lo,hi" (a cube) or "lo1,hi1,lo2,hi2,..." (per coordinate).
inline Box parse_region(const std::string& text, int dim) {
  const auto v = parse_list(text);
  if (v.size() == 2) return Box::cube(dim, v[0], v[1]);
  if (v.size() == static_cast<std::size_t>(2 * dim)) {
    Box b{Vector(dim), Vector(dim)};
    for (int i = 0; i < dim; ++i) {
      b.lo[i] = v[2 * i];
      b.hi[i] = v[2 * i + 1];
    }
    if (!b.valid()) throw ParseError("region has lo > hi");
    return b;
  }
  throw ParseError("region needs 2 or 2n numbers");
}

inline std::string get(const KeyValues& kv, const std::string& key, const std::string& fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : it->second;
}

inline std::string require(const KeyValues& kv, const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end() || it->second.empty()) throw ParseError("missing required setting '" + key + "'");
  return it->second;
}

inline std::uint64_t parse_seed(const std::string& text) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used == text.size()) return v;
  } catch (const std::logic_error&) {
  }
  throw ParseError("bad seed '" + text + "'");
}

// ---------------------------------------------------------------------------
// integrate

struct RunConfig {
  std::string system = "lorenz";
  std::vector<double> params;
  /// euler | midpoint | gauss1 | gauss2 | rk3 | rk4 | heun
  /// | split:<scheme>:<method2d>:<order> | lorenz-exact:<order>
  /// | explicit-split:<M row-major> | explicit-split:auto
  std::string method = "midpoint";
  double h = 0.01;
  int n_steps = 100;
  Vector x0;
  std::uint64_t seed = 1;
  std::string region = "-10,10";
  std::string output;
};

inline RunConfig make_run_config(const KeyValues& kv) {
  RunConfig c;
  c.system = get(kv, "system", c.system);
  c.params = parse_list(get(kv, "params", ""));
  c.method = get(kv, "method", c.method);
  c.h = parse_number(get(kv, "h", "0.01"));
  c.n_steps = parse_int(get(kv, "steps", "100"), "steps");
  const auto x0 = parse_list(require(kv, "x0"));
  c.x0 = Eigen::Map<const Vector>(x0.data(), static_cast<Eigen::Index>(x0.size()));
  c.seed = parse_seed(get(kv, "seed", "1"));
  c.region = get(kv, "region", c.region);
  c.output = get(kv, "output", "");
  if (!(c.h > 0.0)) throw ParseError("h must be positive");
  if (c.n_steps < 1) throw ParseError("steps must be at least 1");
  return c;
}

inline std::vector<std::string> split_colon(const std::string& s) {
  std::vector<std::string> parts;
  std::size_t start = 0, depth = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '(') ++depth;
    if (s[i] == ')' && depth > 0) --depth;
    if (s[i] == ':' && depth == 0) {
      parts.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  parts.push_back(s.substr(start));
  return parts;
}

/// Stepper for the configured method.
inline StepFunction make_method(const RunConfig& c, const System& system) {
  const auto parts = split_colon(c.method);
  const std::string& kind = parts[0];
  if (kind == "split") {
    if (parts.size() < 2 || parts.size() > 4)
      throw ParseError("split method is split:<scheme>[:<method2d>[:<order>]]");
    const std::string method2d = parts.size() > 2 ? parts[2] : "midpoint";
    const int order = parts.size() > 3 ? parse_int(parts[3], "split order") : 2;
    PlanOptions opts;
    opts.region = parse_region(c.region, system.dim());
    opts.seed = c.seed;
    return make_composed_stepper(contractive_plan(system, parts[1], opts), tableau_registry(method2d), order);
  }
  if (kind == "lorenz-exact") {
    if (system.name() != "lorenz") throw ParseError("lorenz-exact requires the lorenz system");
    LorenzParams p;
    if (c.params.size() == 3) p = {c.params[0], c.params[1], c.params[2]};
    const int order = parts.size() > 1 ? parse_int(parts[1], "lorenz-exact order") : 2;
    return make_lorenz_exact_stepper(p, order);
  }
  if (kind == "explicit-split") {
    if (parts.size() != 2) throw ParseError("explicit-split needs M entries or 'auto'");
    const Box region = parse_region(c.region, system.dim());
    SpectrumValidation v;
    if (parts[1] == "auto") {
      v = find_splitting_matrix(system, region, 256, c.seed);
    } else {
      const auto entries = parse_list(parts[1]);
      const auto n = static_cast<std::size_t>(system.dim());
      if (entries.size() != n * n) throw ParseError("explicit-split M needs n*n entries");
      Matrix m(system.dim(), system.dim());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m(i, j) = entries[i * n + j];
      v = validate_real_spectrum(system, m, region, 256, c.seed);
    }
    if (!v.passed)
      throw Error("real-spectrum validation failed for explicit-split (max |Im| = " + std::to_string(v.max_imag) + ")");
    return make_explicit_split_stepper(system, v);
  }
  if (parts.size() != 1) throw ParseError("unknown method '" + c.method + "'");
  return make_stepper(kind, system);
}

inline std::string default_output_path(const RunConfig& c) {
  const char* dir = std::getenv("CONTRACTIVE_OUTPUT_DIR");
  std::string method = c.method;
  for (char& ch : method)
    if (ch == ':' || ch == '(' || ch == ')' || ch == ',' || ch == ' ') ch = '_';
  return (std::filesystem::path(dir && *dir ? dir : ".") / (c.system + "_" + method + ".csv")).string();
}

/// Run and write the CSV. The record is written to "<output>.partial" and
/// renamed on success; a failed run leaves the partial file behind.
inline int cmd_integrate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  std::optional<System> system;
  StepFunction stepper;
  try {
    system = builtin(c.system, c.params);
    system->check_state(c.x0);
    stepper = make_method(c, *system);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  const std::string path = c.output.empty() ? default_output_path(c) : c.output;
  const std::string partial = path + ".partial";
  auto write = [&](const TrajectoryRecord& rec) {
    std::ofstream f(partial, std::ios::trunc);
    if (!f) throw Error("cannot open '" + partial + "' for writing");
    write_csv(f, rec);
    if (!f) throw Error("write to '" + partial + "' failed");
  };
  try {
    const auto rec = run(*system, stepper, c.x0, c.h, c.n_steps);
    write(rec);
    std::filesystem::rename(partial, path);
    out << std::setprecision(17) << "summary steps=" << rec.steps() << " t=" << rec.times.back()
        << " cum_logdet=" << rec.cum_logdet.back() << " div_integral=" << rec.cumulative_div_integral()
        << " violations=" << rec.violations() << " output=" << path << "\n";
    return 0;
  } catch (const RunAborted& e) {
    try {
      write(e.partial());
    } catch (const Error&) {
    }
    err << "error: " << e.what() << " (partial record in " << partial << ")\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// analyze-tableau

inline std::string format_coeff(const std::optional<Rational>& exact, double value) {
  if (exact) return to_string(*exact);
  std::ostringstream os;
  os << std::setprecision(17) << value;
  return os.str();
}

inline ButcherTableau resolve_tableau(const std::string& name_or_file) {
  try {
    return tableau_registry(name_or_file);
  } catch (const UnknownNameError&) {
  }
  std::ifstream in(name_or_file);
  if (!in) throw UnknownNameError("'" + name_or_file + "' is neither a registry tableau nor a readable file");
  return parse_tableau(in, std::filesystem::path(name_or_file).stem().string());
}

/// One line per tableau:
///   tableau=<name> stages=<s> p=<order> a=<coeff> b=<coeff> symplectic=<bool>
///   positive_weights=<bool> verdict=<Contractive|NotContractive|Borderline>
///   axis_scan=<pass|violated|pole> ustar=<u*> first_violation=<u|none> umax=<u_max>
inline std::string analyze_tableau_line(const ButcherTableau& t, double u_max, int n_samples) {
  auto rep = stability_series(t, 16);
  rep.verdict = linear_verdict(rep);
  const auto scan = axis_scan(t, u_max, n_samples);
  if (scan.passed()) rep.axis_ustar = scan.u_star;
  std::ostringstream os;
  os << std::setprecision(17);
  os << "tableau=" << t.name() << " stages=" << t.stages() << " p=" << rep.order
     << " a=" << format_coeff(rep.exact_a, rep.coeff_a) << " b=" << format_coeff(rep.exact_b, rep.coeff_b)
     << " symplectic=" << (is_symplectic(t, 1e-14) ? "true" : "false")
     << " positive_weights=" << (t.positive_weights() ? "true" : "false")
     << " verdict=" << to_string(rep.verdict) << " axis_scan="
     << (scan.status == AxisScan::Status::Passed ? "pass"
         : scan.status == AxisScan::Status::Violated ? "violated"
                                                       : "pole")
     << " ustar=" << scan.u_star << " first_violation=";
  if (scan.failure_u)
    os << *scan.failure_u;
  else
    os << "none";
  os << " umax=" << u_max;
  return os.str();
}

inline int cmd_analyze_tableau(const std::vector<std::string>& names, double u_max, int n_samples, std::ostream& out,
                               std::ostream& err) {
  std::vector<std::string> list = names;
  if (list.empty() || (list.size() == 1 && list[0] == "all")) list = tableau_names();
  int status = 0;
  for (const auto& name : list) {
    try {
      out << analyze_tableau_line(resolve_tableau(name), u_max, n_samples) << "\n";
    } catch (const Error& e) {
      err << "error: " << name << ": " << e.what() << "\n";
      status = 2;
    }
  }
  return status;
}

// ---------------------------------------------------------------------------
// split-check

struct SplitCheckConfig {
  std::string system = "lorenz";
  std::vector<double> params;
  std::string scheme = "pair(1,2)";
  std::string region = "-20,20";
  std::vector<double> anchor;
  QuadratureConfig quad;
  int samples = 100;
  std::uint64_t seed = 1;
  std::string manifest;        ///< read system/scheme/anchor/quadrature from here
  std::string write_manifest;  ///< write the built plan here
};

inline SplitCheckConfig make_split_check_config(const KeyValues& kv) {
  SplitCheckConfig c;
  c.system = get(kv, "system", c.system);
  c.params = parse_list(get(kv, "params", ""));
  c.scheme = get(kv, "scheme", c.scheme);
  c.region = get(kv, "region", c.region);
  c.anchor = parse_list(get(kv, "anchor", ""));
  c.quad.nodes = parse_int(get(kv, "nodes", "32"), "nodes");
  c.quad.tolerance = parse_number(get(kv, "tolerance", "1e-8"));
  c.quad.fd_step = parse_number(get(kv, "fd-step", "1e-5"));
  c.samples = parse_int(get(kv, "samples", "100"), "samples");
  c.seed = parse_seed(get(kv, "seed", "1"));
  c.manifest = get(kv, "manifest", "");
  c.write_manifest = get(kv, "write-manifest", "");
  return c;
}

inline int cmd_split_check(SplitCheckConfig c, std::ostream& out, std::ostream& err) {
  std::optional<PlanManifest> manifest;
  try {
    if (!c.manifest.empty()) {
      std::ifstream in(c.manifest);
      if (!in) throw ParseError("cannot open manifest '" + c.manifest + "'");
      manifest = parse_manifest(in);
      c.system = manifest->system;
      c.params = manifest->params;
      c.scheme = manifest->scheme;
      c.anchor.assign(manifest->anchor.data(), manifest->anchor.data() + manifest->anchor.size());
      c.quad = manifest->quad;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  try {
    const System system = builtin(c.system, c.params);
    PlanOptions opts;
    opts.region = parse_region(c.region, system.dim());
    opts.quad = c.quad;
    opts.seed = c.seed;
    if (!c.anchor.empty()) opts.anchor = Eigen::Map<const Vector>(c.anchor.data(), static_cast<Eigen::Index>(c.anchor.size()));
    const SplittingPlan plan = contractive_plan(system, c.scheme, opts);
    if (manifest && !manifest_matches(*manifest, plan)) {
      err << "error: manifest piece list does not match the rebuilt plan\n";
      return 1;
    }
    if (!c.write_manifest.empty()) {
      std::ofstream f(c.write_manifest);
      if (!f) throw Error("cannot write manifest '" + c.write_manifest + "'");
      write_manifest(f, plan, c.system, c.params);
    }
    const auto diag = check_plan(plan, sample_states(opts.region, c.samples, c.seed + 1));
    out << std::setprecision(6);
    out << "system=" << c.system << " scheme=" << c.scheme << " pieces=" << plan.pieces.size()
        << " constant_divergence=" << (plan.constant_divergence ? "true" : "false") << "\n";
    for (const auto& p : diag.pieces) {
      out << "piece kind=" << to_string(p.kind) << " indices=";
      for (std::size_t k = 0; k < p.indices.size(); ++k) out << (k ? "," : "") << p.indices[k] + 1;
      out << " div_min=" << p.min_divergence << " div_max=" << p.max_divergence << " div_error=" << p.divergence_error
          << "\n";
    }
    const double tol = c.quad.tolerance;
    bool ok = diag.reconstruction_residual <= tol && diag.closure_residual <= tol && diag.max_piece_divergence() <= tol;
    for (const auto& p : diag.pieces) ok = ok && p.divergence_error <= tol;
    out << "reconstruction_residual=" << diag.reconstruction_residual << "\n";
    out << "closure_residual=" << diag.closure_residual << "\n";
    out << "max_piece_divergence=" << diag.max_piece_divergence() << "\n";
    out << "status=" << (ok ? "ok" : "failed") << "\n";
    return ok ? 0 : 1;
  } catch (const IndefiniteError& e) {
    out << "status=refused\n";
    err << "refused: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// compliance-scan

inline ComplianceConfig make_compliance_config(const KeyValues& kv) {
  ComplianceConfig c;
  c.method = get(kv, "method", c.method);
  c.family = get(kv, "family", c.family);
  c.lipschitz = parse_number(get(kv, "L", "10"));
  c.h_grid = parse_list(get(kv, "h-grid", ""));
  if (auto it = kv.find("trace-levels"); it != kv.end()) c.trace_levels = parse_list(it->second);
  c.n_fields = parse_int(get(kv, "fields", "50"), "fields");
  c.n_states = parse_int(get(kv, "states", "4"), "states");
  c.seed = parse_seed(get(kv, "seed", "1"));
  return c;
}

inline int cmd_compliance_scan(const ComplianceConfig& c, const std::string& output, std::ostream& out,
                               std::ostream& err) {
  try {
    const auto rep = compliance_scan(c);
    if (output.empty()) {
      write_compliance_report(out, rep);
    } else {
      const std::string partial = output + ".partial";
      {
        std::ofstream f(partial, std::ios::trunc);
        if (!f) throw Error("cannot open '" + partial + "' for writing");
        write_compliance_report(f, rep);
      }
      std::filesystem::rename(partial, output);
      out << "verdict=" << (rep.contractive ? "contractive" : "not-contractive") << " output=" << output << "\n";
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace contractive::cli
