#include "contractive/cli.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace {

using contractive::cli::KeyValues;

struct Settings {
  std::string config;
  KeyValues flags;

  // File values first, then anything given on the command line.
  KeyValues merged() const {
    KeyValues kv = config.empty() ? KeyValues{} : contractive::cli::load_key_values(config);
    for (const auto& [k, v] : flags) kv[k] = v;
    return kv;
  }
};

void setting(CLI::App* app, Settings& s, const std::string& key, const std::string& help) {
  app->add_option_function<std::string>("--" + key, [&s, key](const std::string& v) { s.flags[key] = v; }, help);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contractive: volume-contracting ODE integrators and diagnostics"};
  app.require_subcommand(1);

  Settings integrate_s;
  auto* integrate = app.add_subcommand("integrate", "integrate a builtin system and write a CSV record");
  integrate->set_help_flag("--help", "print this help and exit");  // frees -h for the step size
  integrate->add_option("--config", integrate_s.config, "flat key = value file; flags override it")->check(CLI::ExistingFile);
  setting(integrate, integrate_s, "system", "builtin system name");
  setting(integrate, integrate_s, "params", "system parameters, comma separated");
  setting(integrate, integrate_s, "method", "euler|midpoint|gauss1|gauss2|rk3|rk4|heun|split:...|lorenz-exact:k|explicit-split:...");
  setting(integrate, integrate_s, "h", "step size");
  setting(integrate, integrate_s, "steps", "number of steps");
  setting(integrate, integrate_s, "x0", "initial state, comma separated");
  setting(integrate, integrate_s, "seed", "seed for sampling during plan construction");
  setting(integrate, integrate_s, "region", "sampling region, lo,hi or per-coordinate pairs");
  setting(integrate, integrate_s, "output", "CSV path (default: $CONTRACTIVE_OUTPUT_DIR/<system>_<method>.csv)");

  std::vector<std::string> tableaus;
  double u_max = 1.9;
  int scan_samples = 2001;
  auto* analyze = app.add_subcommand("analyze-tableau", "stability series and contractivity checks for tableaus");
  analyze->add_option("tableaus", tableaus, "registry names or tableau files (default: all)");
  analyze->add_option("--umax", u_max, "upper end of the |R| scan on the real and imaginary axes")->check(CLI::PositiveNumber);
  analyze->add_option("--samples", scan_samples, "grid points for the scan")->check(CLI::Range(2, 10000000));

  Settings split_s;
  auto* split = app.add_subcommand("split-check", "build a divergence-free splitting and report its residuals");
  split->add_option("--config", split_s.config, "flat key = value file; flags override it")->check(CLI::ExistingFile);
  for (const char* key : {"system", "params", "scheme", "region", "anchor", "nodes", "tolerance", "fd-step", "samples",
                          "seed", "manifest", "write-manifest"})
    setting(split, split_s, key, "");

  Settings scan_s;
  std::string scan_output;
  auto* scan = app.add_subcommand("compliance-scan", "empirical contractivity step-size scan over a field family");
  scan->add_option("--config", scan_s.config, "flat key = value file; flags override it")->check(CLI::ExistingFile);
  for (const char* key : {"method", "family", "L", "h-grid", "trace-levels", "fields", "states", "seed"})
    setting(scan, scan_s, key, "");
  scan->add_option("--output", scan_output, "report path (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*integrate) return contractive::cli::cmd_integrate(contractive::cli::make_run_config(integrate_s.merged()), std::cout, std::cerr);
    if (*analyze) return contractive::cli::cmd_analyze_tableau(tableaus, u_max, scan_samples, std::cout, std::cerr);
    if (*split) return contractive::cli::cmd_split_check(contractive::cli::make_split_check_config(split_s.merged()), std::cout, std::cerr);
    if (*scan) return contractive::cli::cmd_compliance_scan(contractive::cli::make_compliance_config(scan_s.merged()), scan_output, std::cout, std::cerr);
  } catch (const contractive::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
