#include "moistsw/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>

#include "moistsw/experiments.hpp"
#include "moistsw/output.hpp"

namespace moistsw {

namespace {

struct Options {
  std::string case_name;
  Index nx = 0;
  Index ny = 0;
  double dt = 0;
  double days = 5;
  std::string placement = "final";
  double beta = 1.0;
  std::string solver;
  std::vector<double> dts{800, 400, 200, 100};
  double ref_dt = 50;
  std::string out = "out";
};

SIQNConfig siqn_config(const Options& o) {
  SIQNConfig c = PlacementChoice{parse_placement(o.placement), o.beta}.config(SIQNConfig{});
  if (!o.solver.empty()) c.solver = parse_solver(o.solver);
  c.validate();
  return c;
}

TestCaseSpec case_spec(const Options& o, TestCase fallback, Index default_nx) {
  const TestCase c = o.case_name.empty() ? fallback : parse_test_case(o.case_name);
  const Index nx = o.nx ? o.nx : default_nx;
  TestCaseSpec s = c == TestCase::SteadyJet ? TestCaseSpec::steady_jet(nx) : TestCaseSpec::gravity_wave(nx);
  if (o.ny) s.ny = o.ny;
  s.grid();  // rejects undersized grids before any work is done
  return s;
}

double end_time(const Options& o) {
  if (!(o.days > 0)) throw ConfigurationError("--days must be positive");
  return o.days * 86400.0;
}

void print_errors(std::ostream& out, const std::string& title, const std::map<std::string, double>& e) {
  out << title << '\n';
  for (const auto& [field, v] : e) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "  %-4s %.6e\n", field.c_str(), v);
    out << buf;
  }
}

void warn_courant(std::ostream& err, const std::string& what, const RunStats& s) {
  if (s.courant_violations > 0) {
    err << "warning: " << what << ": advective Courant number above 1 in " << s.courant_violations
        << " steps (max " << s.max_courant << ")\n";
  }
}

void print_table(std::ostream& out, std::ostream& err, const ConvergenceTable& t) {
  for (const auto& r : t.runs) warn_courant(err, r.placement + " dt=" + std::to_string(r.dt), r.stats);
  char buf[160];
  out << "placement            formulation  nx    dt          field  l2_error\n";
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof buf, "%-20s %-12s %-5ld %-11g %-6s %.6e\n", r.placement.c_str(),
                  r.formulation.c_str(), static_cast<long>(r.nx), r.dt, r.field.c_str(), r.l2_error);
    out << buf;
  }
  out << "slopes (least squares)\n";
  for (const auto& s : t.slopes) {
    std::snprintf(buf, sizeof buf, "  %-20s %-12s %-6s %.3f\n", s.placement.c_str(), s.formulation.c_str(),
                  s.field.c_str(), s.slope);
    out << buf;
  }
}

int cmd_run(const Options& o, std::ostream& out, std::ostream& err) {
  const TestCaseSpec spec = case_spec(o, TestCase::SteadyJet, 100);
  const SIQNConfig cfg = siqn_config(o);
  const double dt = o.dt > 0 ? o.dt : 400.0;
  const double t_end = end_time(o);
  steps_for(t_end, dt);
  const InitialPair init = initialize(spec);

  CaseRun split_run{Formulation::Split, cfg, dt, t_end};
  CaseRun integ_run{Formulation::Integrated, SIQNConfig{}, dt, t_end};
  const CaseResult split = run_case(spec, init, split_run);
  const CaseResult integ = run_case(spec, init, integ_run);
  warn_courant(err, "split run", split.stats);
  warn_courant(err, "integrated run", integ.stats);
  const auto cross = split_vs_integrated(split.final_state, integ.final_state, spec.model());

  nlohmann::json cross_json = nlohmann::json::object();
  for (const auto& [k, v] : cross) cross_json[k] = v;
  const std::string label = PlacementChoice{cfg.placement, cfg.beta}.label();
  const auto split_dir = run_directory(o.out, spec.kind, label, dt);
  const auto integ_dir = run_directory(o.out, spec.kind, "integrated", dt);
  write_run(split_dir, spec, split_run, split, {{"errors_vs_integrated", cross_json}});
  write_run(integ_dir, spec, integ_run, integ);

  print_errors(out, "split (" + label + ") vs integrated after " + std::to_string(t_end) + " s:", cross);
  print_errors(out, "split drift from initial state:", errors_vs(split.final_state, split.initial));
  out << "wrote " << split_dir.string() << " and " << integ_dir.string() << '\n';
  return 0;
}

int cmd_sweep_dx(const Options& o, std::ostream& out, std::ostream& err) {
  TestCaseSpec spec = case_spec(o, TestCase::SteadyJet, 32);
  if (spec.kind != TestCase::SteadyJet) throw ConfigurationError("sweep-dx runs the steady-jet case only");
  spec.balance = BalanceMode::Analytic;
  SweepSpec sweep;
  sweep.mode = SweepMode::Resolution;
  sweep.resolutions = {spec.nx, 2 * spec.nx, 4 * spec.nx};
  sweep.t_end = end_time(o);
  const ConvergenceTable t = run_resolution_sweep(spec, sweep, siqn_config(o), std::filesystem::path(o.out));
  print_table(out, err, t);
  return 0;
}

SweepSpec dt_sweep(const Options& o, SweepMode mode) {
  SweepSpec sweep;
  sweep.mode = mode;
  sweep.dts = o.dts;
  sweep.reference_dt = o.ref_dt;
  sweep.t_end = end_time(o);
  sweep.validate();
  for (double dt : sweep.dts) steps_for(sweep.t_end, dt);
  steps_for(sweep.t_end, sweep.reference_dt);
  return sweep;
}

int cmd_sweep_dt(const Options& o, std::ostream& out, std::ostream& err) {
  const TestCaseSpec spec = case_spec(o, TestCase::MoistGravityWave, 100);
  const SweepSpec sweep = dt_sweep(o, SweepMode::Timestep);
  print_table(out, err, run_dt_sweep(spec, sweep, siqn_config(o), std::filesystem::path(o.out)));
  return 0;
}

int cmd_compare(const Options& o, std::ostream& out, std::ostream& err) {
  const TestCaseSpec spec = case_spec(o, TestCase::MoistGravityWave, 100);
  SweepSpec sweep = dt_sweep(o, SweepMode::Coupling);
  sweep.placements = all_coupling_choices();
  SIQNConfig base;
  base.krylov = siqn_config(o).krylov;
  print_table(out, err, run_coupling_comparison(spec, sweep, base, std::filesystem::path(o.out)));
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Moist shallow water physics-dynamics coupling experiments", "moistsw"};
  Options o;
  app.set_config("--config", "", "Config file (key = value); command-line flags take precedence");
  app.add_option("--case", o.case_name, "Test case")->check(CLI::IsMember({"steady-jet", "gravity-wave"}));
  app.add_option("--nx", o.nx, "Cells in x (sweep-dx: coarsest resolution)");
  app.add_option("--ny", o.ny, "Cells in y (default: nx)");
  app.add_option("--dt", o.dt, "Timestep in seconds (run)");
  app.add_option("--days", o.days, "Simulated days")->capture_default_str();
  app.add_option("--placement", o.placement, "Physics placement")
      ->check(CLI::IsMember({"final", "pre-loop", "outer-loop", "inner-loop"}))
      ->capture_default_str();
  app.add_option("--beta", o.beta, "Physics off-centring for inner-loop placement")->capture_default_str();
  app.add_option("--solver", o.solver, "Linear solver (default: matches placement)")
      ->check(CLI::IsMember({"dry", "moist"}));
  app.add_option("--dts", o.dts, "Comma-separated timesteps, decreasing")->delimiter(',')->capture_default_str();
  app.add_option("--ref-dt", o.ref_dt, "Integrated reference timestep")->capture_default_str();
  app.add_option("--out", o.out, "Output directory")->capture_default_str();

  auto* run = app.add_subcommand("run", "Single run of one case, split and integrated")->fallthrough();
  auto* sdx = app.add_subcommand("sweep-dx", "Resolution sweep of the steady jet")->fallthrough();
  auto* sdt = app.add_subcommand("sweep-dt", "Split timestep sweep against an integrated reference")->fallthrough();
  auto* cmp = app.add_subcommand("compare-coupling", "Timestep sweep for all five physics placements")->fallthrough();
  app.require_subcommand(1);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (run->parsed()) return cmd_run(o, out, err);
    if (sdx->parsed()) return cmd_sweep_dx(o, out, err);
    if (sdt->parsed()) return cmd_sweep_dt(o, out, err);
    if (cmp->parsed()) return cmd_compare(o, out, err);
    err << app.help();
    return 1;
  } catch (const StepError& e) {
    err << "numerical failure at step " << e.step << ": " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace moistsw
