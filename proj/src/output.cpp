#include "moistsw/output.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace moistsw {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_g(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return os;
}

/// NaN has no JSON spelling; it is written as null.
json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

const char* mode_name(SweepMode m) {
  switch (m) {
    case SweepMode::Resolution: return "resolution";
    case SweepMode::Timestep: return "timestep";
    default: return "coupling";
  }
}

}  // namespace

void write_field_dump(const fs::path& path, const Field<double>& f, const Grid<double>& g, double time,
                      const std::string& name) {
  require_shape(g, f, "write_field_dump");
  if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
    throw ConfigurationError("field dump name must be a single non-empty token");
  }
  auto os = open_out(path);
  os << g.nx << ' ' << g.ny << ' ' << fmt_g(g.dx, 17) << ' ' << fmt_g(g.dy, 17) << ' ' << fmt_g(time, 17)
     << ' ' << name << '\n';
  for (Index j = 0; j < g.ny; ++j) {
    for (Index i = 0; i < g.nx; ++i) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.16e", f(j, i));
      os << (i ? " " : "") << buf;
    }
    os << '\n';
  }
}

FieldDump read_field_dump(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  FieldDump d;
  if (!(is >> d.nx >> d.ny >> d.dx >> d.dy >> d.time >> d.name) || d.nx < 1 || d.ny < 1) {
    throw std::runtime_error(path.string() + ": malformed field dump header");
  }
  d.values.resize(d.ny, d.nx);
  for (Index j = 0; j < d.ny; ++j) {
    for (Index i = 0; i < d.nx; ++i) {
      if (!(is >> d.values(j, i))) throw std::runtime_error(path.string() + ": truncated field dump");
    }
  }
  return d;
}

void dump_state(const fs::path& fields_dir, const ModelState<double>& s, double time) {
  const auto names = s.field_names();
  for (std::size_t k = 0; k < s.field_count(); ++k) {
    write_field_dump(fields_dir / (names[k] + "_t" + fmt_g(time, 10) + ".dat"), s.field(k), s.grid, time,
                     names[k]);
  }
}

void write_diagnostics_csv(const fs::path& path, const std::vector<DiagnosticsRecord>& rows) {
  auto os = open_out(path);
  os << "time,field,l2_error,min,max,mass_total,moisture_total\n";
  for (const auto& r : rows) {
    os << fmt_g(r.time, 17) << ',' << r.field << ',' << fmt_g(r.l2_error, 17) << ',' << fmt_g(r.min, 17)
       << ',' << fmt_g(r.max, 17) << ',' << fmt_g(r.mass_total, 17) << ',' << fmt_g(r.moisture_total, 17)
       << '\n';
  }
}

std::vector<DiagnosticsRecord> read_diagnostics_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "time,field,l2_error,min,max,mass_total,moisture_total") {
    throw std::runtime_error(path.string() + ": unexpected diagnostics header");
  }
  std::vector<DiagnosticsRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell[7];
    for (auto& c : cell) {
      if (!std::getline(ss, c, ',')) throw std::runtime_error(path.string() + ": short diagnostics row");
    }
    DiagnosticsRecord r;
    r.time = std::stod(cell[0]);
    r.field = cell[1];
    r.l2_error = std::stod(cell[2]);
    r.min = std::stod(cell[3]);
    r.max = std::stod(cell[4]);
    r.mass_total = std::stod(cell[5]);
    r.moisture_total = std::stod(cell[6]);
    out.push_back(std::move(r));
  }
  return out;
}

std::string dt_dirname(double dt) { return "dt" + fmt_g(dt, 10); }

fs::path run_directory(const fs::path& root, TestCase c, const std::string& placement, double dt) {
  return root / to_string(c) / placement / dt_dirname(dt);
}

json to_json(const TestCaseSpec& s) {
  return {{"case", to_string(s.kind)},
          {"nx", s.nx},
          {"ny", s.ny},
          {"Lx", s.Lx},
          {"Ly", s.Ly},
          {"f", s.f},
          {"g", s.g},
          {"phi0", s.phi0},
          {"H", s.H()},
          {"latent_heat", s.latent_heat},
          {"u0", s.u0},
          {"b0", s.b0},
          {"h0", s.h0},
          {"radius_frac", s.radius_frac},
          {"centre_frac", {s.centre_x_frac, s.centre_y_frac}},
          {"qt0", s.qt0},
          {"q0", s.sat.q0},
          {"nu", s.sat.nu},
          {"balance", s.balance == BalanceMode::Discrete ? "discrete" : "analytic"},
          {"xi", s.init.xi},
          {"qv_guess", s.init.qv_guess},
          {"newton_iterations", s.init.newton_iterations},
          {"newton_tolerance", s.init.newton_tolerance}};
}

json to_json(const SIQNConfig& c) {
  return {{"placement", to_string(c.placement)},
          {"solver", to_string(c.solver)},
          {"n_outer", c.n_outer},
          {"n_inner", c.n_inner},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"krylov",
           {{"method", to_string(c.krylov.method)},
            {"rel_tolerance", c.krylov.rel_tolerance},
            {"abs_tolerance", c.krylov.abs_tolerance},
            {"max_iterations", c.krylov.max_iterations}}}};
}

json to_json(const RunStats& s) {
  return {{"steps", s.steps},
          {"solver_iterations_total", s.solver_iterations},
          {"solver_iterations_max", s.max_solver_iterations},
          {"solver_iterations_mean_per_step",
           s.steps > 0 ? number(static_cast<double>(s.solver_iterations) / static_cast<double>(s.steps)) : json(0)},
          {"max_courant", s.max_courant},
          {"max_mass_drift_per_step", s.max_mass_drift},
          {"negative_cloud_steps", s.negative_cloud_steps},
          {"courant_violations", s.courant_violations}};
}

json to_json(const ConvergenceTable& t) {
  json rows = json::array(), slopes = json::array(), runs = json::array();
  std::vector<std::string> placements, fields;
  std::vector<double> dts;
  std::vector<Index> resolutions;
  auto add_unique = [](auto& v, const auto& x) {
    if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
  };
  for (const auto& r : t.rows) {
    rows.push_back({{"placement", r.placement},
                    {"formulation", r.formulation},
                    {"nx", r.nx},
                    {"dt", r.dt},
                    {"field", r.field},
                    {"l2_error", number(r.l2_error)}});
    add_unique(placements, r.placement);
    add_unique(fields, r.field);
    add_unique(dts, r.dt);
    add_unique(resolutions, r.nx);
  }
  for (const auto& s : t.slopes) {
    json pw = json::array();
    for (double p : s.pairwise) pw.push_back(number(p));
    slopes.push_back({{"placement", s.placement},
                      {"formulation", s.formulation},
                      {"field", s.field},
                      {"slope", number(s.slope)},
                      {"pairwise", pw}});
  }
  for (const auto& r : t.runs) {
    runs.push_back({{"placement", r.placement},
                    {"formulation", r.formulation},
                    {"nx", r.nx},
                    {"dt", r.dt},
                    {"stats", to_json(r.stats)}});
  }
  return {{"mode", mode_name(t.mode)},
          {"placements", placements},
          {"fields", fields},
          {"dts", dts},
          {"resolutions", resolutions},
          {"rows", rows},
          {"slopes", slopes},
          {"runs", runs}};
}

void write_run(const fs::path& dir, const TestCaseSpec& spec, const CaseRun& run, const CaseResult& result,
               const json& extra) {
  fs::create_directories(dir / "fields");
  write_diagnostics_csv(dir / "diagnostics.csv", result.diagnostics);
  dump_state(dir / "fields", result.initial, 0.0);
  dump_state(dir / "fields", result.final_state, run.t_end);

  json errors = json::object();
  for (const auto& r : diagnose(result.final_state, run.t_end, result.initial)) errors[r.field] = number(r.l2_error);
  json summary = {{"config", to_json(spec)},
                  {"formulation", to_string(run.formulation)},
                  {"siqn", to_json(run.siqn)},
                  {"dt", run.dt},
                  {"t_end", run.t_end},
                  {"steps", result.steps},
                  {"final_errors", errors},
                  {"solver", to_json(result.stats)}};
  for (const auto& [k, v] : extra.items()) summary[k] = v;
  auto os = open_out(dir / "summary.json");
  os << summary.dump(2) << '\n';
}

void write_convergence_csv(const fs::path& path, const ConvergenceTable& t) {
  auto os = open_out(path);
  os << "placement,formulation,nx,dt,field,l2_error\n";
  for (const auto& r : t.rows) {
    os << r.placement << ',' << r.formulation << ',' << r.nx << ',' << fmt_g(r.dt, 17) << ',' << r.field << ','
       << fmt_g(r.l2_error, 17) << '\n';
  }
}

void write_sweep(const fs::path& case_dir, const TestCaseSpec& spec, const SweepSpec& sweep,
                 const ConvergenceTable& t) {
  json labels = json::array();
  for (const auto& p : sweep.placements) labels.push_back(p.label());
  json summary = {{"config", to_json(spec)},
                  {"sweep",
                   {{"mode", mode_name(sweep.mode)},
                    {"resolutions", sweep.resolutions},
                    {"dts", sweep.dts},
                    {"reference_dt", sweep.reference_dt},
                    {"placements", labels},
                    {"t_end", sweep.t_end},
                    {"courant", sweep.courant}}},
                  {"table", to_json(t)}};
  write_convergence_csv(case_dir / "convergence.csv", t);
  auto os = open_out(case_dir / "summary.json");
  os << summary.dump(2) << '\n';
}

}  // namespace moistsw
