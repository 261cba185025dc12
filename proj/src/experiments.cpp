#include "moistsw/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "moistsw/output.hpp"

namespace moistsw {

const char* to_string(TestCase c) {
  return c == TestCase::SteadyJet ? "steady-jet" : "gravity-wave";
}

TestCase parse_test_case(const std::string& s) {
  if (s == "steady-jet") return TestCase::SteadyJet;
  if (s == "gravity-wave") return TestCase::MoistGravityWave;
  throw ConfigurationError("unknown case '" + s + "' (expected steady-jet or gravity-wave)");
}

Placement parse_placement(const std::string& s) {
  if (s == "final") return Placement::Final;
  if (s == "pre-loop") return Placement::PreLoop;
  if (s == "outer-loop") return Placement::OuterLoop;
  if (s == "inner-loop") return Placement::InnerLoop;
  throw ConfigurationError("unknown placement '" + s + "'");
}

SolverKind parse_solver(const std::string& s) {
  if (s == "dry") return SolverKind::Dry;
  if (s == "moist") return SolverKind::Moist;
  throw ConfigurationError("unknown solver '" + s + "' (expected dry or moist)");
}

void InitConfig::validate() const {
  if (!(xi >= 0 && xi < 1)) throw ConfigurationError("xi must lie in [0, 1)");
  if (newton_iterations < 1) throw ConfigurationError("newton_iterations must be >= 1");
  if (!(newton_tolerance > 0)) throw ConfigurationError("newton_tolerance must be positive");
  if (!std::isfinite(qv_guess)) throw ConfigurationError("qv_guess must be finite");
}

NewtonResult newton_qv(const Field<double>& b, const Field<double>& D, const PhysicalParams<double>& phys,
                       const SaturationParams<double>& sat, const InitConfig& init) {
  init.validate();
  sat.validate();
  require_same_shape(b, D, "newton_qv");
  const double scale = 1.0 - init.xi;
  const double k = sat.nu * phys.beta2() / phys.g();
  auto qsat_of = [&](const Field<double>& q) {
    return q_sat(D, phys.topography(), be_from_b(b, q, phys.beta2()), sat, phys);
  };

  NewtonResult r;
  r.iterations = -1;
  Field<double> q = Field<double>::Constant(b.rows(), b.cols(), init.qv_guess);
  Field<double> qs = qsat_of(q);
  double res = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= init.newton_iterations; ++it) {
    // f(q) = (1 - xi) q_sat - q,  f'(q) = (1 - xi) (nu beta2 / g) q_sat - 1
    q -= (scale * qs - q) / (scale * k * qs - 1.0);
    if (!q.allFinite()) throw InitializationError("newton_qv: iterate became non-finite", res);
    qs = qsat_of(q);
    res = (scale * qs - q).abs().maxCoeff();
    if (res < init.newton_tolerance && r.iterations < 0) r.iterations = it;
    // One polishing step past the tolerance takes a quadratically converging iterate to roundoff.
    if (res == 0 || (r.iterations > 0 && it > r.iterations)) break;
  }
  if (r.iterations < 0) {
    throw InitializationError("newton_qv: no convergence after " + std::to_string(init.newton_iterations) +
                                  " iterations (worst residual " + std::to_string(res) + ")",
                              res);
  }
  r.residual = res;
  r.be = be_from_b(b, q, phys.beta2());
  r.qsat = std::move(qs);
  r.qv = std::move(q);
  return r;
}

TestCaseSpec TestCaseSpec::steady_jet(Index n) {
  TestCaseSpec s;
  s.kind = TestCase::SteadyJet;
  s.nx = s.ny = n;
  s.sat.q0 = 0.007;
  s.init.qv_guess = 0.02;
  return s;
}

TestCaseSpec TestCaseSpec::gravity_wave(Index n) {
  TestCaseSpec s;
  s.kind = TestCase::MoistGravityWave;
  s.nx = s.ny = n;
  s.h0 = 2000;
  s.qt0 = 0.03;
  s.sat.q0 = 0.0115;
  s.init.qv_guess = 0.03;
  return s;
}

void TestCaseSpec::validate() const {
  if (!(g > 0) || !(phi0 > 0)) throw ConfigurationError("g and phi0 must be positive");
  if (!(b0 > 0)) throw ConfigurationError("b0 must be positive");
  if (!(h0 >= 0)) throw ConfigurationError("h0 must be non-negative");
  if (kind == TestCase::SteadyJet && h0 != 0) {
    throw ConfigurationError("steady-jet case has no depth perturbation (h0 must be 0)");
  }
  if (!(radius_frac > 0)) throw ConfigurationError("perturbation radius must be positive");
  if (!(qt0 >= 0)) throw ConfigurationError("qt0 must be non-negative");
  sat.validate();
  init.validate();
}

Grid<double> TestCaseSpec::grid() const { return Grid<double>::periodic(nx, ny, Lx, Ly); }

PhysicalParams<double> TestCaseSpec::params() const {
  return PhysicalParams<double>(grid(), f, g, H(), latent_heat);
}

Model<double> TestCaseSpec::model() const {
  PhysicsConfig<double> cfg;
  cfg.gamma_mode = GammaMode::ForcedUnity;
  cfg.sat_argument = SaturationArgument::EquivalentBuoyancy;
  return Model<double>{params(), sat, cfg};
}

namespace {

Field<double> jet_velocity(const TestCaseSpec& spec, const Grid<double>& g) {
  Field<double> u(g.ny, g.nx);
  for (Index j = 0; j < g.ny; ++j) {
    u.row(j).setConstant(spec.u0 * std::sin(2 * std::numbers::pi * g.y_centre(j) / spec.Ly));
  }
  return u;
}

ModelState<double> base_state(Formulation form, const Grid<double>& g, const Field<double>& u,
                              const Field<double>& D) {
  auto s = ModelState<double>::zeros(form, g);
  s.u = u;
  s.D = D;
  return s;
}

InitialPair make_pair(const TestCaseSpec& spec, const Grid<double>& g, const Field<double>& u,
                      const Field<double>& D, const Field<double>& b, const Field<double>& qv,
                      const Field<double>& qc, double beta2) {
  InitialPair p{base_state(Formulation::Split, g, u, D), base_state(Formulation::Integrated, g, u, D)};
  p.split.b() = b;
  p.split.qv() = qv;
  p.split.qc() = qc;
  p.integrated.be() = be_from_b(b, qv, beta2);
  p.integrated.qt() = qv + qc;
  (void)spec;
  return p;
}

}  // namespace

Field<double> jet_depth(const TestCaseSpec& spec, const Field<double>& u) {
  const Grid<double> g = spec.grid();
  require_shape(g, u, "jet_depth");
  Field<double> D(g.ny, g.nx);
  if (spec.balance == BalanceMode::Analytic) {
    const double amp = spec.f * spec.u0 * spec.Ly / (2 * std::numbers::pi * spec.b0);
    for (Index j = 0; j < g.ny; ++j) {
      D.row(j).setConstant(spec.H() + amp * std::cos(2 * std::numbers::pi * g.y_centre(j) / spec.Ly));
    }
  } else {
    // f (u_j + u_{j+1}) / 2 + b0 (D_{j+1} - D_j) / dy = 0 on every y-face, then mean depth H.
    std::vector<double> d(static_cast<std::size_t>(g.ny), 0.0);
    for (Index j = 0; j + 1 < g.ny; ++j) {
      d[j + 1] = d[j] - g.dy * spec.f * (u(j, 0) + u(j + 1, 0)) / (2 * spec.b0);
    }
    double mean = 0;
    for (double x : d) mean += x;
    mean /= static_cast<double>(g.ny);
    for (Index j = 0; j < g.ny; ++j) D.row(j).setConstant(spec.H() + (d[j] - mean));
  }
  return D;
}

InitialPair init_steady_jet(const TestCaseSpec& spec) {
  if (spec.kind != TestCase::SteadyJet) throw ConfigurationError("init_steady_jet: wrong case");
  spec.validate();
  const Grid<double> g = spec.grid();
  const PhysicalParams<double> phys = spec.params();
  const Field<double> u = jet_velocity(spec, g);
  const Field<double> D = jet_depth(spec, u);
  if (!(D.minCoeff() > 0)) throw ConfigurationError("jet too strong: depth is not positive everywhere");
  const Field<double> b = g.constant(spec.b0);
  const NewtonResult nr = newton_qv(b, D, phys, spec.sat, spec.init);
  // Oversaturated: vapour at saturation and an equal amount of cloud.
  return make_pair(spec, g, u, D, b, nr.qv, nr.qsat, phys.beta2());
}

InitialPair init_gravity_wave(const TestCaseSpec& spec) {
  if (spec.kind != TestCase::MoistGravityWave) throw ConfigurationError("init_gravity_wave: wrong case");
  spec.validate();
  const Grid<double> g = spec.grid();
  const PhysicalParams<double> phys = spec.params();
  const Field<double> u = jet_velocity(spec, g);
  Field<double> D = jet_depth(spec, u);
  const double R = spec.radius_frac * spec.Lx;
  const double xc = spec.centre_x_frac * spec.Lx, yc = spec.centre_y_frac * spec.Ly;
  for (Index j = 0; j < g.ny; ++j) {
    for (Index i = 0; i < g.nx; ++i) {
      double rx = std::abs(g.x_centre(i) - xc), ry = std::abs(g.y_centre(j) - yc);
      rx = std::min(rx, spec.Lx - rx);
      ry = std::min(ry, spec.Ly - ry);
      D(j, i) += spec.h0 * (1.0 - std::min(1.0, std::hypot(rx, ry) / R));
    }
  }
  if (!(D.minCoeff() > 0)) throw ConfigurationError("jet too strong: depth is not positive everywhere");
  const Field<double> b = g.constant(spec.b0);
  const NewtonResult nr = newton_qv(b, D, phys, spec.sat, spec.init);
  const Field<double> qv = nr.qv.min(spec.qt0);
  const Field<double> qc = spec.qt0 - qv;
  return make_pair(spec, g, u, D, b, qv, qc, phys.beta2());
}

InitialPair initialize(const TestCaseSpec& spec) {
  return spec.kind == TestCase::SteadyJet ? init_steady_jet(spec) : init_gravity_wave(spec);
}

std::vector<DiagnosticsRecord> diagnose(const ModelState<double>& s, double time,
                                        const ModelState<double>& initial) {
  s.check_compatible(initial);
  const auto names = s.field_names();
  const double mass = mass_total(s.D, s.grid);
  const double moisture = moisture_total(s);
  std::vector<DiagnosticsRecord> out;
  for (std::size_t k = 0; k < s.field_count(); ++k) {
    DiagnosticsRecord r;
    r.time = time;
    r.field = names[k];
    const double ref = l2_norm(initial.field(k), s.grid);
    r.l2_error = ref > 0 ? l2_norm(s.field(k) - initial.field(k), s.grid) / ref
                         : std::numeric_limits<double>::quiet_NaN();
    r.min = s.field(k).minCoeff();
    r.max = s.field(k).maxCoeff();
    r.mass_total = mass;
    r.moisture_total = moisture;
    out.push_back(std::move(r));
  }
  return out;
}

long steps_for(double t_end, double dt) {
  if (!(dt > 0)) throw ConfigurationError("dt must be positive");
  if (!(t_end >= 0)) throw ConfigurationError("end time must be non-negative");
  const double n = std::round(t_end / dt);
  if (std::abs(n * dt - t_end) > 1e-9 * std::max(1.0, t_end)) {
    throw ConfigurationError("end time " + std::to_string(t_end) + " s is not a whole number of " +
                             std::to_string(dt) + " s steps");
  }
  return static_cast<long>(n);
}

CaseResult run_case(const TestCaseSpec& spec, const InitialPair& init, const CaseRun& run_cfg) {
  const ModelState<double>& s0 =
      run_cfg.formulation == Formulation::Split ? init.split : init.integrated;
  const long steps = steps_for(run_cfg.t_end, run_cfg.dt);
  const long cadence = std::max<long>(1, steps / std::max(1, run_cfg.records));
  CaseResult out;
  out.initial = s0;
  out.dt = run_cfg.dt;
  out.steps = steps;
  DiagnosticsSink<double> sink = [&](long, double t, const ModelState<double>& s, const StepTrace*) {
    auto rows = diagnose(s, t, s0);
    out.diagnostics.insert(out.diagnostics.end(), rows.begin(), rows.end());
  };
  RunResult<double> rr = run(s0, run_cfg.siqn, run_cfg.dt, steps, spec.model(), sink, cadence);
  out.final_state = std::move(rr.state);
  out.stats = rr.stats;
  return out;
}

std::map<std::string, double> errors_vs(const ModelState<double>& s, const ModelState<double>& ref) {
  s.check_compatible(ref);
  std::map<std::string, double> e;
  e["u"] = l2_error_velocity(s.u, s.v, ref.u, ref.v, s.grid);
  const auto names = s.field_names();
  for (std::size_t k = 2; k < s.field_count(); ++k) e[names[k]] = l2_error(s.field(k), ref.field(k), s.grid);
  return e;
}

std::map<std::string, double> split_vs_integrated(const ModelState<double>& split,
                                                  const ModelState<double>& reference,
                                                  const Model<double>& model) {
  if (!split.is_split() || reference.is_split()) {
    throw DimensionError("split_vs_integrated expects (split, integrated)");
  }
  const auto diag = diagnose_vapour(reference, model.sat, model.phys);
  const Field<double> b_ref = b_from_be(reference.be(), diag.qv, model.phys.beta2());
  const auto& g = split.grid;
  return {{"u", l2_error_velocity(split.u, split.v, reference.u, reference.v, g)},
          {"D", l2_error(split.D, reference.D, g)},
          {"b", l2_error(split.b(), b_ref, g)},
          {"q_v", l2_error(split.qv(), diag.qv, g)},
          {"q_c", l2_error(split.qc(), diag.qc, g)}};
}

std::string PlacementChoice::label() const {
  if (placement == Placement::InnerLoop && beta != 1.0) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "inner-loop-beta%g", beta);
    return buf;
  }
  return to_string(placement);
}

SIQNConfig PlacementChoice::config(const SIQNConfig& base) const {
  SIQNConfig c = base;
  c.placement = placement;
  c.beta = beta;
  c.solver = placement == Placement::InnerLoop ? SolverKind::Moist : SolverKind::Dry;
  return c;
}

std::vector<PlacementChoice> all_coupling_choices() {
  return {{Placement::Final, 1.0},
          {Placement::PreLoop, 1.0},
          {Placement::OuterLoop, 1.0},
          {Placement::InnerLoop, 1.0},
          {Placement::InnerLoop, 0.5}};
}

void SweepSpec::validate() const {
  if (!(t_end > 0)) throw ConfigurationError("sweep end time must be positive");
  if (mode == SweepMode::Resolution) {
    if (resolutions.empty()) throw ConfigurationError("resolution sweep needs at least one resolution");
    for (std::size_t k = 1; k < resolutions.size(); ++k) {
      if (resolutions[k] <= resolutions[k - 1]) {
        throw ConfigurationError("resolutions must be strictly increasing");
      }
    }
    if (!(courant > 0)) throw ConfigurationError("courant number must be positive");
    return;
  }
  if (dts.empty()) throw ConfigurationError("timestep sweep needs at least one dt");
  for (std::size_t k = 0; k < dts.size(); ++k) {
    if (!(dts[k] > 0)) throw ConfigurationError("dt values must be positive");
    if (k > 0 && !(dts[k] < dts[k - 1])) throw ConfigurationError("dt list must be strictly decreasing");
  }
  if (!(reference_dt > 0) || !(reference_dt < dts.back())) {
    throw ConfigurationError("reference dt must be positive and smaller than every swept dt");
  }
}

std::vector<double> ConvergenceTable::series(const std::string& placement, const std::string& formulation,
                                             const std::string& field) const {
  std::vector<double> out;
  for (const auto& r : rows) {
    if (r.placement == placement && r.formulation == formulation && r.field == field) out.push_back(r.l2_error);
  }
  return out;
}

double least_squares_slope(const std::vector<double>& h, const std::vector<double>& err) {
  if (h.size() != err.size() || h.size() < 2) {
    throw ConfigurationError("least_squares_slope needs two or more matching points");
  }
  const double n = static_cast<double>(h.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double x = std::log(h[k]), y = std::log(err[k]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

namespace {

/// One slope row per (placement, formulation, field) series, using the matching h values.
void add_slopes(ConvergenceTable& t, bool by_resolution, double Lx) {
  std::vector<std::tuple<std::string, std::string, std::string>> keys;
  for (const auto& r : t.rows) {
    auto k = std::make_tuple(r.placement, r.formulation, r.field);
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  for (const auto& [p, f, field] : keys) {
    std::vector<double> h, e;
    for (const auto& r : t.rows) {
      if (r.placement == p && r.formulation == f && r.field == field) {
        h.push_back(by_resolution ? Lx / static_cast<double>(r.nx) : r.dt);
        e.push_back(r.l2_error);
      }
    }
    if (h.size() < 2) continue;
    SlopeRow s{p, f, field, 0, {}};
    const bool finite = std::all_of(e.begin(), e.end(), [](double x) { return std::isfinite(x) && x > 0; });
    s.slope = finite ? least_squares_slope(h, e) : std::numeric_limits<double>::quiet_NaN();
    for (std::size_t k = 1; k < h.size(); ++k) {
      s.pairwise.push_back(finite ? std::log(e[k] / e[k - 1]) / std::log(h[k] / h[k - 1])
                                  : std::numeric_limits<double>::quiet_NaN());
    }
    t.slopes.push_back(std::move(s));
  }
}

void add_rows(ConvergenceTable& t, const std::string& placement, const std::string& formulation, Index nx,
              double dt, const std::map<std::string, double>& errors) {
  for (const auto& [field, e] : errors) t.rows.push_back({placement, formulation, nx, dt, field, e});
}

}  // namespace

ConvergenceTable run_resolution_sweep(const TestCaseSpec& spec, const SweepSpec& sweep,
                                      const SIQNConfig& base, const OutputRoot& out) {
  if (sweep.mode != SweepMode::Resolution) throw ConfigurationError("run_resolution_sweep: wrong sweep mode");
  if (spec.kind != TestCase::SteadyJet) throw ConfigurationError("resolution sweep runs the steady-jet case");
  sweep.validate();
  base.validate();
  if (!(spec.u0 > 0)) throw ConfigurationError("resolution sweep needs a nonzero jet (u0 > 0)");
  const std::string split_label = PlacementChoice{base.placement, base.beta}.label();

  ConvergenceTable t;
  t.mode = SweepMode::Resolution;
  for (Index n : sweep.resolutions) {
    TestCaseSpec s = spec;
    s.nx = s.ny = n;
    const InitialPair init = initialize(s);
    const double dx = s.Lx / static_cast<double>(n);
    const double dt = sweep.t_end / std::ceil(sweep.t_end / (sweep.courant * dx / s.u0));
    for (Formulation form : {Formulation::Split, Formulation::Integrated}) {
      const std::string label = form == Formulation::Split ? split_label : "integrated";
      CaseRun rc{form, base, dt, sweep.t_end};
      CaseResult r;
      try {
        r = run_case(s, init, rc);
      } catch (const StepError& e) {
        throw StepError("nx=" + std::to_string(n) + " " + e.what(), e.step, e.trace);
      }
      add_rows(t, label, to_string(form), n, dt, errors_vs(r.final_state, r.initial));
      t.runs.push_back({label, to_string(form), n, dt, r.stats});
      if (out) {
        write_run(run_directory(*out, s.kind, label, dt), s, rc, r, {{"nx", n}});
      }
    }
  }
  add_slopes(t, true, spec.Lx);
  if (out) write_sweep(*out / to_string(spec.kind), spec, sweep, t);
  return t;
}

CaseResult run_reference(const TestCaseSpec& spec, const InitialPair& init, const SweepSpec& sweep,
                         const OutputRoot& out) {
  CaseRun rc{Formulation::Integrated, SIQNConfig{}, sweep.reference_dt, sweep.t_end};
  CaseResult r = run_case(spec, init, rc);
  if (out) write_run(run_directory(*out, spec.kind, "integrated", rc.dt), spec, rc, r, {{"role", "reference"}});
  return r;
}

ConvergenceTable run_dt_sweep(const TestCaseSpec& spec, const SweepSpec& sweep, const SIQNConfig& base,
                              const OutputRoot& out, const std::optional<CaseResult>& reference) {
  sweep.validate();
  base.validate();
  const InitialPair init = initialize(spec);
  const CaseResult ref = reference ? *reference : run_reference(spec, init, sweep, out);
  if (!(ref.final_state.grid == init.split.grid)) {
    throw DimensionError("reference run is on a different grid from the sweep");
  }
  const Model<double> model = spec.model();
  std::vector<PlacementChoice> choices = sweep.placements;
  if (choices.empty()) choices.push_back({base.placement, base.beta});

  ConvergenceTable t;
  t.mode = sweep.mode;
  for (const auto& choice : choices) {
    for (double dt : sweep.dts) {
      CaseRun rc{Formulation::Split, choice.config(base), dt, sweep.t_end};
      CaseResult r;
      try {
        r = run_case(spec, init, rc);
      } catch (const StepError& e) {
        throw StepError(choice.label() + " dt=" + std::to_string(dt) + " " + e.what(), e.step, e.trace);
      }
      add_rows(t, choice.label(), "split", spec.nx, dt, split_vs_integrated(r.final_state, ref.final_state, model));
      t.runs.push_back({choice.label(), "split", spec.nx, dt, r.stats});
      if (out) write_run(run_directory(*out, spec.kind, choice.label(), dt), spec, rc, r);
    }
  }
  t.runs.push_back({"integrated", "integrated", spec.nx, ref.dt, ref.stats});
  add_slopes(t, false, spec.Lx);
  if (out) write_sweep(*out / to_string(spec.kind), spec, sweep, t);
  return t;
}

ConvergenceTable run_coupling_comparison(const TestCaseSpec& spec, const SweepSpec& sweep,
                                         const SIQNConfig& base, const OutputRoot& out,
                                         const std::optional<CaseResult>& reference) {
  SweepSpec s = sweep;
  s.mode = SweepMode::Coupling;
  if (s.placements.empty()) s.placements = all_coupling_choices();
  return run_dt_sweep(spec, s, base, out, reference);
}

}  // namespace moistsw
