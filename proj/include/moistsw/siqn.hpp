#pragma once

// Semi-implicit quasi-Newton step with the four physics placements, and the time loop.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "moistsw/core.hpp"
#include "moistsw/dynamics.hpp"
#include "moistsw/grid_ops.hpp"
#include "moistsw/linear_solvers.hpp"
#include "moistsw/moist_physics.hpp"

namespace moistsw {

enum class Placement { Final, PreLoop, OuterLoop, InnerLoop };
enum class SolverKind { Dry, Moist };

inline const char* to_string(Placement p) {
  switch (p) {
    case Placement::Final: return "final";
    case Placement::PreLoop: return "pre-loop";
    case Placement::OuterLoop: return "outer-loop";
    default: return "inner-loop";
  }
}

inline const char* to_string(SolverKind s) { return s == SolverKind::Dry ? "dry" : "moist"; }

struct SIQNConfig {
  int n_outer = 2;
  int n_inner = 2;
  double alpha = 0.5;
  double beta = 1.0;  // inner-loop placement only
  Placement placement = Placement::Final;
  SolverKind solver = SolverKind::Dry;
  KrylovConfig krylov;

  /// Placement with its matching solver.
  static SIQNConfig for_placement(Placement p, double beta = 1.0) {
    SIQNConfig c;
    c.placement = p;
    c.beta = beta;
    c.solver = p == Placement::InnerLoop ? SolverKind::Moist : SolverKind::Dry;
    return c;
  }

  void validate() const {
    if (n_outer < 1 || n_inner < 1) throw ConfigurationError("n_outer and n_inner must be >= 1");
    if (!(alpha >= 0 && alpha <= 1)) throw ConfigurationError("alpha must lie in [0, 1]");
    if (!(beta >= 0 && beta <= 1)) throw ConfigurationError("beta must lie in [0, 1]");
    const bool wants_moist = placement == Placement::InnerLoop;
    if (wants_moist != (solver == SolverKind::Moist)) {
      throw ConfigurationError(std::string("placement ") + to_string(placement) +
                               " cannot be used with the " + to_string(solver) + " solver");
    }
    krylov.validate();
  }
};

struct IterationRecord {
  int outer = 0;
  int inner = 0;
  double residual_norm = 0;         // ||chi_r|| handed to the solve
  double solve_residual_norm = 0;   // ||S dchi - chi_r|| after the solve
  double physics_increment_norm = 0;
  int solver_iterations = 0;
};

struct StepTrace {
  std::vector<IterationRecord> iterations;
  double courant = 0;
  bool negative_cloud = false;
};

/// A step failed; carries the step index and what the step had done so far.
struct StepError : NumericalError {
  StepError(const std::string& what, long step, StepTrace trace)
      : NumericalError(what), step(step), trace(std::move(trace)) {}
  long step;
  StepTrace trace;
};

/// Everything a step needs besides the state and the iteration config.
template <typename Scalar>
struct Model {
  PhysicalParams<Scalar> phys;
  SaturationParams<Scalar> sat;
  PhysicsConfig<Scalar> physics;
};

template <typename Scalar>
struct StepResult {
  ModelState<Scalar> state;
  StepTrace trace;
};

template <typename Scalar>
StepResult<Scalar> siqn_step(const ModelState<Scalar>& xn, const SIQNConfig& cfg, Scalar dt,
                             const Model<Scalar>& m, long step_index = 0) {
  cfg.validate();
  xn.validate();
  if (!(dt > 0)) throw ConfigurationError("dt must be positive");
  const auto& g = xn.grid;
  const bool split = xn.is_split();
  // No physics operator exists for the integrated formulation: every placement is the plain step.
  const Placement place = split ? cfg.placement : Placement::Final;
  const SolverKind solver = split ? cfg.solver : SolverKind::Dry;
  const Scalar alpha = static_cast<Scalar>(cfg.alpha);
  const Scalar beta = static_cast<Scalar>(cfg.beta);

  StepTrace trace;
  auto physics = [&](const ModelState<Scalar>& s) {
    auto up = apply_physics_split(s, dt, m.physics, m.sat, m.phys);
    trace.negative_cloud = trace.negative_cloud || up.negative_cloud;
    return std::move(up.state);
  };

  try {
    ModelState<Scalar> x1 = xn;
    const ModelState<Scalar> start = place == Placement::PreLoop ? physics(xn) : xn;
    ModelState<Scalar> xfe = apply_forcing(start, forcing(xn, (Scalar(1) - alpha) * dt, m.phys, m.sat));
    if (place == Placement::InnerLoop) xfe += (Scalar(1) - beta) * (physics(xn) - xn);

    // Linearisation frozen at the start of the step.
    const ReferenceState<Scalar> ref = reference_from(xn, m.sat, m.phys);
    std::optional<DryOperator<Scalar>> dry;
    std::optional<MoistOperator<Scalar>> moist;
    if (solver == SolverKind::Dry) {
      dry = make_dry_operator(ref, xn.formulation, m.phys, g, alpha, dt);
    } else {
      moist = make_moist_operator(ref, m.phys, m.sat, g, alpha, dt,
                                  std::optional<Scalar>(m.physics.timescale(dt)));
    }

    for (int k = 0; k < cfg.n_outer; ++k) {
      const AdvectingVelocity<Scalar> adv{Scalar(0.5) * (x1.u + xn.u), Scalar(0.5) * (x1.v + xn.v)};
      trace.courant = std::max(trace.courant, static_cast<double>(advective_courant(adv, dt, g)));
      const ModelState<Scalar> xT = ssprk3_transport(xfe, adv, dt);
      std::optional<ModelState<Scalar>> rhs_phys;
      if (place == Placement::OuterLoop) rhs_phys = physics(xT) - xT;

      for (int l = 0; l < cfg.n_inner; ++l) {
        IterationRecord rec;
        rec.outer = k;
        rec.inner = l;
        ModelState<Scalar> r = apply_forcing(xT, forcing(x1, alpha * dt, m.phys, m.sat)) - x1;
        if (rhs_phys) {
          r += *rhs_phys;
          rec.physics_increment_norm = static_cast<double>(state_norm(*rhs_phys));
        } else if (place == Placement::InnerLoop) {
          const ModelState<Scalar> inc = beta * (physics(x1) - x1);
          rec.physics_increment_norm = static_cast<double>(state_norm(inc));
          r += inc;
        }
        rec.residual_norm = static_cast<double>(state_norm(r));
        LinearSolution<Scalar> sol = dry ? solve_dry(*dry, r, cfg.krylov) : solve_moist(*moist, r, cfg.krylov);
        rec.solve_residual_norm = sol.report.residual_norm;
        rec.solver_iterations = sol.report.iterations;
        x1 += sol.increment;
        trace.iterations.push_back(rec);
      }
    }
    if (place == Placement::Final && split) x1 = physics(x1);
    return {std::move(x1), std::move(trace)};
  } catch (const StepError&) {
    throw;
  } catch (const NumericalError& e) {
    throw StepError("step " + std::to_string(step_index) + ": " + e.what(), step_index, trace);
  }
}

/// Aggregates over a run.
struct RunStats {
  long steps = 0;
  long solver_iterations = 0;
  int max_solver_iterations = 0;  // largest single solve
  double max_courant = 0;
  double max_mass_drift = 0;      // largest per-step relative change of total depth
  long negative_cloud_steps = 0;
  long courant_violations = 0;    // steps whose advective Courant number exceeded 1 (not fatal)
};

template <typename Scalar>
struct RunResult {
  ModelState<Scalar> state;
  RunStats stats;
};

/// Called with (step, time, state, trace); trace is null for the initial state.
template <typename Scalar>
using DiagnosticsSink =
    std::function<void(long, Scalar, const ModelState<Scalar>&, const StepTrace*)>;

/// Advance n_steps. The sink sees the initial state and then every `cadence`-th step
/// plus the last one.
template <typename Scalar>
RunResult<Scalar> run(const ModelState<Scalar>& state0, const SIQNConfig& cfg, Scalar dt, long n_steps,
                      const Model<Scalar>& m, const DiagnosticsSink<Scalar>& sink = {},
                      long cadence = 1) {
  if (n_steps < 0) throw ConfigurationError("n_steps must be >= 0");
  if (cadence < 1) throw ConfigurationError("output cadence must be >= 1");
  RunResult<Scalar> out{state0, {}};
  if (sink) sink(0, Scalar(0), out.state, nullptr);
  Scalar mass = mass_total(out.state.D, out.state.grid);
  for (long n = 1; n <= n_steps; ++n) {
    StepResult<Scalar> s = siqn_step(out.state, cfg, dt, m, n);
    out.state = std::move(s.state);
    const Scalar mass_new = mass_total(out.state.D, out.state.grid);
    auto& st = out.stats;
    st.steps = n;
    st.max_mass_drift = std::max(st.max_mass_drift, static_cast<double>(std::abs(mass_new - mass) / std::abs(mass)));
    mass = mass_new;
    st.max_courant = std::max(st.max_courant, s.trace.courant);
    for (const auto& rec : s.trace.iterations) {
      st.solver_iterations += rec.solver_iterations;
      st.max_solver_iterations = std::max(st.max_solver_iterations, rec.solver_iterations);
    }
    if (s.trace.negative_cloud) ++st.negative_cloud_steps;
    if (s.trace.courant > 1) ++st.courant_violations;
    if (sink && (n % cadence == 0 || n == n_steps)) sink(n, static_cast<Scalar>(n) * dt, out.state, &s.trace);
  }
  return out;
}

}  // namespace moistsw
