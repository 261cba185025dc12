#pragma once

// Test-case initialisation, single runs, and the convergence sweeps.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "moistsw/core.hpp"
#include "moistsw/siqn.hpp"

namespace moistsw {

enum class TestCase { SteadyJet, MoistGravityWave };

const char* to_string(TestCase c);
TestCase parse_test_case(const std::string& s);
Placement parse_placement(const std::string& s);
SolverKind parse_solver(const std::string& s);

/// Initial-vapour Newton iteration settings. xi is the sub-saturation fraction.
struct InitConfig {
  double xi = 0;
  int newton_iterations = 10;
  double newton_tolerance = 1e-10;
  double qv_guess = 0.02;

  void validate() const;
};

struct NewtonResult {
  Field<double> qv;
  Field<double> be;
  Field<double> qsat;  // q_sat(D, be)
  int iterations = 0;  // first iteration at which the tolerance was met
  double residual = 0; // max |(1 - xi) q_sat - q_v| on return
};

/// Solve q_v = (1 - xi) q_sat(D, b - beta2 q_v) pointwise by Newton's method.
NewtonResult newton_qv(const Field<double>& b, const Field<double>& D, const PhysicalParams<double>& phys,
                       const SaturationParams<double>& sat, const InitConfig& init);

/// How the jet depth profile is balanced against the velocity.
enum class BalanceMode {
  Discrete,  // discrete y-momentum forcing vanishes to roundoff: an exact discrete steady state
  Analytic,  // continuous cosine profile: balanced up to O(dx^2) truncation
};

struct TestCaseSpec {
  TestCase kind = TestCase::SteadyJet;
  Index nx = 100;
  Index ny = 100;
  double Lx = 1e7;
  double Ly = 1e7;
  double f = 1e-4;
  double g = 9.80616;
  double phi0 = 3e4;  // H = phi0 / g
  double latent_heat = 10;
  double u0 = 20;
  double b0 = 9.80616 * 299.0 / 300.0;
  double h0 = 0;  // conical depth perturbation amplitude
  // Perturbation radius and centre as fractions of the domain.
  double radius_frac = 1.0 / 18.0;
  double centre_x_frac = 0.5;
  double centre_y_frac = 2.0 / 3.0;
  double qt0 = 0.03;  // uniform total moisture (gravity wave)
  SaturationParams<double> sat;
  BalanceMode balance = BalanceMode::Discrete;
  InitConfig init;

  static TestCaseSpec steady_jet(Index n = 100);
  static TestCaseSpec gravity_wave(Index n = 100);

  void validate() const;
  double H() const { return phi0 / g; }
  Grid<double> grid() const;
  PhysicalParams<double> params() const;
  /// Physics under the fair-test protocol: gamma = 1, saturation from b_e in both formulations.
  Model<double> model() const;
};

struct InitialPair {
  ModelState<double> split;
  ModelState<double> integrated;
};

InitialPair init_steady_jet(const TestCaseSpec& spec);
InitialPair init_gravity_wave(const TestCaseSpec& spec);
InitialPair initialize(const TestCaseSpec& spec);

/// Jet depth profile (the part of D shared by both cases).
Field<double> jet_depth(const TestCaseSpec& spec, const Field<double>& u);

// ---------------------------------------------------------------------------------------------
// Single runs

struct DiagnosticsRecord {
  double time = 0;
  std::string field;
  double l2_error = 0;  // against the run's initial state; NaN where that field is identically 0
  double min = 0;
  double max = 0;
  double mass_total = 0;
  double moisture_total = 0;
};

std::vector<DiagnosticsRecord> diagnose(const ModelState<double>& s, double time,
                                        const ModelState<double>& initial);

struct CaseRun {
  Formulation formulation = Formulation::Split;
  SIQNConfig siqn;
  double dt = 0;
  double t_end = 0;
  int records = 20;  // diagnostics records after the initial one
};

struct CaseResult {
  ModelState<double> initial;
  ModelState<double> final_state;
  RunStats stats;
  std::vector<DiagnosticsRecord> diagnostics;
  double dt = 0;
  long steps = 0;
};

/// Number of steps that lands exactly on t_end.
long steps_for(double t_end, double dt);

CaseResult run_case(const TestCaseSpec& spec, const InitialPair& init, const CaseRun& run);

/// Normalised errors of a split state against an integrated reference; the reference b_e is
/// converted to b with the reference's diagnosed vapour. Velocity is scored as one vector "u".
std::map<std::string, double> split_vs_integrated(const ModelState<double>& split,
                                                  const ModelState<double>& reference,
                                                  const Model<double>& model);

/// Normalised errors of every field against a state of the same formulation.
std::map<std::string, double> errors_vs(const ModelState<double>& s, const ModelState<double>& ref);

// ---------------------------------------------------------------------------------------------
// Sweeps

enum class SweepMode { Resolution, Timestep, Coupling };

struct PlacementChoice {
  Placement placement = Placement::Final;
  double beta = 1.0;

  /// "final", "pre-loop", "outer-loop", "inner-loop" (beta = 1) or "inner-loop-beta0.5".
  std::string label() const;
  SIQNConfig config(const SIQNConfig& base) const;
};

std::vector<PlacementChoice> all_coupling_choices();

struct SweepSpec {
  SweepMode mode = SweepMode::Timestep;
  std::vector<Index> resolutions;
  std::vector<double> dts;
  double reference_dt = 50;
  std::vector<PlacementChoice> placements;
  double t_end = 5 * 86400.0;
  double courant = 0.1;  // resolution sweep only

  void validate() const;
};

struct ConvergenceRow {
  std::string placement;
  std::string formulation;
  Index nx = 0;
  double dt = 0;
  std::string field;
  double l2_error = 0;
};

/// Least-squares slope of log(error) against log(dx) or log(dt), with the pairwise slopes.
struct SlopeRow {
  std::string placement;
  std::string formulation;
  std::string field;
  double slope = 0;
  std::vector<double> pairwise;
};

struct RunSummary {
  std::string placement;
  std::string formulation;
  Index nx = 0;
  double dt = 0;
  RunStats stats;
};

struct ConvergenceTable {
  SweepMode mode = SweepMode::Timestep;
  std::vector<ConvergenceRow> rows;
  std::vector<SlopeRow> slopes;
  std::vector<RunSummary> runs;

  /// Errors of one (placement, formulation, field) series ordered as run.
  std::vector<double> series(const std::string& placement, const std::string& formulation,
                             const std::string& field) const;
};

double least_squares_slope(const std::vector<double>& h, const std::vector<double>& err);

/// Optional output directory for every run plus the table.
using OutputRoot = std::optional<std::filesystem::path>;

/// Resolution sweep, both formulations, errors against the initial state. dt holds Courant ~ u0 dt / dx.
ConvergenceTable run_resolution_sweep(const TestCaseSpec& spec, const SweepSpec& sweep,
                                      const SIQNConfig& base, const OutputRoot& out = {});

/// Integrated reference run at sweep.reference_dt.
CaseResult run_reference(const TestCaseSpec& spec, const InitialPair& init, const SweepSpec& sweep,
                         const OutputRoot& out = {});

/// Split runs at each dt against the integrated reference, for each placement in the sweep
/// (the base config's placement when the list is empty).
ConvergenceTable run_dt_sweep(const TestCaseSpec& spec, const SweepSpec& sweep, const SIQNConfig& base,
                              const OutputRoot& out = {},
                              const std::optional<CaseResult>& reference = {});

/// run_dt_sweep over each placement against one shared reference.
ConvergenceTable run_coupling_comparison(const TestCaseSpec& spec, const SweepSpec& sweep,
                                         const SIQNConfig& base, const OutputRoot& out = {},
                                         const std::optional<CaseResult>& reference = {});

}  // namespace moistsw
