#include <doctest.h>

#include <cstring>

#include "moistsw/experiments.hpp"
#include "moistsw/siqn.hpp"

using namespace moistsw;

namespace {

const double G = 9.80616, H = 3e4 / 9.80616;

struct Case {
  TestCaseSpec spec;
  InitialPair init;
  Model<double> model;
  explicit Case(TestCaseSpec s) : spec(s), init(initialize(s)), model(s.model()) {}
};

Case wave(Index n = 16) { return Case(TestCaseSpec::gravity_wave(n)); }

bool bitwise_equal(const ModelState<double>& a, const ModelState<double>& b) {
  if (a.field_count() != b.field_count()) return false;
  for (std::size_t k = 0; k < a.field_count(); ++k) {
    const auto& x = a.field(k);
    const auto& y = b.field(k);
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())))
      return false;
  }
  return true;
}

double max_rel(const ModelState<double>& a, const ModelState<double>& b) {
  double worst = 0;
  for (std::size_t k = 0; k < a.field_count(); ++k) {
    const double scale = std::max(1e-300, b.field(k).abs().maxCoeff());
    worst = std::max(worst, (a.field(k) - b.field(k)).abs().maxCoeff() / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("subsaturated state at rest stays at rest under every placement") {
  const auto g = Grid<double>::periodic(8, 8, 8e5, 8e5);
  const Model<double> m{PhysicalParams<double>(g, 1e-4, G, H), {0.0115, 1.5}, {}};
  auto s = ModelState<double>::zeros(Formulation::Split, g);
  s.D = g.constant(H);
  s.b() = g.constant(G);
  s.qv() = g.constant(0.005);
  for (auto c : all_coupling_choices()) {
    CAPTURE(c.label());
    const auto out = siqn_step(s, SIQNConfig::for_placement(c.placement, c.beta), 600.0, m).state;
    for (std::size_t k = 0; k < s.field_count(); ++k) {
      CHECK((out.field(k) - s.field(k)).abs().maxCoeff() <= 1e-14 * std::max(1.0, s.field(k).abs().maxCoeff()));
    }
  }
}

TEST_CASE("integrated placements are bitwise identical") {
  auto c = wave();
  RunResult<double> first = run(c.init.integrated, SIQNConfig::for_placement(Placement::Final), 600.0, 3, c.model);
  for (auto p : {Placement::PreLoop, Placement::OuterLoop, Placement::InnerLoop}) {
    CAPTURE(std::string(to_string(p)));
    const auto other = run(c.init.integrated, SIQNConfig::for_placement(p, 0.5), 600.0, 3, c.model);
    CHECK(bitwise_equal(other.state, first.state));
  }
}

TEST_CASE("runs are deterministic") {
  auto c = wave();
  for (auto ch : all_coupling_choices()) {
    CAPTURE(ch.label());
    const auto cfg = SIQNConfig::for_placement(ch.placement, ch.beta);
    const auto a = run(c.init.split, cfg, 600.0, 2, c.model);
    const auto b = run(c.init.split, cfg, 600.0, 2, c.model);
    CHECK(bitwise_equal(a.state, b.state));
  }
}

TEST_CASE("final placement is the dry step followed by the physics update") {
  auto c = wave();
  const double dt = 600, alpha = 0.5;
  const auto& xn = c.init.split;
  const auto& m = c.model;
  SIQNConfig cfg;

  // Picard iteration assembled here from the building blocks
  const auto op = make_dry_operator(reference_from(xn, m.sat, m.phys), Formulation::Split, m.phys, xn.grid, alpha, dt);
  const auto xfe = apply_forcing(xn, forcing_split(xn, (1 - alpha) * dt, m.phys));
  auto x1 = xn;
  for (int k = 0; k < cfg.n_outer; ++k) {
    const AdvectingVelocity<double> adv{0.5 * (x1.u + xn.u), 0.5 * (x1.v + xn.v)};
    const auto xT = ssprk3_transport(xfe, adv, dt);
    for (int l = 0; l < cfg.n_inner; ++l) {
      const auto r = apply_forcing(xT, forcing_split(x1, alpha * dt, m.phys)) - x1;
      x1 += solve_dry(op, r, cfg.krylov).increment;
    }
  }
  const auto expect = apply_physics_split(x1, dt, m.physics, m.sat, m.phys).state;
  const auto got = siqn_step(xn, cfg, dt, m).state;
  CHECK(max_rel(got, expect) <= 1e-13);
  // physics moves moisture between q_v and q_c only: the step's total is the transported total
  CHECK(std::abs(moisture_total(got) - moisture_total(x1)) <= 1e-14 * moisture_total(x1));
}

TEST_CASE("inner-loop placement with beta = 0 matches the pre-loop placement") {
  // beta = 0 moves the whole physics increment to the explicit part, which is what PreLoop does;
  // only the Jacobian differs, so the two agree once the Picard iteration has converged.
  auto c = wave();
  auto inner = SIQNConfig::for_placement(Placement::InnerLoop, 0.0), pre = SIQNConfig::for_placement(Placement::PreLoop);
  for (auto* cfg : {&inner, &pre}) {
    cfg->n_outer = 8;
    cfg->n_inner = 4;
    cfg->krylov.rel_tolerance = 1e-12;
  }
  const auto a = siqn_step(c.init.split, inner, 600.0, c.model).state;
  const auto b = siqn_step(c.init.split, pre, 600.0, c.model).state;
  CHECK(max_rel(a, b) <= 1e-8);
}

TEST_CASE("placements differ on a saturated moist state") {
  auto c = wave();
  const auto fin = siqn_step(c.init.split, SIQNConfig::for_placement(Placement::Final), 600.0, c.model).state;
  for (auto p : {Placement::PreLoop, Placement::OuterLoop, Placement::InnerLoop}) {
    CAPTURE(std::string(to_string(p)));
    const auto other = siqn_step(c.init.split, SIQNConfig::for_placement(p), 600.0, c.model).state;
    CHECK(max_rel(other, fin) > 1e-12);
  }
}

TEST_CASE("mass is conserved to roundoff every step") {
  auto c = wave(24);
  for (auto ch : all_coupling_choices()) {
    CAPTURE(ch.label());
    const auto r = run(c.init.split, SIQNConfig::for_placement(ch.placement, ch.beta), 900.0, 4, c.model);
    CHECK(r.stats.max_mass_drift <= 1e-12);
  }
  const auto r = run(c.init.integrated, SIQNConfig{}, 900.0, 4, c.model);
  CHECK(r.stats.max_mass_drift <= 1e-12);
}

TEST_CASE("trace records every iteration and the solves converge") {
  auto c = wave();
  SIQNConfig cfg = SIQNConfig::for_placement(Placement::InnerLoop);
  cfg.n_outer = 3;
  cfg.n_inner = 2;
  const auto res = siqn_step(c.init.split, cfg, 600.0, c.model);
  REQUIRE(res.trace.iterations.size() == 6);
  for (const auto& rec : res.trace.iterations) {
    CHECK(rec.solve_residual_norm <= cfg.krylov.rel_tolerance * rec.residual_norm + cfg.krylov.abs_tolerance);
    CHECK(rec.solver_iterations >= 1);
    CHECK(rec.physics_increment_norm >= 0);
  }
  CHECK(res.trace.iterations.back().outer == 2);
  CHECK(res.trace.iterations.back().inner == 1);
  // Picard residual shrinks within the step
  CHECK(res.trace.iterations.back().residual_norm < res.trace.iterations.front().residual_norm);
  CHECK(res.trace.courant > 0);
}

TEST_CASE("run bookkeeping") {
  auto c = wave();
  std::vector<long> seen;
  const auto zero = run<double>(c.init.split, SIQNConfig{}, 600.0, 0, c.model,
                                [&](long n, double, const ModelState<double>&, const StepTrace* t) {
                                  seen.push_back(n);
                                  CHECK(t == nullptr);
                                });
  CHECK(seen == std::vector<long>{0});
  CHECK(bitwise_equal(zero.state, c.init.split));
  CHECK(zero.stats.steps == 0);

  seen.clear();
  const auto r = run<double>(c.init.split, SIQNConfig{}, 600.0, 5, c.model,
                             [&](long n, double t, const ModelState<double>&, const StepTrace*) {
                               seen.push_back(n);
                               CHECK(t == doctest::Approx(600.0 * static_cast<double>(n)));
                             },
                             2);
  CHECK(seen == std::vector<long>{0, 2, 4, 5});
  CHECK(r.stats.steps == 5);
  CHECK(r.stats.solver_iterations > 0);
  CHECK(r.stats.courant_violations == 0);
  CHECK_THROWS_AS(run(c.init.split, SIQNConfig{}, 600.0, -1, c.model), ConfigurationError);
  CHECK_THROWS_AS(run<double>(c.init.split, SIQNConfig{}, 600.0, 1, c.model, {}, 0), ConfigurationError);
}

TEST_CASE("configuration validation") {
  auto c = wave();
  SIQNConfig bad;
  bad.placement = Placement::InnerLoop;  // with the dry solver
  CHECK_THROWS_AS(siqn_step(c.init.split, bad, 600.0, c.model), ConfigurationError);
  bad = SIQNConfig{};
  bad.solver = SolverKind::Moist;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  bad = SIQNConfig{};
  bad.n_outer = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  bad = SIQNConfig{};
  bad.beta = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  bad = SIQNConfig{};
  bad.alpha = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  CHECK_THROWS_AS(siqn_step(c.init.split, SIQNConfig{}, 0.0, c.model), ConfigurationError);
}

TEST_CASE("solver failure surfaces as a step error with the index") {
  auto c = wave();
  SIQNConfig cfg;
  cfg.krylov.max_iterations = 1;
  cfg.krylov.precondition = false;
  cfg.krylov.rel_tolerance = 1e-14;
  try {
    siqn_step(c.init.split, cfg, 600.0, c.model, 17);
    FAIL("expected a step error");
  } catch (const StepError& e) {
    CHECK(e.step == 17);
    CHECK(std::string(e.what()).find("step 17") != std::string::npos);
  }
}
