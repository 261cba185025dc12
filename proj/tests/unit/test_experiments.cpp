#include <doctest.h>

#include <cmath>
#include <random>

#include "moistsw/experiments.hpp"

using namespace moistsw;

namespace {

const double G = 9.80616, H = 3e4 / 9.80616;

// Scalar root of (1 - xi) q_sat(q) - q by bisection in long double, independent of the library.
double bisect_qv(double b, double D, double beta2, double q0, double nu, double xi) {
  auto f = [&](long double q) {
    const long double qs = q0 * (long double)H / D * std::exp(nu * (1 - (b - beta2 * q) / (long double)G));
    return (1 - xi) * qs - q;
  };
  // f is convex in q; the smaller root lies left of its minimum
  const long double k = nu * beta2 / G;
  const long double c = (1 - xi) * q0 * (long double)H / D * std::exp(nu * (1 - b / (long double)G));
  long double lo = 0, hi = -std::log(c * k) / k;
  REQUIRE(f(lo) > 0);
  REQUIRE(f(hi) < 0);
  for (int k = 0; k < 200; ++k) {
    const long double mid = (lo + hi) / 2;
    (f(mid) > 0 ? lo : hi) = mid;
  }
  return static_cast<double>((lo + hi) / 2);
}

}  // namespace

TEST_CASE("Newton initialisation matches a bisection oracle and converges fast") {
  const auto g = Grid<double>::periodic(5, 4, 5e5, 4e5);
  const PhysicalParams<double> p(g, 1e-4, G, H);
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> dD(0.6 * H, 1.4 * H), db(0.95 * G, 1.05 * G);
  for (double xi : {0.0, 0.1}) {
    for (double q0 : {0.007, 0.0115}) {
      Field<double> b(4, 5), D(4, 5);
      for (Index k = 0; k < b.size(); ++k) {
        b(k) = db(rng);
        D(k) = dD(rng);
      }
      InitConfig init;
      init.xi = xi;
      const SaturationParams<double> sat{q0, 1.5};
      const auto r = newton_qv(b, D, p, sat, init);
      CHECK(r.iterations >= 1);
      CHECK(r.iterations <= 10);
      CHECK(r.residual <= 1e-10);
      for (Index k = 0; k < b.size(); ++k) {
        CHECK(r.qv(k) == doctest::Approx(bisect_qv(b(k), D(k), p.beta2(), q0, 1.5, xi)).epsilon(1e-12));
      }
      CHECK((r.be - be_from_b(b, r.qv, p.beta2())).abs().maxCoeff() == 0);
    }
  }
}

TEST_CASE("Newton with no latent heating is exact after one iteration") {
  const auto g = Grid<double>::periodic(4, 4, 4e5, 4e5);
  const auto p = PhysicalParams<double>(g, 1e-4, G, H).with_latent_heat(0);
  const SaturationParams<double> sat{0.007, 1.5};
  const Field<double> b = g.constant(G), D = g.constant(H);
  const auto r = newton_qv(b, D, p, sat, InitConfig{});
  CHECK(r.iterations == 1);
  CHECK(r.qv(0, 0) == doctest::Approx(0.007).epsilon(1e-15));
}

TEST_CASE("Newton reports failure") {
  const auto g = Grid<double>::periodic(4, 4, 4e5, 4e5);
  const PhysicalParams<double> p(g, 1e-4, G, H);
  InitConfig init;
  init.newton_iterations = 1;
  init.newton_tolerance = 1e-300;
  init.qv_guess = 0.5;
  CHECK_THROWS_AS(newton_qv(g.constant(G), g.constant(H), p, SaturationParams<double>{}, init), InitializationError);
  init = InitConfig{};
  init.xi = 1;
  CHECK_THROWS_AS(newton_qv(g.constant(G), g.constant(H), p, SaturationParams<double>{}, init), ConfigurationError);
}

TEST_CASE("initial pairs describe the same physical state") {
  for (auto spec : {TestCaseSpec::steady_jet(20), TestCaseSpec::gravity_wave(20)}) {
    CAPTURE(std::string(to_string(spec.kind)));
    const auto init = initialize(spec);
    const auto m = spec.model();
    CHECK((init.split.u == init.integrated.u).all());
    CHECK((init.split.D == init.integrated.D).all());
    CHECK(init.split.v.abs().maxCoeff() == 0);
    const Field<double> qt = init.split.qv() + init.split.qc();
    CHECK((qt == init.integrated.qt()).all());
    // b_e round trip
    CHECK((b_from_be(init.integrated.be(), init.split.qv(), m.phys.beta2()) - init.split.b()).abs().maxCoeff() <= 1e-14);
    // q_v sits at saturation
    const Field<double> qs = q_sat(init.split.D, m.phys.topography(),
                                   be_from_b(init.split.b(), init.split.qv(), m.phys.beta2()), m.sat, m.phys);
    CHECK((init.split.qv() - qs).abs().maxCoeff() <= 1e-10);
    CHECK(init.split.qc().minCoeff() >= 0);
    // diagnosed vapour in the integrated state matches the split vapour
    const auto diag = diagnose_vapour(init.integrated, m.sat, m.phys);
    CHECK((diag.qv - init.split.qv()).abs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("steady jet: mean depth and balance") {
  auto spec = TestCaseSpec::steady_jet(32);
  const auto init = initialize(spec);
  CHECK(init.split.D.mean() == doctest::Approx(spec.H()).epsilon(1e-13));
  CHECK(init.split.qc().maxCoeff() > 0);
  // analytic balance converges on the discrete one at second order
  std::vector<double> gaps;
  for (Index n : {16, 32, 64}) {
    auto s = TestCaseSpec::steady_jet(n);
    const auto u = initialize(s).split.u;
    const Field<double> d1 = jet_depth(s, u);
    s.balance = BalanceMode::Analytic;
    const Field<double> d2 = jet_depth(s, u);
    gaps.push_back((d1 - d2).abs().maxCoeff());
  }
  CHECK(gaps[0] / gaps[1] == doctest::Approx(4).epsilon(0.15));
  CHECK(gaps[1] / gaps[2] == doctest::Approx(4).epsilon(0.15));
}

TEST_CASE("gravity wave: cone on the jet, saturated everywhere") {
  auto spec = TestCaseSpec::gravity_wave(36);
  const auto init = initialize(spec);
  auto flat = spec;
  flat.h0 = 0;
  const auto base = initialize(flat);
  const Field<double> bump = init.split.D - base.split.D;
  CHECK(bump.maxCoeff() <= spec.h0);
  CHECK(bump.maxCoeff() > 0.5 * spec.h0);
  CHECK(bump.minCoeff() >= 0);
  CHECK(init.split.qc().minCoeff() > 0);
  CHECK((init.integrated.qt() == spec.qt0).all());
}

TEST_CASE("spec validation") {
  auto s = TestCaseSpec::gravity_wave(16);
  s.h0 = -1;
  CHECK_THROWS_AS(initialize(s), ConfigurationError);
  s = TestCaseSpec::steady_jet(16);
  s.u0 = 2000;
  CHECK_THROWS_AS(initialize(s), ConfigurationError);
  CHECK_THROWS_AS(TestCaseSpec::steady_jet(3).grid(), ConfigurationError);
  CHECK_THROWS_AS(init_gravity_wave(TestCaseSpec::steady_jet(8)), ConfigurationError);
  CHECK(parse_placement("inner-loop") == Placement::InnerLoop);
  CHECK_THROWS_AS(parse_placement("sideways"), ConfigurationError);
  CHECK(parse_test_case("gravity-wave") == TestCase::MoistGravityWave);
  CHECK(parse_solver("moist") == SolverKind::Moist);
}

TEST_CASE("steps_for") {
  CHECK(steps_for(5 * 86400.0, 800) == 540);
  CHECK(steps_for(5 * 86400.0, 50) == 8640);
  CHECK(steps_for(0, 10) == 0);
  CHECK_THROWS_AS(steps_for(1000, 300), ConfigurationError);
  CHECK_THROWS_AS(steps_for(1000, 0), ConfigurationError);
}

TEST_CASE("least-squares slope") {
  CHECK(least_squares_slope({1, 2, 4}, {3, 12, 48}) == doctest::Approx(2).epsilon(1e-14));
  CHECK(least_squares_slope({0.5, 0.25}, {0.1, 0.05}) == doctest::Approx(1).epsilon(1e-14));
  // noisy data: compare with the closed form
  const std::vector<double> h{1, 2, 3, 5}, e{1.1, 3.9, 9.5, 24};
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double x = std::log(h[k]), y = std::log(e[k]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
  }
  const double n = 4;
  CHECK(least_squares_slope(h, e) == doctest::Approx((n * sxy - sx * sy) / (n * sxx - sx * sx)).epsilon(1e-12));
}

TEST_CASE("sweep validation") {
  SweepSpec s;
  s.mode = SweepMode::Timestep;
  s.dts = {800, 400};
  s.reference_dt = 50;
  CHECK_NOTHROW(s.validate());
  s.dts = {400, 800};
  CHECK_THROWS_AS(s.validate(), ConfigurationError);
  s.dts = {800, 40};
  CHECK_THROWS_AS(s.validate(), ConfigurationError);
  s.mode = SweepMode::Resolution;
  s.resolutions = {64, 32};
  CHECK_THROWS_AS(s.validate(), ConfigurationError);
  s.resolutions = {16, 32};
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("placement choices") {
  const auto c = all_coupling_choices();
  REQUIRE(c.size() == 5);
  CHECK(c[0].label() == "final");
  CHECK(c[4].label() == "inner-loop-beta0.5");
  CHECK(c[3].config(SIQNConfig{}).solver == SolverKind::Moist);
  CHECK(c[1].config(SIQNConfig{}).solver == SolverKind::Dry);
}

TEST_CASE("small timestep sweep: table shape and reference errors") {
  auto spec = TestCaseSpec::gravity_wave(24);  // fine enough to resolve the cone
  SweepSpec sw;
  sw.mode = SweepMode::Timestep;
  sw.dts = {1200, 600};
  sw.reference_dt = 300;
  sw.t_end = 2400;
  sw.placements = {{Placement::Final, 1}, {Placement::InnerLoop, 1}};
  const auto t = run_coupling_comparison(spec, sw, SIQNConfig{});
  for (const auto* p : {"final", "inner-loop"}) {
    for (const auto* f : {"u", "D", "b", "q_v", "q_c"}) {
      CAPTURE(std::string(p) + " " + f);
      const auto s = t.series(p, "split", f);
      REQUIRE(s.size() == 2);
      CHECK(s[0] > 0);
      CHECK(std::isfinite(s[1]));
    }
  }
  CHECK(t.runs.size() == 5);  // reference + 2 placements x 2 dt
  CHECK(t.slopes.size() == 10);
}

TEST_CASE("small resolution sweep: both formulations, errors against the start") {
  auto spec = TestCaseSpec::steady_jet(8);
  spec.balance = BalanceMode::Analytic;
  SweepSpec sw;
  sw.mode = SweepMode::Resolution;
  sw.resolutions = {8, 16};
  sw.t_end = 86400.0 / 4;
  const auto t = run_resolution_sweep(spec, sw, SIQNConfig{});
  for (const auto* form : {"split", "integrated"}) {
    const auto s = t.series(std::string(form) == "split" ? "final" : "integrated", form, "D");
    REQUIRE(s.size() == 2);
    CHECK(s[1] < s[0]);
  }
  CHECK(t.runs.size() == 4);
}
