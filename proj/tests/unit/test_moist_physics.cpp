#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "moistsw/moist_physics.hpp"

using namespace moistsw;

namespace {

const double G = 9.80616, H = 3e4 / 9.80616;

Grid<double> grid() { return Grid<double>::periodic(6, 5, 6e5, 5e5); }
PhysicalParams<double> phys() { return PhysicalParams<double>(grid(), 1e-4, G, H); }

Field<double> one(double x) { return Field<double>::Constant(1, 1, x); }

Field<double> random_field(const Grid<double>& g, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Field<double> f(g.ny, g.nx);
  for (Index j = 0; j < g.ny; ++j)
    for (Index i = 0; i < g.nx; ++i) f(j, i) = d(rng);
  return f;
}

ModelState<double> random_split(const Grid<double>& g, std::mt19937_64& rng) {
  auto s = ModelState<double>::zeros(Formulation::Split, g);
  s.u = random_field(g, rng, -20, 20);
  s.v = random_field(g, rng, -20, 20);
  s.D = random_field(g, rng, 0.5 * H, 1.5 * H);
  s.b() = random_field(g, rng, 0.9 * G, 1.1 * G);
  s.qv() = random_field(g, rng, 0, 0.06);
  s.qc() = random_field(g, rng, 0, 0.03);
  return s;
}

PhysicsConfig<double> fair() { return {}; }

}  // namespace

TEST_CASE("saturation function") {
  const auto p = PhysicalParams<double>(Grid<double>::periodic(4, 4, 1, 1), 1e-4, G, H);
  const SaturationParams<double> sat{0.007, 1.5};
  CHECK(q_sat(one(H), one(0), one(G), sat, p)(0, 0) == doctest::Approx(0.007).epsilon(1e-15));
  const double be = G * (1 - std::log(2.0) / 1.5);
  CHECK(q_sat(one(H / 2), one(0), one(be), sat, p)(0, 0) == doctest::Approx(4 * 0.007).epsilon(1e-14));
  // topography shifts the depth
  CHECK(q_sat(one(H / 4), one(H / 4), one(be), sat, p)(0, 0) == doctest::Approx(4 * 0.007).epsilon(1e-14));
  CHECK_THROWS_AS(q_sat(one(-1), one(0), one(G), sat, p), SaturationDomainError);
  CHECK_THROWS_AS(q_sat(one(H), Field<double>::Zero(2, 1), one(G), sat, p), DimensionError);
}

TEST_CASE("gamma factor") {
  const auto p = PhysicalParams<double>(Grid<double>::periodic(4, 4, 1, 1), 1e-4, G, H);
  const SaturationParams<double> sat{0.007, 1.5};
  CHECK((gamma_v(one(0.3), sat, p, GammaMode::ForcedUnity) == 1).all());
  CHECK(gamma_v(one(0), sat, p, GammaMode::Computed)(0, 0) == 1);
  const double q = G / (sat.nu * p.beta2());
  CHECK(gamma_v(one(q), sat, p, GammaMode::Computed)(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("source term branches") {
  CHECK(source_P(one(0.02), one(0.5), one(0.02), one(1), 100.0)(0, 0) == 0);
  CHECK(source_P(one(0.03), one(0), one(0.02), one(1), 100.0)(0, 0) == doctest::Approx(1e-4).epsilon(1e-12));
  // subsaturated by 0.05 but only 0.02 cloud: evaporation capped at the cloud
  CHECK(source_P(one(0.0), one(0.02), one(0.05), one(1), 100.0)(0, 0) == doctest::Approx(-2e-4).epsilon(1e-12));
  // the timescale divides the gamma branch only
  CHECK(source_P(one(0.03), one(0), one(0.02), one(1), 100.0, std::optional<double>(200.0))(0, 0) ==
        doctest::Approx(5e-5).epsilon(1e-12));
  CHECK_THROWS_AS(source_P(one(0), Field<double>(Field<double>::Zero(2, 2)), one(0), one(1), 1.0), DimensionError);
}

TEST_CASE("physics update: hand-evaluated single point") {
  const auto g = Grid<double>::periodic(4, 4, 4e5, 4e5);
  const PhysicalParams<double> p(g, 1e-4, G, H);
  const SaturationParams<double> sat{0.007, 1.5};
  auto s = ModelState<double>::zeros(Formulation::Split, g);
  s.D = g.constant(H);
  s.qv() = g.constant(0.0);
  s.b() = g.constant(G);
  // choose b so that q_sat(b_e) is exactly q0 with q_v = q0 + 0.01: b_e = g
  s.qv() = g.constant(0.017);
  s.b() = g.constant(G + p.beta2() * 0.017);
  const auto up = apply_physics_split(s, 300.0, fair(), sat, p);
  CHECK(up.state.qv()(1, 2) == doctest::Approx(0.007).epsilon(1e-12));
  CHECK(up.state.qc()(1, 2) == doctest::Approx(0.010).epsilon(1e-12));
  CHECK(up.state.b()(1, 2) == doctest::Approx(s.b()(1, 2) - 0.01 * p.beta2()).epsilon(1e-14));
  CHECK((up.state.u == s.u).all());
  CHECK((up.state.D == s.D).all());
  CHECK_FALSE(up.negative_cloud);

  // exactly saturated, no cloud: unchanged
  s.qv() = g.constant(0.007);
  s.b() = g.constant(G + p.beta2() * 0.007);
  const auto still = apply_physics_split(s, 300.0, fair(), sat, p);
  CHECK((still.state.qv() - s.qv()).abs().maxCoeff() <= 1e-17);
  CHECK((still.state.qc() == s.qc()).all());

  CHECK_THROWS_AS(apply_physics_split(ModelState<double>::zeros(Formulation::Integrated, g), 1.0, fair(), sat, p),
                  DimensionError);
  CHECK_THROWS_AS(apply_physics_split(s, 0.0, fair(), sat, p), ConfigurationError);
}

TEST_CASE("physics invariants on 1000 random states") {
  std::mt19937_64 rng(20240611);
  const auto g = grid();
  const auto p = phys();
  const SaturationParams<double> sat{0.0115, 1.5};
  double worst_sum = 0, worst_be = 0, worst_cloud = 0;
  int neg_flags = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = random_split(g, rng);
    PhysicsConfig<double> cfg;
    if (trial % 2) cfg.gamma_mode = GammaMode::Computed;
    const double dt = 50.0 * (1 + trial % 16);
    const auto up = apply_physics_split(s, dt, cfg, sat, p);
    const Field<double> sum0 = s.qv() + s.qc(), sum1 = up.state.qv() + up.state.qc();
    worst_sum = std::max(worst_sum, (sum1 - sum0).abs().maxCoeff());
    const Field<double> be0 = be_from_b(s.b(), s.qv(), p.beta2());
    const Field<double> be1 = be_from_b(up.state.b(), up.state.qv(), p.beta2());
    worst_be = std::max(worst_be, ((be1 - be0).abs() / be0.abs()).maxCoeff());
    worst_cloud = std::min(worst_cloud, up.state.qc().minCoeff());
    neg_flags += up.negative_cloud;
  }
  CHECK(worst_sum <= 1e-15);
  CHECK(worst_be <= 1e-13);
  CHECK(worst_cloud >= -1e-14);
  CHECK(neg_flags == 0);
}

TEST_CASE("tendency matches the update") {
  std::mt19937_64 rng(5);
  const auto g = grid();
  const auto p = phys();
  const SaturationParams<double> sat{0.0115, 1.5};
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_split(g, rng);
    const double dt = 400;
    const auto up = apply_physics_split(s, dt, fair(), sat, p).state;
    const auto t = physics_tendency(s, dt, fair(), sat, p);
    for (std::size_t k = 0; k < s.field_count(); ++k) {
      const Field<double> lhs = up.field(k) - s.field(k), rhs = dt * t.field(k);
      CHECK((lhs - rhs).abs().maxCoeff() <= 1e-14 * std::max(1.0, s.field(k).abs().maxCoeff()));
    }
    CHECK(t.u.abs().maxCoeff() == 0);
    CHECK(t.v.abs().maxCoeff() == 0);
    CHECK(t.D.abs().maxCoeff() == 0);
  }
}

TEST_CASE("saturation adjustment is idempotent under the fair test") {
  std::mt19937_64 rng(99);
  const auto g = grid();
  const auto p = phys();
  const SaturationParams<double> sat{0.0115, 1.5};
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_split(g, rng);
    const auto once = apply_physics_split(s, 200.0, fair(), sat, p).state;
    const auto twice = apply_physics_split(once, 200.0, fair(), sat, p).state;
    for (std::size_t k = 3; k < s.field_count(); ++k) {
      CHECK((twice.field(k) - once.field(k)).abs().maxCoeff() <= 1e-14 * std::max(1.0, once.field(k).abs().maxCoeff()));
    }
  }
}

TEST_CASE("raw-buoyancy saturation argument differs") {
  std::mt19937_64 rng(1);
  const auto g = grid();
  const auto p = phys();
  const SaturationParams<double> sat{0.0115, 1.5};
  const auto s = random_split(g, rng);
  PhysicsConfig<double> raw;
  raw.sat_argument = SaturationArgument::RawBuoyancy;
  const Field<double> a = split_saturation(s, sat, p, fair()), b = split_saturation(s, sat, p, raw);
  CHECK((a - b).abs().maxCoeff() > 0);
  CHECK((b - q_sat(s.D, p.topography(), s.b(), sat, p)).abs().maxCoeff() == 0);
}

TEST_CASE("integrated vapour diagnosis") {
  auto [qv0, qc0] = diagnose_qv_integrated(one(0), one(0.02));
  CHECK(qv0(0, 0) == 0);
  CHECK(qc0(0, 0) == 0);
  auto [qv, qc] = diagnose_qv_integrated(one(0.03), one(0.02));
  CHECK(qv(0, 0) == 0.02);
  CHECK(qc(0, 0) == doctest::Approx(0.01).epsilon(1e-14));

  std::mt19937_64 rng(8);
  const auto g = grid();
  const Field<double> qt = random_field(g, rng, 0, 0.05), qs = random_field(g, rng, 0, 0.05);
  auto [v, c] = diagnose_qv_integrated(qt, qs);
  // q_t - q_sat is exact when q_sat/2 <= q_t <= 2 q_sat; elsewhere the recombination is within an ulp
  CHECK(((v + c) - qt).abs().maxCoeff() <= std::numeric_limits<double>::epsilon() * qt.maxCoeff());
  const Field<double> close = qs * 1.5;
  auto [v2, c2] = diagnose_qv_integrated(close, qs);
  CHECK(((v2 + c2) == close).all());
  CHECK((c >= 0).all());
  CHECK((v <= qs).all());
}
