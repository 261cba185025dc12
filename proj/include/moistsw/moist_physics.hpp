#pragma once

// Saturation function, conversion source term, the explicit physics operator for
// the split formulation and the vapour diagnosis for the integrated formulation.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <utility>

#include "moistsw/core.hpp"

namespace moistsw {

enum class GammaMode { Computed, ForcedUnity };

/// Which buoyancy the split formulation feeds to the saturation function.
enum class SaturationArgument {
  EquivalentBuoyancy,  // b - beta2 q_v, so both formulations saturate under identical conditions
  RawBuoyancy,         // b itself
};

template <typename Scalar>
struct PhysicsConfig {
  GammaMode gamma_mode = GammaMode::ForcedUnity;
  /// Condensation timescale; unset means "same as the timestep".
  std::optional<Scalar> tau_v;
  SaturationArgument sat_argument = SaturationArgument::EquivalentBuoyancy;

  void validate() const {
    if (tau_v && !(*tau_v > 0)) throw ConfigurationError("tau_v must be positive");
  }
  Scalar timescale(Scalar dt) const { return tau_v.value_or(dt); }
};

/// q_sat = q0 H / (D + B) exp(nu (1 - b_e / g))
template <typename DerivedD, typename DerivedB, typename DerivedE>
Field<ScalarOf<DerivedD>> q_sat(const Eigen::ArrayBase<DerivedD>& D,
                                const Eigen::ArrayBase<DerivedB>& B,
                                const Eigen::ArrayBase<DerivedE>& be,
                                const SaturationParams<ScalarOf<DerivedD>>& sat,
                                const PhysicalParams<ScalarOf<DerivedD>>& phys) {
  using S = ScalarOf<DerivedD>;
  require_same_shape(D, B, "q_sat");
  require_same_shape(D, be, "q_sat");
  const Field<S> depth = D + B;
  if (!(depth.minCoeff() > 0)) {
    throw SaturationDomainError("q_sat: D + B must be positive everywhere (min " +
                                std::to_string(depth.minCoeff()) + ")");
  }
  return (sat.q0 * phys.H()) / depth * (sat.nu * (S(1) - be / phys.g())).exp();
}

/// gamma_v = 1 / (1 + q_sat nu beta2 / g), or 1 under the fair-test protocol.
template <typename Scalar>
Field<Scalar> gamma_v(const Field<Scalar>& qsat, const SaturationParams<Scalar>& sat,
                      const PhysicalParams<Scalar>& phys, GammaMode mode) {
  if (mode == GammaMode::ForcedUnity) return Field<Scalar>::Ones(qsat.rows(), qsat.cols());
  return (Scalar(1) + qsat * (sat.nu * phys.beta2() / phys.g())).inverse();
}

/// P = max(gamma (q_v - q_sat) / tau, -q_c / dt). Positive is condensation.
template <typename Scalar>
Field<Scalar> source_P(const Field<Scalar>& qv, const Field<Scalar>& qc, const Field<Scalar>& qsat,
                       const Field<Scalar>& gamma, Scalar dt, std::optional<Scalar> tau = {}) {
  require_same_shape(qv, qc, "source_P");
  require_same_shape(qv, qsat, "source_P");
  require_same_shape(qv, gamma, "source_P");
  const Scalar t = tau.value_or(dt);
  return (gamma * (qv - qsat) / t).max(-qc / dt);
}

/// Saturation seen by the split-formulation physics.
template <typename Scalar>
Field<Scalar> split_saturation(const ModelState<Scalar>& s, const SaturationParams<Scalar>& sat,
                               const PhysicalParams<Scalar>& phys, const PhysicsConfig<Scalar>& cfg) {
  if (cfg.sat_argument == SaturationArgument::RawBuoyancy) {
    return q_sat(s.D, phys.topography(), s.b(), sat, phys);
  }
  return q_sat(s.D, phys.topography(), be_from_b(s.b(), s.qv(), phys.beta2()), sat, phys);
}

/// Conversion rate P for a split state.
template <typename Scalar>
Field<Scalar> conversion_rate(const ModelState<Scalar>& s, Scalar dt,
                              const PhysicsConfig<Scalar>& cfg, const SaturationParams<Scalar>& sat,
                              const PhysicalParams<Scalar>& phys) {
  if (!s.is_split()) throw DimensionError("moist physics acts on split states only");
  if (!(dt > 0)) throw ConfigurationError("physics timestep must be positive");
  const Field<Scalar> qs = split_saturation(s, sat, phys, cfg);
  return source_P(s.qv(), s.qc(), qs, gamma_v(qs, sat, phys, cfg.gamma_mode), dt,
                  std::optional<Scalar>(cfg.timescale(dt)));
}

template <typename Scalar>
struct PhysicsUpdate {
  ModelState<Scalar> state;
  bool negative_cloud = false;  // some q_c < -1e-14 after the update
};

/// b -= beta2 P dt, q_v -= P dt, q_c += P dt. Velocity and depth untouched.
template <typename Scalar>
PhysicsUpdate<Scalar> apply_physics_split(const ModelState<Scalar>& s, Scalar dt,
                                          const PhysicsConfig<Scalar>& cfg,
                                          const SaturationParams<Scalar>& sat,
                                          const PhysicalParams<Scalar>& phys) {
  const Field<Scalar> P = conversion_rate(s, dt, cfg, sat, phys);
  PhysicsUpdate<Scalar> out{s, false};
  out.state.b() -= phys.beta2() * P * dt;
  out.state.qv() -= P * dt;
  out.state.qc() += P * dt;
  out.negative_cloud = out.state.qc().minCoeff() < Scalar(-1e-14);
  return out;
}

/// State-shaped tendency (per second) with apply_physics_split(s) = s + dt * tendency.
template <typename Scalar>
ModelState<Scalar> physics_tendency(const ModelState<Scalar>& s, Scalar dt,
                                    const PhysicsConfig<Scalar>& cfg,
                                    const SaturationParams<Scalar>& sat,
                                    const PhysicalParams<Scalar>& phys) {
  const Field<Scalar> P = conversion_rate(s, dt, cfg, sat, phys);
  auto t = ModelState<Scalar>::zeros(Formulation::Split, s.grid);
  t.b() = -phys.beta2() * P;
  t.qv() = -P;
  t.qc() = P;
  return t;
}

/// q_v = min(q_t, q_sat), q_c = q_t - q_v
template <typename Scalar>
std::pair<Field<Scalar>, Field<Scalar>> diagnose_qv_integrated(const Field<Scalar>& qt,
                                                               const Field<Scalar>& qsat) {
  require_same_shape(qt, qsat, "diagnose_qv_integrated");
  Field<Scalar> qv = qt.min(qsat);
  Field<Scalar> qc = qt - qv;
  return {std::move(qv), std::move(qc)};
}

template <typename Scalar>
struct VapourDiagnosis {
  Field<Scalar> qv, qc, qsat;
};

/// Saturation adjustment of an integrated state: q_sat from (D, b_e), then the partition of q_t.
template <typename Scalar>
VapourDiagnosis<Scalar> diagnose_vapour(const ModelState<Scalar>& s,
                                        const SaturationParams<Scalar>& sat,
                                        const PhysicalParams<Scalar>& phys) {
  Field<Scalar> qs = q_sat(s.D, phys.topography(), s.be(), sat, phys);
  auto [qv, qc] = diagnose_qv_integrated(s.qt(), qs);
  return {std::move(qv), std::move(qc), std::move(qs)};
}

}  // namespace moistsw
