#pragma once

// Coriolis and pressure-gradient-like forcing for both formulations.

#include <algorithm>

#include "moistsw/core.hpp"
#include "moistsw/grid_ops.hpp"
#include "moistsw/moist_physics.hpp"

namespace moistsw {

/// Velocity increments on faces. Scalars never receive forcing.
template <typename Scalar>
struct ForcingIncrement {
  Field<Scalar> du;
  Field<Scalar> dv;
};

/// f k x u + b^f grad(D + B) + (D/2)^f grad(b), with centre values averaged to faces.
template <typename Scalar>
FacePair<Scalar> forcing_terms(const Field<Scalar>& u, const Field<Scalar>& v,
                               const Field<Scalar>& D, const Field<Scalar>& b,
                               const PhysicalParams<Scalar>& phys, const Grid<Scalar>& g) {
  const FacePair<Scalar> grad_h = grad_center_to_faces(D + phys.topography(), g);
  const FacePair<Scalar> grad_b = grad_center_to_faces(b, g);
  FacePair<Scalar> out = coriolis_term(u, v, phys.f(), g);
  out.x += centre_to_xface(b, g) * grad_h.x + centre_to_xface(Scalar(0.5) * D, g) * grad_b.x;
  out.y += centre_to_yface(b, g) * grad_h.y + centre_to_yface(Scalar(0.5) * D, g) * grad_b.y;
  return out;
}

/// du = -dt_frac [f k x u + b grad(D + B) + (D/2) grad b]
template <typename Scalar>
ForcingIncrement<Scalar> forcing_split(const ModelState<Scalar>& s, Scalar dt_frac,
                                       const PhysicalParams<Scalar>& phys) {
  FacePair<Scalar> t = forcing_terms(s.u, s.v, s.D, s.b(), phys, s.grid);
  return {-dt_frac * t.x, -dt_frac * t.y};
}

/// Same stencil with b replaced by b_e + beta2 q_v, q_v diagnosed from the current state.
template <typename Scalar>
ForcingIncrement<Scalar> forcing_integrated(const ModelState<Scalar>& s, Scalar dt_frac,
                                            const PhysicalParams<Scalar>& phys,
                                            const SaturationParams<Scalar>& sat) {
  const VapourDiagnosis<Scalar> diag = diagnose_vapour(s, sat, phys);
  const Field<Scalar> b_star = b_from_be(s.be(), diag.qv, phys.beta2());
  FacePair<Scalar> t = forcing_terms(s.u, s.v, s.D, b_star, phys, s.grid);
  return {-dt_frac * t.x, -dt_frac * t.y};
}

template <typename Scalar>
ForcingIncrement<Scalar> forcing(const ModelState<Scalar>& s, Scalar dt_frac,
                                 const PhysicalParams<Scalar>& phys,
                                 const SaturationParams<Scalar>& sat) {
  return s.is_split() ? forcing_split(s, dt_frac, phys) : forcing_integrated(s, dt_frac, phys, sat);
}

template <typename Scalar>
ModelState<Scalar> apply_forcing(ModelState<Scalar> s, const ForcingIncrement<Scalar>& inc) {
  require_shape(s.grid, inc.du, "apply_forcing");
  require_shape(s.grid, inc.dv, "apply_forcing");
  s.u += inc.du;
  s.v += inc.dv;
  return s;
}

/// Largest pointwise difference between split and integrated forcing (dt_frac = 1).
///
/// A mismatch is reported, never thrown.
template <typename Scalar>
Scalar equivalence_check(const ModelState<Scalar>& split, const ModelState<Scalar>& integrated,
                         const PhysicalParams<Scalar>& phys, const SaturationParams<Scalar>& sat) {
  if (!split.is_split() || integrated.is_split()) {
    throw DimensionError("equivalence_check expects (split, integrated)");
  }
  const auto a = forcing_split(split, Scalar(1), phys);
  const auto b = forcing_integrated(integrated, Scalar(1), phys, sat);
  return std::max((a.du - b.du).abs().maxCoeff(), (a.dv - b.dv).abs().maxCoeff());
}

}  // namespace moistsw
