#pragma once

// C-grid finite-difference operators on the doubly periodic plane, plus the
// SSPRK3 upwind transport step.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "moistsw/core.hpp"
#include "moistsw/grid.hpp"

namespace moistsw {

/// centre -> x-face: (s(i) + s(i+1)) / 2
template <typename Derived>
Field<ScalarOf<Derived>> centre_to_xface(const Eigen::ArrayBase<Derived>& s_in,
                                         const Grid<ScalarOf<Derived>>& g) {
  const auto& s = s_in.derived().eval();
  Field<ScalarOf<Derived>> out(g.ny, g.nx);
  for (Index j = 0; j < g.ny; ++j)
    for (Index i = 0; i < g.nx; ++i) out(j, i) = ScalarOf<Derived>(0.5) * (s(j, i) + s(j, g.east(i)));
  return out;
}

/// centre -> y-face: (s(j) + s(j+1)) / 2
template <typename Derived>
Field<ScalarOf<Derived>> centre_to_yface(const Eigen::ArrayBase<Derived>& s_in,
                                         const Grid<ScalarOf<Derived>>& g) {
  const auto& s = s_in.derived().eval();
  Field<ScalarOf<Derived>> out(g.ny, g.nx);
  for (Index j = 0; j < g.ny; ++j) {
    const Index jn = g.north(j);
    for (Index i = 0; i < g.nx; ++i) out(j, i) = ScalarOf<Derived>(0.5) * (s(j, i) + s(jn, i));
  }
  return out;
}

/// x-face -> centre: (F(i-1/2) + F(i+1/2)) / 2
template <typename Derived>
Field<ScalarOf<Derived>> xface_to_centre(const Eigen::ArrayBase<Derived>& f_in,
                                         const Grid<ScalarOf<Derived>>& g) {
  const auto& f = f_in.derived().eval();
  Field<ScalarOf<Derived>> out(g.ny, g.nx);
  for (Index j = 0; j < g.ny; ++j)
    for (Index i = 0; i < g.nx; ++i) out(j, i) = ScalarOf<Derived>(0.5) * (f(j, g.west(i)) + f(j, i));
  return out;
}

template <typename Derived>
Field<ScalarOf<Derived>> yface_to_centre(const Eigen::ArrayBase<Derived>& f_in,
                                         const Grid<ScalarOf<Derived>>& g) {
  const auto& f = f_in.derived().eval();
  Field<ScalarOf<Derived>> out(g.ny, g.nx);
  for (Index j = 0; j < g.ny; ++j) {
    const Index js = g.south(j);
    for (Index i = 0; i < g.nx; ++i) out(j, i) = ScalarOf<Derived>(0.5) * (f(js, i) + f(j, i));
  }
  return out;
}

/// Four-point average of a y-face field onto x-faces.
template <typename Derived>
Field<ScalarOf<Derived>> yface_to_xface(const Eigen::ArrayBase<Derived>& v_in,
                                        const Grid<ScalarOf<Derived>>& g) {
  const auto& v = v_in.derived().eval();
  Field<ScalarOf<Derived>> out(g.ny, g.nx);
  for (Index j = 0; j < g.ny; ++j) {
    const Index js = g.south(j);
    for (Index i = 0; i < g.nx; ++i) {
      const Index ie = g.east(i);
      out(j, i) = ScalarOf<Derived>(0.25) * (v(j, i) + v(js, i) + v(j, ie) + v(js, ie));
    }
  }
  return out;
}

/// Four-point average of an x-face field onto y-faces.
template <typename Derived>
Field<ScalarOf<Derived>> xface_to_yface(const Eigen::ArrayBase<Derived>& u_in,
                                        const Grid<ScalarOf<Derived>>& g) {
  const auto& u = u_in.derived().eval();
  Field<ScalarOf<Derived>> out(g.ny, g.nx);
  for (Index j = 0; j < g.ny; ++j) {
    const Index jn = g.north(j);
    for (Index i = 0; i < g.nx; ++i) {
      const Index iw = g.west(i);
      out(j, i) = ScalarOf<Derived>(0.25) * (u(j, iw) + u(j, i) + u(jn, iw) + u(jn, i));
    }
  }
  return out;
}

/// Two-point centred gradient of a centre field onto its native faces.
template <typename Derived>
FacePair<ScalarOf<Derived>> grad_center_to_faces(const Eigen::ArrayBase<Derived>& s_in,
                                                 const Grid<ScalarOf<Derived>>& g) {
  using S = ScalarOf<Derived>;
  const auto& s = s_in.derived().eval();
  require_shape(g, s, "grad_center_to_faces");
  FacePair<S> out{Field<S>(g.ny, g.nx), Field<S>(g.ny, g.nx)};
  const S rdx = S(1) / g.dx, rdy = S(1) / g.dy;
  for (Index j = 0; j < g.ny; ++j) {
    const Index jn = g.north(j);
    for (Index i = 0; i < g.nx; ++i) {
      out.x(j, i) = (s(j, g.east(i)) - s(j, i)) * rdx;
      out.y(j, i) = (s(jn, i) - s(j, i)) * rdy;
    }
  }
  return out;
}

template <typename DerivedX, typename DerivedY>
Field<ScalarOf<DerivedX>> div_faces_to_center(const Eigen::ArrayBase<DerivedX>& fx_in,
                                              const Eigen::ArrayBase<DerivedY>& fy_in,
                                              const Grid<ScalarOf<DerivedX>>& g) {
  using S = ScalarOf<DerivedX>;
  const auto& fx = fx_in.derived().eval();
  const auto& fy = fy_in.derived().eval();
  require_shape(g, fx, "div_faces_to_center");
  require_shape(g, fy, "div_faces_to_center");
  Field<S> out(g.ny, g.nx);
  const S rdx = S(1) / g.dx, rdy = S(1) / g.dy;
  for (Index j = 0; j < g.ny; ++j) {
    const Index js = g.south(j);
    for (Index i = 0; i < g.nx; ++i) {
      out(j, i) = (fx(j, i) - fx(j, g.west(i))) * rdx + (fy(j, i) - fy(js, i)) * rdy;
    }
  }
  return out;
}

template <typename Scalar>
Field<Scalar> div_faces_to_center(const FacePair<Scalar>& F, const Grid<Scalar>& g) {
  return div_faces_to_center(F.x, F.y, g);
}

/// f k x u on faces: (-f v^x, +f u^y) with four-point averages.
template <typename Scalar>
FacePair<Scalar> coriolis_term(const Field<Scalar>& u, const Field<Scalar>& v, Scalar f,
                               const Grid<Scalar>& g) {
  return {-f * yface_to_xface(v, g), f * xface_to_yface(u, g)};
}

/// Velocity used for one transport step, on native faces.
template <typename Scalar>
using AdvectingVelocity = FacePair<Scalar>;

enum class TransportForm {
  Flux,       // -div(u q), conservative
  Advective,  // -u . grad q
};

/// First-order upwind transport tendency of a centre field.
template <typename Scalar>
Field<Scalar> advect_scalar_upwind(const Field<Scalar>& q, const AdvectingVelocity<Scalar>& adv,
                                   TransportForm form, const Grid<Scalar>& g) {
  require_shape(g, q, "advect_scalar_upwind");
  Field<Scalar> out(g.ny, g.nx);
  const Scalar rdx = Scalar(1) / g.dx, rdy = Scalar(1) / g.dy;
  if (form == TransportForm::Flux) {
    // Upwind face values, then a telescoping divergence.
    Field<Scalar> fx(g.ny, g.nx), fy(g.ny, g.nx);
    for (Index j = 0; j < g.ny; ++j) {
      const Index jn = g.north(j);
      for (Index i = 0; i < g.nx; ++i) {
        const Scalar ua = adv.x(j, i), va = adv.y(j, i);
        fx(j, i) = ua * (ua >= 0 ? q(j, i) : q(j, g.east(i)));
        fy(j, i) = va * (va >= 0 ? q(j, i) : q(jn, i));
      }
    }
    for (Index j = 0; j < g.ny; ++j) {
      const Index js = g.south(j);
      for (Index i = 0; i < g.nx; ++i) {
        out(j, i) = -((fx(j, i) - fx(j, g.west(i))) * rdx + (fy(j, i) - fy(js, i)) * rdy);
      }
    }
    return out;
  }
  for (Index j = 0; j < g.ny; ++j) {
    const Index jn = g.north(j), js = g.south(j);
    for (Index i = 0; i < g.nx; ++i) {
      const Index ie = g.east(i), iw = g.west(i);
      const Scalar uc = Scalar(0.5) * (adv.x(j, iw) + adv.x(j, i));
      const Scalar vc = Scalar(0.5) * (adv.y(js, i) + adv.y(j, i));
      const Scalar dqdx = uc >= 0 ? q(j, i) - q(j, iw) : q(j, ie) - q(j, i);
      const Scalar dqdy = vc >= 0 ? q(j, i) - q(js, i) : q(jn, i) - q(j, i);
      out(j, i) = -(uc * dqdx * rdx + vc * dqdy * rdy);
    }
  }
  return out;
}

/// -(u_adv . grad) u and -(u_adv . grad) v at the native face locations, upwinded.
template <typename Scalar>
FacePair<Scalar> advect_velocity(const Field<Scalar>& u, const Field<Scalar>& v,
                                 const AdvectingVelocity<Scalar>& adv, const Grid<Scalar>& g) {
  require_shape(g, u, "advect_velocity");
  require_shape(g, v, "advect_velocity");
  const Field<Scalar> v_at_u = yface_to_xface(adv.y, g);
  const Field<Scalar> u_at_v = xface_to_yface(adv.x, g);
  FacePair<Scalar> out{Field<Scalar>(g.ny, g.nx), Field<Scalar>(g.ny, g.nx)};
  const Scalar rdx = Scalar(1) / g.dx, rdy = Scalar(1) / g.dy;
  for (Index j = 0; j < g.ny; ++j) {
    const Index jn = g.north(j), js = g.south(j);
    for (Index i = 0; i < g.nx; ++i) {
      const Index ie = g.east(i), iw = g.west(i);
      {
        const Scalar ua = adv.x(j, i), va = v_at_u(j, i);
        const Scalar dx_ = ua >= 0 ? u(j, i) - u(j, iw) : u(j, ie) - u(j, i);
        const Scalar dy_ = va >= 0 ? u(j, i) - u(js, i) : u(jn, i) - u(j, i);
        out.x(j, i) = -(ua * dx_ * rdx + va * dy_ * rdy);
      }
      {
        const Scalar ua = u_at_v(j, i), va = adv.y(j, i);
        const Scalar dx_ = ua >= 0 ? v(j, i) - v(j, iw) : v(j, ie) - v(j, i);
        const Scalar dy_ = va >= 0 ? v(j, i) - v(js, i) : v(jn, i) - v(j, i);
        out.y(j, i) = -(ua * dx_ * rdx + va * dy_ * rdy);
      }
    }
  }
  return out;
}

/// max(|u| dt / dx, |v| dt / dy) over all faces.
template <typename Scalar>
Scalar advective_courant(const AdvectingVelocity<Scalar>& adv, Scalar dt, const Grid<Scalar>& g) {
  return std::max(adv.x.abs().maxCoeff() * dt / g.dx, adv.y.abs().maxCoeff() * dt / g.dy);
}

/// Transport tendency of a whole state: advective form for velocity, flux form for depth,
/// advective form for the thermal and moisture fields.
template <typename Scalar>
ModelState<Scalar> transport_tendency(const ModelState<Scalar>& s,
                                      const AdvectingVelocity<Scalar>& adv) {
  const auto& g = s.grid;
  ModelState<Scalar> t = s;
  auto vel = advect_velocity(s.u, s.v, adv, g);
  t.u = std::move(vel.x);
  t.v = std::move(vel.y);
  t.D = advect_scalar_upwind(s.D, adv, TransportForm::Flux, g);
  t.thermal = advect_scalar_upwind(s.thermal, adv, TransportForm::Advective, g);
  for (std::size_t k = 0; k < s.moisture.size(); ++k) {
    t.moisture[k] = advect_scalar_upwind(s.moisture[k], adv, TransportForm::Advective, g);
  }
  return t;
}

/// Three-stage SSP Runge-Kutta transport with a frozen advecting velocity.
///
/// No Courant check here; callers that care use advective_courant().
template <typename Scalar>
ModelState<Scalar> ssprk3_transport(const ModelState<Scalar>& s, const AdvectingVelocity<Scalar>& adv,
                                    Scalar dt) {
  s.validate();
  require_shape(s.grid, adv.x, "ssprk3_transport");
  require_shape(s.grid, adv.y, "ssprk3_transport");
  ModelState<Scalar> q1 = s + dt * transport_tendency(s, adv);
  ModelState<Scalar> q2 = Scalar(0.75) * s + Scalar(0.25) * (q1 + dt * transport_tendency(q1, adv));
  return Scalar(1) / Scalar(3) * s +
         Scalar(2) / Scalar(3) * (q2 + dt * transport_tendency(q2, adv));
}

}  // namespace moistsw
