#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "moistsw/errors.hpp"
#include "moistsw/grid.hpp"

namespace moistsw {

/// Coriolis, gravity, background depth, pseudo-latent heat and topography.
///
/// beta2 = g * L is fixed at construction; changing g or L means building a new object.
template <typename Scalar>
class PhysicalParams {
 public:
  PhysicalParams(const Grid<Scalar>& grid, Scalar f, Scalar g, Scalar H, Scalar L = Scalar(10))
      : PhysicalParams(grid, f, g, H, L, grid.zeros()) {}

  PhysicalParams(const Grid<Scalar>& grid, Scalar f, Scalar g, Scalar H, Scalar L,
                 Field<Scalar> topography)
      : f_(f), g_(g), H_(H), L_(L), beta2_(g * L), topography_(std::move(topography)) {
    if (!(g > 0)) throw ConfigurationError("gravity must be positive");
    if (!(H > 0)) throw ConfigurationError("background depth must be positive");
    if (!(L >= 0)) throw ConfigurationError("pseudo-latent heat must be non-negative");
    require_shape(grid, topography_, "topography");
  }

  Scalar f() const { return f_; }
  Scalar g() const { return g_; }
  Scalar H() const { return H_; }
  Scalar L() const { return L_; }
  Scalar beta2() const { return beta2_; }
  const Field<Scalar>& topography() const { return topography_; }

  PhysicalParams with_latent_heat(Scalar L) const {
    if (!(L >= 0)) throw ConfigurationError("pseudo-latent heat must be non-negative");
    PhysicalParams p = *this;
    p.L_ = L;
    p.beta2_ = g_ * L;
    return p;
  }
  PhysicalParams with_coriolis(Scalar f) const {
    PhysicalParams p = *this;
    p.f_ = f;
    return p;
  }

 private:
  Scalar f_, g_, H_, L_, beta2_;
  Field<Scalar> topography_;
};

/// Constants of q_sat = q0 H / (D + B) * exp(nu (1 - b_e / g)).
template <typename Scalar>
struct SaturationParams {
  Scalar q0 = Scalar(0.007);
  Scalar nu = Scalar(1.5);

  void validate() const {
    if (!(q0 > 0) || !(nu > 0)) throw ConfigurationError("saturation constants q0, nu must be > 0");
  }
};

enum class Formulation { Split, Integrated };

inline const char* to_string(Formulation f) {
  return f == Formulation::Split ? "split" : "integrated";
}

/// Prognostic fields of one formulation.
///
/// Split:      u, v, D, b,   moisture = {q_v, q_c}
/// Integrated: u, v, D, b_e, moisture = {q_t}
template <typename Scalar>
struct ModelState {
  Formulation formulation = Formulation::Split;
  Grid<Scalar> grid;
  Field<Scalar> u, v, D, thermal;
  std::vector<Field<Scalar>> moisture;

  static ModelState zeros(Formulation form, const Grid<Scalar>& g) {
    ModelState s;
    s.formulation = form;
    s.grid = g;
    s.u = s.v = s.D = s.thermal = g.zeros();
    s.moisture.assign(form == Formulation::Split ? 2 : 1, g.zeros());
    return s;
  }

  bool is_split() const { return formulation == Formulation::Split; }

  Field<Scalar>& b() { return split_only(thermal, "b"); }
  const Field<Scalar>& b() const { return split_only(thermal, "b"); }
  Field<Scalar>& be() { return integrated_only(thermal, "b_e"); }
  const Field<Scalar>& be() const { return integrated_only(thermal, "b_e"); }
  Field<Scalar>& qv() { return split_only(moisture.at(0), "q_v"); }
  const Field<Scalar>& qv() const { return split_only(moisture.at(0), "q_v"); }
  Field<Scalar>& qc() { return split_only(moisture.at(1), "q_c"); }
  const Field<Scalar>& qc() const { return split_only(moisture.at(1), "q_c"); }
  Field<Scalar>& qt() { return integrated_only(moisture.at(0), "q_t"); }
  const Field<Scalar>& qt() const { return integrated_only(moisture.at(0), "q_t"); }

  std::size_t field_count() const { return 4 + moisture.size(); }

  /// Field i in the order u, v, D, thermal, moisture...
  Field<Scalar>& field(std::size_t i) {
    switch (i) {
      case 0: return u;
      case 1: return v;
      case 2: return D;
      case 3: return thermal;
      default: return moisture.at(i - 4);
    }
  }
  const Field<Scalar>& field(std::size_t i) const {
    return const_cast<ModelState*>(this)->field(i);
  }

  static std::vector<std::string> field_names(Formulation form) {
    if (form == Formulation::Split) return {"u", "v", "D", "b", "q_v", "q_c"};
    return {"u", "v", "D", "b_e", "q_t"};
  }
  std::vector<std::string> field_names() const { return field_names(formulation); }

  /// Shape and formulation checks for every invariant that does not need physical parameters.
  void validate() const {
    const std::size_t expected = formulation == Formulation::Split ? 2 : 1;
    if (moisture.size() != expected) {
      throw DimensionError(std::string(to_string(formulation)) + " state needs " +
                           std::to_string(expected) + " moisture fields");
    }
    for (std::size_t i = 0; i < field_count(); ++i) require_shape(grid, field(i), "state field");
  }

  ModelState& operator+=(const ModelState& o) {
    check_compatible(o);
    for (std::size_t i = 0; i < field_count(); ++i) field(i) += o.field(i);
    return *this;
  }
  ModelState& operator-=(const ModelState& o) {
    check_compatible(o);
    for (std::size_t i = 0; i < field_count(); ++i) field(i) -= o.field(i);
    return *this;
  }
  ModelState& operator*=(Scalar s) {
    for (std::size_t i = 0; i < field_count(); ++i) field(i) *= s;
    return *this;
  }
  friend ModelState operator+(ModelState a, const ModelState& b) { return a += b; }
  friend ModelState operator-(ModelState a, const ModelState& b) { return a -= b; }
  friend ModelState operator*(Scalar s, ModelState a) { return a *= s; }

  void check_compatible(const ModelState& o) const {
    if (formulation != o.formulation || !(grid == o.grid) || moisture.size() != o.moisture.size()) {
      throw DimensionError("incompatible states");
    }
  }

 private:
  template <typename F>
  F& split_only(F& f, const char* name) const {
    if (formulation != Formulation::Split) {
      throw DimensionError(std::string(name) + " exists only in the split formulation");
    }
    return f;
  }
  template <typename F>
  F& integrated_only(F& f, const char* name) const {
    if (formulation != Formulation::Integrated) {
      throw DimensionError(std::string(name) + " exists only in the integrated formulation");
    }
    return f;
  }
};

/// Linearisation point for the quasi-Newton operators. Velocity is implicitly zero.
template <typename Scalar>
struct ReferenceState {
  Field<Scalar> D_bar;
  Field<Scalar> thermal_bar;  // b (split) or b_e (integrated)
  Field<Scalar> qv_bar;
  Field<Scalar> qc_bar;
};

template <typename DerivedA, typename DerivedB>
void require_same_shape(const Eigen::ArrayBase<DerivedA>& a, const Eigen::ArrayBase<DerivedB>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
}

/// b_e = b - beta2 q_v
template <typename DerivedB, typename DerivedQ>
Field<typename DerivedB::Scalar> be_from_b(const Eigen::ArrayBase<DerivedB>& b,
                                           const Eigen::ArrayBase<DerivedQ>& qv,
                                           typename DerivedB::Scalar beta2) {
  require_same_shape(b, qv, "be_from_b");
  return b - beta2 * qv;
}

/// b = b_e + beta2 q_v
template <typename DerivedB, typename DerivedQ>
Field<typename DerivedB::Scalar> b_from_be(const Eigen::ArrayBase<DerivedB>& be,
                                           const Eigen::ArrayBase<DerivedQ>& qv,
                                           typename DerivedB::Scalar beta2) {
  require_same_shape(be, qv, "b_from_be");
  return be + beta2 * qv;
}

/// Discrete L2 norm sqrt(sum x^2 dx dy).
template <typename Derived>
typename Derived::Scalar l2_norm(const Eigen::ArrayBase<Derived>& x,
                                 const Grid<typename Derived::Scalar>& g) {
  return std::sqrt(x.square().sum() * g.cell_area());
}

/// ||field - reference|| / ||reference||.
template <typename DerivedF, typename DerivedR>
typename DerivedF::Scalar l2_error(const Eigen::ArrayBase<DerivedF>& field,
                                   const Eigen::ArrayBase<DerivedR>& reference,
                                   const Grid<typename DerivedF::Scalar>& g) {
  require_same_shape(field, reference, "l2_error");
  const auto ref_norm = l2_norm(reference, g);
  if (!(ref_norm > 0)) throw DegenerateReferenceError("l2_error: reference field has zero norm");
  return l2_norm(field - reference, g) / ref_norm;
}

/// Normalised L2 error of a staggered velocity, treating (u, v) as one vector field.
template <typename Scalar>
Scalar l2_error_velocity(const Field<Scalar>& u, const Field<Scalar>& v, const Field<Scalar>& u_ref,
                         const Field<Scalar>& v_ref, const Grid<Scalar>& g) {
  require_shape(g, u, "l2_error_velocity");
  require_same_shape(u, u_ref, "l2_error_velocity");
  require_same_shape(v, v_ref, "l2_error_velocity");
  const Scalar ref = std::sqrt(u_ref.square().sum() + v_ref.square().sum());
  if (!(ref > 0)) throw DegenerateReferenceError("l2_error_velocity: reference velocity is zero");
  return std::sqrt((u - u_ref).square().sum() + (v - v_ref).square().sum()) / ref;
}

template <typename Derived>
typename Derived::Scalar mass_total(const Eigen::ArrayBase<Derived>& D,
                                    const Grid<typename Derived::Scalar>& g) {
  return D.sum() * g.cell_area();
}

/// Sum of (q_v + q_c) dx dy for split states, q_t dx dy for integrated.
template <typename Scalar>
Scalar moisture_total(const ModelState<Scalar>& s) {
  Scalar total = 0;
  for (const auto& q : s.moisture) total += q.sum();
  return total * s.grid.cell_area();
}

}  // namespace moistsw
