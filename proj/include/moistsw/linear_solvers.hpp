#pragma once

// The quasi-Newton linear operator S and its solves.
//
// Dry variant: (du, dD, db) linearised about a resting reference; db is eliminated
// with db = b_r - dt (du . grad) b_bar and the reduced (du, dv, dD) block goes to Krylov.
// Moist variant: the monolithic (du, dv, dD, db, dq_v, dq_c) system including the
// linearised conversion term.
//
// Krylov iterations come from Eigen's matrix-free iterative solvers.

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>
#include <unsupported/Eigen/FFT>
#include <unsupported/Eigen/IterativeSolvers>

#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <optional>
#include <vector>
#include <string>
#include <utility>

#include "moistsw/core.hpp"
#include "moistsw/grid_ops.hpp"
#include "moistsw/moist_physics.hpp"

namespace moistsw::detail {
template <typename T>
class LinearMap;
}  // namespace moistsw::detail

namespace Eigen::internal {
template <typename T>
struct traits<moistsw::detail::LinearMap<T>> : public traits<Eigen::SparseMatrix<T>> {};
}  // namespace Eigen::internal

namespace moistsw {

enum class KrylovMethod { ConjugateGradient, GeneralizedMinimalResidual, StabilizedBiconjugateGradient };

inline const char* to_string(KrylovMethod m) {
  switch (m) {
    case KrylovMethod::ConjugateGradient: return "cg";
    case KrylovMethod::GeneralizedMinimalResidual: return "gmres";
    default: return "bicgstab";
  }
}

struct KrylovConfig {
  double rel_tolerance = 1e-8;
  double abs_tolerance = 1e-12;
  int max_iterations = 500;
  KrylovMethod method = KrylovMethod::GeneralizedMinimalResidual;
  /// Fourier wave preconditioner (constant-coefficient inverse); off means identity.
  bool precondition = true;

  void validate() const {
    if (!(rel_tolerance > 0) || !(abs_tolerance > 0)) {
      throw ConfigurationError("Krylov tolerances must be positive");
    }
    if (max_iterations < 1) throw ConfigurationError("Krylov max_iterations must be >= 1");
  }
};

struct KrylovReport {
  int iterations = 0;
  double residual_norm = 0;  // ||S x - r|| on the full system
  double rhs_norm = 0;       // ||r||
};

namespace detail {

/// Matrix-free operator that Eigen's iterative solvers can consume.
template <typename T>
class LinearMap : public Eigen::EigenBase<LinearMap<T>> {
 public:
  using Scalar = T;
  using RealScalar = T;
  using StorageIndex = int;
  using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  enum {
    ColsAtCompileTime = Eigen::Dynamic,
    MaxColsAtCompileTime = Eigen::Dynamic,
    IsRowMajor = false
  };

  LinearMap(Index n, std::function<Vector(const Vector&)> apply) : n_(n), apply_(std::move(apply)) {}

  Index rows() const { return n_; }
  Index cols() const { return n_; }

  template <typename Rhs>
  Eigen::Product<LinearMap, Rhs, Eigen::AliasFreeProduct> operator*(
      const Eigen::MatrixBase<Rhs>& x) const {
    return Eigen::Product<LinearMap, Rhs, Eigen::AliasFreeProduct>(*this, x.derived());
  }

  Vector apply(const Vector& x) const { return apply_(x); }

 private:
  Index n_;
  std::function<Vector(const Vector&)> apply_;
};

}  // namespace detail
}  // namespace moistsw

namespace Eigen::internal {
template <typename T, typename Rhs>
struct generic_product_impl<moistsw::detail::LinearMap<T>, Rhs, SparseShape, DenseShape, GemvProduct>
    : generic_product_impl_base<moistsw::detail::LinearMap<T>, Rhs,
                                generic_product_impl<moistsw::detail::LinearMap<T>, Rhs>> {
  template <typename Dest>
  static void scaleAndAddTo(Dest& dst, const moistsw::detail::LinearMap<T>& lhs, const Rhs& rhs,
                            const T& alpha) {
    const typename moistsw::detail::LinearMap<T>::Vector x = rhs;
    dst.noalias() += alpha * lhs.apply(x);
  }
};
}  // namespace Eigen::internal

namespace moistsw {

namespace detail {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
Eigen::Map<const Field<Scalar>> block(const Vector<Scalar>& x, Index k, const Grid<Scalar>& g) {
  return Eigen::Map<const Field<Scalar>>(x.data() + k * g.size(), g.ny, g.nx);
}

template <typename Scalar>
void put(Vector<Scalar>& x, Index k, const Field<Scalar>& f, const Grid<Scalar>& g) {
  x.segment(k * g.size(), g.size()) = Eigen::Map<const Vector<Scalar>>(f.data(), g.size());
}

template <typename Scalar>
using VectorFn = std::function<Vector<Scalar>(const Vector<Scalar>&)>;

/// Eigen preconditioner backed by a function; identity when empty.
template <typename Scalar>
class FunctionPreconditioner {
 public:
  FunctionPreconditioner() = default;
  template <typename M>
  FunctionPreconditioner& analyzePattern(const M&) { return *this; }
  template <typename M>
  FunctionPreconditioner& factorize(const M&) { return *this; }
  template <typename M>
  FunctionPreconditioner& compute(const M&) { return *this; }
  Eigen::ComputationInfo info() { return Eigen::Success; }

  void set(VectorFn<Scalar> f) { f_ = std::move(f); }

  template <typename Rhs>
  Vector<Scalar> solve(const Eigen::MatrixBase<Rhs>& b) const {
    Vector<Scalar> v = b;
    return f_ ? f_(v) : v;
  }

 private:
  VectorFn<Scalar> f_;
};

template <typename Scalar, typename Method>
int run_method(Method& solver, const LinearMap<Scalar>& A, const Vector<Scalar>& r, Scalar tol,
               int max_iterations, const VectorFn<Scalar>& precond, Vector<Scalar>& dx) {
  solver.setTolerance(tol);
  solver.setMaxIterations(max_iterations);
  solver.compute(A);
  solver.preconditioner().set(precond);
  dx = solver.solve(r);
  return static_cast<int>(solver.iterations());
}

/// Solve A x = rhs until ||A x - rhs|| <= target, restarting from the true residual when the
/// recursively updated Krylov residual drifts.
template <typename Scalar>
Vector<Scalar> krylov_solve(const LinearMap<Scalar>& A, const Vector<Scalar>& rhs, Scalar target,
                            const KrylovConfig& cfg, KrylovReport& report,
                            const VectorFn<Scalar>& precond = {}) {
  Vector<Scalar> x = Vector<Scalar>::Zero(rhs.size());
  Vector<Scalar> r = rhs;
  Scalar rnorm = r.norm();
  int used = 0;
  for (int pass = 0; pass < 8 && rnorm > target && used < cfg.max_iterations; ++pass) {
    const Scalar tol = Scalar(0.5) * target / rnorm;
    const int budget = cfg.max_iterations - used;
    Vector<Scalar> dx;
    switch (cfg.method) {
      case KrylovMethod::ConjugateGradient: {
        Eigen::ConjugateGradient<LinearMap<Scalar>, Eigen::Lower | Eigen::Upper,
                                 FunctionPreconditioner<Scalar>>
            cg;
        used += run_method(cg, A, r, tol, budget, precond, dx);
        break;
      }
      case KrylovMethod::GeneralizedMinimalResidual: {
        Eigen::GMRES<LinearMap<Scalar>, FunctionPreconditioner<Scalar>> gmres;
        gmres.set_restart(25);
        used += run_method(gmres, A, r, tol, budget, precond, dx);
        break;
      }
      default: {
        Eigen::BiCGSTAB<LinearMap<Scalar>, FunctionPreconditioner<Scalar>> bicg;
        used += run_method(bicg, A, r, tol, budget, precond, dx);
        break;
      }
    }
    if (!dx.allFinite()) break;
    x += dx;
    r = rhs - A.apply(x);
    rnorm = r.norm();
  }
  report.iterations = used;
  if (!(rnorm <= target)) {
    throw NonConvergenceError(std::string("Krylov (") + to_string(cfg.method) +
                                  ") did not converge: residual " + std::to_string(rnorm) +
                                  " > target " + std::to_string(target) + " after " +
                                  std::to_string(used) + " iterations",
                              used, static_cast<double>(rnorm));
  }
  return x;
}

}  // namespace detail

/// Euclidean norm over every entry of every field.
template <typename Scalar>
Scalar state_norm(const ModelState<Scalar>& s) {
  Scalar sq = 0;
  for (std::size_t k = 0; k < s.field_count(); ++k) sq += s.field(k).square().sum();
  return std::sqrt(sq);
}

/// Reference state for a linearisation: the given state's scalars, velocity dropped.
/// For integrated states q_v and q_c are diagnosed with the saturation function.
template <typename Scalar>
ReferenceState<Scalar> reference_from(const ModelState<Scalar>& s, const SaturationParams<Scalar>& sat,
                                      const PhysicalParams<Scalar>& phys) {
  if (s.is_split()) return {s.D, s.b(), s.qv(), s.qc()};
  auto diag = diagnose_vapour(s, sat, phys);
  return {s.D, s.be(), std::move(diag.qv), std::move(diag.qc)};
}

/// Exact inverse of the (du, dv, dD) rows for a uniform reference (D0, b0) on the periodic
/// C-grid, mode by mode in discrete Fourier space. Used as the Krylov preconditioner.
template <typename Scalar>
class WaveFourierInverse {
 public:
  using Complex = std::complex<Scalar>;
  using CField = Eigen::Array<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Matrix3c = Eigen::Matrix<Complex, 3, 3>;

  WaveFourierInverse(const Grid<Scalar>& g, Scalar D0, Scalar b0, Scalar f, Scalar alpha, Scalar dt)
      : g_(g), nh_(g.nx / 2 + 1), inv_(static_cast<std::size_t>(g.ny * (g.nx / 2 + 1))) {
    const Scalar two_pi = Scalar(2) * Scalar(EIGEN_PI);
    const Scalar a = alpha * dt;
    // Real fields: only kx >= 0 is stored, the rest follows by conjugate symmetry.
    for (Index m = 0; m < nh_; ++m) {
      const Complex ex = std::polar(Scalar(1), two_pi * Scalar(m) / Scalar(g.nx));
      for (Index n = 0; n < g.ny; ++n) {
        const Complex ey = std::polar(Scalar(1), two_pi * Scalar(n) / Scalar(g.ny));
        // Symbols of the index-space stencils: shift i -> i+1 is ex.
        const Complex gx = (ex - Scalar(1)) / g.dx, gy = (ey - Scalar(1)) / g.dy;
        const Complex dx = (Scalar(1) - Scalar(1) / ex) / g.dx, dy = (Scalar(1) - Scalar(1) / ey) / g.dy;
        const Complex v_to_u = Scalar(0.25) * (Scalar(1) + Scalar(1) / ey) * (Scalar(1) + ex);
        const Complex u_to_v = Scalar(0.25) * (Scalar(1) + Scalar(1) / ex) * (Scalar(1) + ey);
        Matrix3c M;
        M << Scalar(1), -a * f * v_to_u, a * b0 * gx,
             a * f * u_to_v, Scalar(1), a * b0 * gy,
             dt * D0 * dx, dt * D0 * dy, Scalar(1);
        inv_[static_cast<std::size_t>(m * g.ny + n)] = M.inverse();
      }
    }
    fft_.SetFlag(Eigen::FFT<Scalar>::HalfSpectrum);
    for (auto& s : spec_) s.resize(g.ny, nh_);
    row_.resize(nh_);
    col_.resize(g.ny);
  }

  void apply(const Field<Scalar>& ru, const Field<Scalar>& rv, const Field<Scalar>& rD, Field<Scalar>& du,
             Field<Scalar>& dv, Field<Scalar>& dD) const {
    forward(ru, spec_[0]);
    forward(rv, spec_[1]);
    forward(rD, spec_[2]);
    for (Index m = 0; m < nh_; ++m) {
      for (Index n = 0; n < g_.ny; ++n) {
        const Eigen::Matrix<Complex, 3, 1> r(spec_[0](n, m), spec_[1](n, m), spec_[2](n, m));
        const Eigen::Matrix<Complex, 3, 1> x = inv_[static_cast<std::size_t>(m * g_.ny + n)] * r;
        spec_[0](n, m) = x(0);
        spec_[1](n, m) = x(1);
        spec_[2](n, m) = x(2);
      }
    }
    inverse(spec_[0], du);
    inverse(spec_[1], dv);
    inverse(spec_[2], dD);
  }

 private:
  using Spectrum = Eigen::Array<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;

  // Rows are real transforms, then each retained column is a complex transform.
  void forward(const Field<Scalar>& a, Spectrum& s) const {
    for (Index j = 0; j < g_.ny; ++j) {
      fft_.fwd(row_.data(), a.data() + j * g_.nx, g_.nx);
      s.row(j) = row_.transpose();
    }
    for (Index m = 0; m < nh_; ++m) {
      col_ = s.col(m);
      fft_.fwd(s.col(m).data(), col_.data(), g_.ny);
    }
  }

  void inverse(Spectrum& s, Field<Scalar>& a) const {
    for (Index m = 0; m < nh_; ++m) {
      col_ = s.col(m);
      fft_.inv(s.col(m).data(), col_.data(), g_.ny);
    }
    a.resize(g_.ny, g_.nx);
    for (Index j = 0; j < g_.ny; ++j) {
      row_ = s.row(j).transpose();
      fft_.inv(a.data() + j * g_.nx, row_.data(), g_.nx);
    }
  }

  Grid<Scalar> g_;
  Index nh_;
  std::vector<Matrix3c> inv_;
  mutable Eigen::FFT<Scalar> fft_;
  // Scratch, so one instance must not be applied from two threads at once.
  mutable std::array<Spectrum, 3> spec_;
  mutable Eigen::Matrix<Complex, Eigen::Dynamic, 1> row_, col_;
};

/// Velocity and depth rows shared by the dry and moist operators.
template <typename Scalar>
struct MomentumCoupling {
  Grid<Scalar> grid;
  Scalar alpha = Scalar(0.5);
  Scalar dt = 0;
  Scalar f = 0;
  Field<Scalar> D_bar;
  FacePair<Scalar> D_bar_faces;   // D_bar averaged to faces
  FacePair<Scalar> pg_bar_faces;  // pressure-gradient buoyancy averaged to faces
  FacePair<Scalar> grad_pg_bar;
  /// Preconditioner built from the domain means of the reference depth and buoyancy.
  std::shared_ptr<const WaveFourierInverse<Scalar>> wave_inverse;

  static MomentumCoupling make(const Grid<Scalar>& g, const Field<Scalar>& D_bar,
                               const Field<Scalar>& pg_bar, Scalar alpha, Scalar dt, Scalar f) {
    require_shape(g, D_bar, "reference depth");
    require_shape(g, pg_bar, "reference buoyancy");
    if (!(alpha >= 0 && alpha <= 1)) throw ConfigurationError("alpha must lie in [0, 1]");
    if (!(dt > 0)) throw ConfigurationError("dt must be positive");
    MomentumCoupling m;
    m.grid = g;
    m.alpha = alpha;
    m.dt = dt;
    m.f = f;
    m.D_bar = D_bar;
    m.D_bar_faces = {centre_to_xface(D_bar, g), centre_to_yface(D_bar, g)};
    m.pg_bar_faces = {centre_to_xface(pg_bar, g), centre_to_yface(pg_bar, g)};
    m.grad_pg_bar = grad_center_to_faces(pg_bar, g);
    m.wave_inverse = std::make_shared<const WaveFourierInverse<Scalar>>(g, D_bar.mean(), pg_bar.mean(), f,
                                                                        alpha, dt);
    return m;
  }

  /// alpha dt [f k x du + pg^f grad dD + (dD/2)^f grad pg + (D/2)^f grad db]
  FacePair<Scalar> momentum_terms(const Field<Scalar>& du, const Field<Scalar>& dv,
                                  const Field<Scalar>& dD, const Field<Scalar>& db) const {
    const auto& g = grid;
    FacePair<Scalar> out = coriolis_term(du, dv, f, g);
    const FacePair<Scalar> grad_dD = grad_center_to_faces(dD, g);
    const FacePair<Scalar> grad_db = grad_center_to_faces(db, g);
    out.x += pg_bar_faces.x * grad_dD.x + Scalar(0.5) * centre_to_xface(dD, g) * grad_pg_bar.x +
             Scalar(0.5) * D_bar_faces.x * grad_db.x;
    out.y += pg_bar_faces.y * grad_dD.y + Scalar(0.5) * centre_to_yface(dD, g) * grad_pg_bar.y +
             Scalar(0.5) * D_bar_faces.y * grad_db.y;
    out *= alpha * dt;
    return out;
  }

  /// dD + dt div(D_bar^f du)
  Field<Scalar> continuity_row(const Field<Scalar>& du, const Field<Scalar>& dv,
                               const Field<Scalar>& dD) const {
    return dD + dt * div_faces_to_center(D_bar_faces.x * du, D_bar_faces.y * dv, grid);
  }
};

/// (du . grad) q_bar at cell centres, face products averaged back to the centre.
template <typename Scalar>
Field<Scalar> advective_linearization(const Field<Scalar>& du, const Field<Scalar>& dv,
                                      const FacePair<Scalar>& grad_q_bar, const Grid<Scalar>& g) {
  return xface_to_centre(du * grad_q_bar.x, g) + yface_to_centre(dv * grad_q_bar.y, g);
}

template <typename Scalar>
struct DryOperator {
  Formulation formulation = Formulation::Split;
  ReferenceState<Scalar> reference;
  MomentumCoupling<Scalar> coupling;
  FacePair<Scalar> grad_thermal_bar;

  const Grid<Scalar>& grid() const { return coupling.grid; }
  Scalar dt() const { return coupling.dt; }
  Scalar alpha() const { return coupling.alpha; }
};

/// Split: pressure-gradient buoyancy is b_bar. Integrated: b_e_bar + beta2 q_v_bar.
template <typename Scalar>
DryOperator<Scalar> make_dry_operator(const ReferenceState<Scalar>& ref, Formulation form,
                                      const PhysicalParams<Scalar>& phys, const Grid<Scalar>& g,
                                      Scalar alpha, Scalar dt) {
  DryOperator<Scalar> op;
  op.formulation = form;
  op.reference = ref;
  const Field<Scalar> pg_bar = form == Formulation::Split
                                   ? ref.thermal_bar
                                   : b_from_be(ref.thermal_bar, ref.qv_bar, phys.beta2());
  op.coupling = MomentumCoupling<Scalar>::make(g, ref.D_bar, pg_bar, alpha, dt, phys.f());
  op.grad_thermal_bar = grad_center_to_faces(ref.thermal_bar, g);
  return op;
}

template <typename Scalar>
ModelState<Scalar> apply_dry(const DryOperator<Scalar>& op, const ModelState<Scalar>& dchi) {
  dchi.validate();
  if (dchi.formulation != op.formulation || !(dchi.grid == op.grid())) {
    throw DimensionError("apply_dry: increment does not match the operator");
  }
  const auto& c = op.coupling;
  ModelState<Scalar> out = dchi;
  const FacePair<Scalar> m = c.momentum_terms(dchi.u, dchi.v, dchi.D, dchi.thermal);
  out.u += m.x;
  out.v += m.y;
  out.D = c.continuity_row(dchi.u, dchi.v, dchi.D);
  out.thermal += c.dt * advective_linearization(dchi.u, dchi.v, op.grad_thermal_bar, op.grid());
  return out;
}

template <typename Scalar>
struct LinearSolution {
  ModelState<Scalar> increment;
  KrylovReport report;
};

/// db = b_r - dt (du . grad) b_bar
template <typename Scalar>
Field<Scalar> eliminated_buoyancy(const DryOperator<Scalar>& op, const Field<Scalar>& du,
                                  const Field<Scalar>& dv, const Field<Scalar>& b_r) {
  return b_r - op.dt() * advective_linearization(du, dv, op.grad_thermal_bar, op.grid());
}

template <typename Scalar>
LinearSolution<Scalar> solve_dry(const DryOperator<Scalar>& op, const ModelState<Scalar>& residual,
                                 const KrylovConfig& kcfg) {
  using Vec = detail::Vector<Scalar>;
  kcfg.validate();
  residual.validate();
  if (residual.formulation != op.formulation || !(residual.grid == op.grid())) {
    throw DimensionError("solve_dry: residual does not match the operator");
  }
  const auto& g = op.grid();
  const auto& c = op.coupling;
  const Index n = g.size();

  LinearSolution<Scalar> out{residual, {}};
  const Scalar rnorm = state_norm(residual);
  out.report.rhs_norm = static_cast<double>(rnorm);
  const Scalar target = Scalar(kcfg.rel_tolerance) * rnorm + Scalar(kcfg.abs_tolerance);

  const Field<Scalar> zero = g.zeros();
  const FacePair<Scalar> from_br = c.momentum_terms(zero, zero, zero, residual.thermal);
  Vec rhs(3 * n);
  detail::put<Scalar>(rhs, 0, residual.u - from_br.x, g);
  detail::put<Scalar>(rhs, 1, residual.v - from_br.y, g);
  detail::put<Scalar>(rhs, 2, residual.D, g);

  detail::LinearMap<Scalar> reduced(3 * n, [&](const Vec& x) {
    const Field<Scalar> du = detail::block(x, 0, g), dv = detail::block(x, 1, g),
                        dD = detail::block(x, 2, g);
    const Field<Scalar> db_hom = -c.dt * advective_linearization(du, dv, op.grad_thermal_bar, g);
    const FacePair<Scalar> m = c.momentum_terms(du, dv, dD, db_hom);
    Vec y(3 * n);
    detail::put<Scalar>(y, 0, du + m.x, g);
    detail::put<Scalar>(y, 1, dv + m.y, g);
    detail::put<Scalar>(y, 2, c.continuity_row(du, dv, dD), g);
    return y;
  });

  detail::VectorFn<Scalar> precond;
  if (kcfg.precondition) {
    precond = [&](const Vec& r) {
      Field<Scalar> du, dv, dD;
      c.wave_inverse->apply(detail::block(r, 0, g), detail::block(r, 1, g), detail::block(r, 2, g), du, dv, dD);
      Vec z(3 * n);
      detail::put<Scalar>(z, 0, du, g);
      detail::put<Scalar>(z, 1, dv, g);
      detail::put<Scalar>(z, 2, dD, g);
      return z;
    };
  }

  // The eliminated buoyancy row is satisfied exactly, so the reduced residual is the full one.
  const Vec x = detail::krylov_solve<Scalar>(reduced, rhs, target, kcfg, out.report, precond);
  out.increment.u = detail::block(x, 0, g);
  out.increment.v = detail::block(x, 1, g);
  // Back-substitute the continuity row so total depth is conserved to roundoff.
  out.increment.D = residual.D - c.dt * div_faces_to_center(c.D_bar_faces.x * out.increment.u,
                                                            c.D_bar_faces.y * out.increment.v, g);
  out.increment.thermal = eliminated_buoyancy(op, out.increment.u, out.increment.v, residual.thermal);
  out.report.residual_norm =
      static_cast<double>(state_norm(apply_dry(op, out.increment) - residual));
  return out;
}

template <typename Scalar>
struct MoistOperator {
  ReferenceState<Scalar> reference;
  MomentumCoupling<Scalar> coupling;
  Field<Scalar> qsat_bar;
  Field<Scalar> depth_bar;  // D_bar + B
  FacePair<Scalar> grad_b_bar, grad_qv_bar, grad_qc_bar;
  Scalar beta2 = 0, nu = 0, g = 0;
  Scalar tau = 0;  // condensation timescale

  const Grid<Scalar>& grid() const { return coupling.grid; }
  Scalar dt() const { return coupling.dt; }
};

/// Linearisation about (0, D_bar, b_bar, q_v_bar, q_c_bar) of a split state.
/// q_sat_bar is evaluated once, from D_bar and b_e_bar = b_bar - beta2 q_v_bar.
template <typename Scalar>
MoistOperator<Scalar> make_moist_operator(const ReferenceState<Scalar>& ref,
                                          const PhysicalParams<Scalar>& phys,
                                          const SaturationParams<Scalar>& sat, const Grid<Scalar>& g,
                                          Scalar alpha, Scalar dt, std::optional<Scalar> tau = {}) {
  MoistOperator<Scalar> op;
  op.reference = ref;
  op.coupling = MomentumCoupling<Scalar>::make(g, ref.D_bar, ref.thermal_bar, alpha, dt, phys.f());
  require_shape(g, ref.qv_bar, "reference vapour");
  require_shape(g, ref.qc_bar, "reference cloud");
  op.depth_bar = ref.D_bar + phys.topography();
  op.qsat_bar = q_sat(ref.D_bar, phys.topography(), be_from_b(ref.thermal_bar, ref.qv_bar, phys.beta2()),
                      sat, phys);
  op.grad_b_bar = grad_center_to_faces(ref.thermal_bar, g);
  op.grad_qv_bar = grad_center_to_faces(ref.qv_bar, g);
  op.grad_qc_bar = grad_center_to_faces(ref.qc_bar, g);
  op.beta2 = phys.beta2();
  op.nu = sat.nu;
  op.g = phys.g();
  op.tau = tau.value_or(dt);
  if (!(op.tau > 0)) throw ConfigurationError("condensation timescale must be positive");
  return op;
}

/// dq_v + q_sat_bar (dD / D_bar + (nu / g) db - (beta2 nu / g) dq_v)
template <typename Scalar>
Field<Scalar> linearized_P(const MoistOperator<Scalar>& op, const Field<Scalar>& dD,
                           const Field<Scalar>& db, const Field<Scalar>& dqv) {
  return dqv + op.qsat_bar * (dD / op.depth_bar + (op.nu / op.g) * db -
                              (op.beta2 * op.nu / op.g) * dqv);
}

template <typename Scalar>
Field<Scalar> linearized_P(const MoistOperator<Scalar>& op, const ModelState<Scalar>& dchi) {
  return linearized_P(op, dchi.D, dchi.b(), dchi.qv());
}

namespace detail {

/// Moist rows on raw fields; returns (u, v, D, b, q_v, q_c) rows.
template <typename Scalar>
std::array<Field<Scalar>, 6> moist_rows(const MoistOperator<Scalar>& op, const Field<Scalar>& du,
                                        const Field<Scalar>& dv, const Field<Scalar>& dD,
                                        const Field<Scalar>& db, const Field<Scalar>& dqv,
                                        const Field<Scalar>& dqc) {
  const auto& c = op.coupling;
  const auto& g = op.grid();
  const Scalar dt = c.dt;
  const FacePair<Scalar> m = c.momentum_terms(du, dv, dD, db);
  // Conversion rate is (excess) / tau; dt * rate enters each scalar row.
  const Field<Scalar> rate_term = (dt / op.tau) * linearized_P(op, dD, db, dqv);
  return {du + m.x,
          dv + m.y,
          c.continuity_row(du, dv, dD),
          db + dt * advective_linearization(du, dv, op.grad_b_bar, g) + op.beta2 * rate_term,
          dqv + dt * advective_linearization(du, dv, op.grad_qv_bar, g) + rate_term,
          dqc + dt * advective_linearization(du, dv, op.grad_qc_bar, g) - rate_term};
}

/// Pointwise solve of the b, q_v, q_c rows with the advective terms dropped and dD given.
template <typename Scalar>
std::array<Field<Scalar>, 3> moist_scalar_block(const MoistOperator<Scalar>& op, const Field<Scalar>& rb,
                                                 const Field<Scalar>& rqv, const Field<Scalar>& rqc,
                                                 const Field<Scalar>& dD) {
  const Scalar k = op.dt() / op.tau;
  const Scalar A = op.nu / op.g;
  const Scalar b2 = op.beta2;
  const Field<Scalar>& s = op.qsat_bar;
  const Field<Scalar> from_D = s * dD / op.depth_bar;
  const Field<Scalar> a11 = Scalar(1) + b2 * k * A * s;
  const Field<Scalar> a12 = b2 * k * (Scalar(1) - b2 * A * s);
  const Field<Scalar> a21 = k * A * s;
  const Field<Scalar> a22 = Scalar(1) + k * (Scalar(1) - b2 * A * s);
  const Field<Scalar> r1 = rb - b2 * k * from_D;
  const Field<Scalar> r2 = rqv - k * from_D;
  const Field<Scalar> det = a11 * a22 - a12 * a21;
  Field<Scalar> db = (a22 * r1 - a12 * r2) / det;
  Field<Scalar> dqv = (a11 * r2 - a21 * r1) / det;
  Field<Scalar> dqc = rqc + k * linearized_P(op, dD, db, dqv);
  return {std::move(db), std::move(dqv), std::move(dqc)};
}

}  // namespace detail

template <typename Scalar>
ModelState<Scalar> apply_moist(const MoistOperator<Scalar>& op, const ModelState<Scalar>& dchi) {
  dchi.validate();
  if (!dchi.is_split() || !(dchi.grid == op.grid())) {
    throw DimensionError("apply_moist: increment must be a split state on the operator grid");
  }
  auto rows = detail::moist_rows(op, dchi.u, dchi.v, dchi.D, dchi.b(), dchi.qv(), dchi.qc());
  ModelState<Scalar> out = dchi;
  for (std::size_t k = 0; k < 6; ++k) out.field(k) = std::move(rows[k]);
  return out;
}

template <typename Scalar>
LinearSolution<Scalar> solve_moist(const MoistOperator<Scalar>& op,
                                   const ModelState<Scalar>& residual, const KrylovConfig& kcfg) {
  using Vec = detail::Vector<Scalar>;
  kcfg.validate();
  residual.validate();
  if (!residual.is_split() || !(residual.grid == op.grid())) {
    throw DimensionError("solve_moist: residual must be a split state on the operator grid");
  }
  const auto& g = op.grid();
  const Index n = g.size();
  LinearSolution<Scalar> out{residual, {}};
  const Scalar rnorm = state_norm(residual);
  out.report.rhs_norm = static_cast<double>(rnorm);
  const Scalar target = Scalar(kcfg.rel_tolerance) * rnorm + Scalar(kcfg.abs_tolerance);

  Vec rhs(6 * n);
  for (std::size_t k = 0; k < 6; ++k) detail::put<Scalar>(rhs, static_cast<Index>(k), residual.field(k), g);

  detail::LinearMap<Scalar> monolithic(6 * n, [&](const Vec& x) {
    auto rows = detail::moist_rows<Scalar>(op, detail::block(x, 0, g), detail::block(x, 1, g),
                                           detail::block(x, 2, g), detail::block(x, 3, g),
                                           detail::block(x, 4, g), detail::block(x, 5, g));
    Vec y(6 * n);
    for (std::size_t k = 0; k < 6; ++k) detail::put<Scalar>(y, static_cast<Index>(k), rows[k], g);
    return y;
  });

  // Preconditioner: scalar rows pointwise (no velocity, no depth), then the wave block with that
  // buoyancy moved to the right-hand side, then the scalar rows again with the new depth.
  detail::VectorFn<Scalar> precond;
  if (kcfg.precondition) {
    precond = [&](const Vec& r) {
      const Field<Scalar> zero = g.zeros();
      auto scalars = detail::moist_scalar_block<Scalar>(op, detail::block(r, 3, g), detail::block(r, 4, g),
                                                detail::block(r, 5, g), zero);
      const FacePair<Scalar> from_b = op.coupling.momentum_terms(zero, zero, zero, scalars[0]);
      Field<Scalar> du, dv, dD;
      op.coupling.wave_inverse->apply(detail::block(r, 0, g) - from_b.x, detail::block(r, 1, g) - from_b.y,
                                      detail::block(r, 2, g), du, dv, dD);
      scalars = detail::moist_scalar_block<Scalar>(op, detail::block(r, 3, g), detail::block(r, 4, g),
                                           detail::block(r, 5, g), dD);
      Vec z(6 * n);
      detail::put<Scalar>(z, 0, du, g);
      detail::put<Scalar>(z, 1, dv, g);
      detail::put<Scalar>(z, 2, dD, g);
      for (Index k = 0; k < 3; ++k) detail::put<Scalar>(z, 3 + k, scalars[static_cast<std::size_t>(k)], g);
      return z;
    };
  }

  const Vec x = detail::krylov_solve<Scalar>(monolithic, rhs, target, kcfg, out.report, precond);
  for (std::size_t k = 0; k < 6; ++k) out.increment.field(k) = detail::block(x, static_cast<Index>(k), g);
  const auto& c = op.coupling;
  out.increment.D = residual.D - c.dt * div_faces_to_center(c.D_bar_faces.x * out.increment.u,
                                                            c.D_bar_faces.y * out.increment.v, g);
  out.report.residual_norm =
      static_cast<double>(state_norm(apply_moist(op, out.increment) - residual));
  return out;
}

}  // namespace moistsw
