#pragma once

#include <Eigen/Dense>

#include <string>

#include "moistsw/errors.hpp"

namespace moistsw {

using Eigen::Index;

template <typename Derived>
using ScalarOf = typename Derived::Scalar;

/// A scalar field on the grid: rows are j (y), columns are i (x), row-major storage.
template <typename Scalar>
using Field = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Doubly periodic uniform C-grid.
///
/// Staggering convention for entry (j, i):
///   cell centre  at ((i + 1/2) dx, (j + 1/2) dy)
///   x-face (u)   at ((i + 1) dx,   (j + 1/2) dy)   -- east face of cell i
///   y-face (v)   at ((i + 1/2) dx, (j + 1) dy)     -- north face of cell j
template <typename Scalar>
struct Grid {
  Index nx = 0;
  Index ny = 0;
  Scalar dx = 0;
  Scalar dy = 0;

  static Grid periodic(Index nx, Index ny, Scalar Lx, Scalar Ly) {
    if (nx < 4 || ny < 4) {
      throw ConfigurationError("grid too small: need nx, ny >= 4 (got " + std::to_string(nx) +
                               "x" + std::to_string(ny) + ")");
    }
    if (!(Lx > 0) || !(Ly > 0)) {
      throw ConfigurationError("domain extents must be positive");
    }
    return Grid{nx, ny, Lx / static_cast<Scalar>(nx), Ly / static_cast<Scalar>(ny)};
  }

  Scalar Lx() const { return dx * static_cast<Scalar>(nx); }
  Scalar Ly() const { return dy * static_cast<Scalar>(ny); }
  Scalar cell_area() const { return dx * dy; }
  Index size() const { return nx * ny; }

  Field<Scalar> zeros() const { return Field<Scalar>::Zero(ny, nx); }
  Field<Scalar> constant(Scalar value) const { return Field<Scalar>::Constant(ny, nx, value); }

  template <typename Derived>
  bool matches(const Eigen::ArrayBase<Derived>& f) const {
    return f.rows() == ny && f.cols() == nx;
  }

  Index east(Index i) const { return i + 1 == nx ? 0 : i + 1; }
  Index west(Index i) const { return i == 0 ? nx - 1 : i - 1; }
  Index north(Index j) const { return j + 1 == ny ? 0 : j + 1; }
  Index south(Index j) const { return j == 0 ? ny - 1 : j - 1; }

  Scalar x_centre(Index i) const { return (static_cast<Scalar>(i) + Scalar(0.5)) * dx; }
  Scalar y_centre(Index j) const { return (static_cast<Scalar>(j) + Scalar(0.5)) * dy; }
  Scalar x_face(Index i) const { return static_cast<Scalar>(i + 1) * dx; }
  Scalar y_face(Index j) const { return static_cast<Scalar>(j + 1) * dy; }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.nx == b.nx && a.ny == b.ny && a.dx == b.dx && a.dy == b.dy;
  }
};

/// A vector quantity stored on native faces: x component on x-faces, y component on y-faces.
template <typename Scalar>
struct FacePair {
  Field<Scalar> x;
  Field<Scalar> y;

  static FacePair zeros(const Grid<Scalar>& g) { return {g.zeros(), g.zeros()}; }

  FacePair& operator+=(const FacePair& o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  FacePair& operator*=(Scalar s) {
    x *= s;
    y *= s;
    return *this;
  }
  friend FacePair operator+(FacePair a, const FacePair& b) { return a += b; }
  friend FacePair operator-(FacePair a, const FacePair& b) {
    a.x -= b.x;
    a.y -= b.y;
    return a;
  }
  friend FacePair operator*(Scalar s, FacePair a) { return a *= s; }
};

template <typename Derived>
void require_shape(const Grid<typename Derived::Scalar>& g, const Eigen::ArrayBase<Derived>& f,
                   const char* what) {
  if (!g.matches(f)) {
    throw DimensionError(std::string(what) + ": field is " + std::to_string(f.rows()) + "x" +
                         std::to_string(f.cols()) + ", grid expects " + std::to_string(g.ny) +
                         "x" + std::to_string(g.nx));
  }
}

}  // namespace moistsw
