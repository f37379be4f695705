#pragma once

#include <functional>
#include <vector>

namespace gaot {

// ---------------------------------------------------------------------------
// Scalar field on a uniform square node lattice over [lo, hi]^2, row-major
// with x fastest.  Used as the internal representation for finite-difference
// Poisson solves before values are interpolated onto scattered points.
// ---------------------------------------------------------------------------
struct GridField {
  int nodes = 0;  // nodes per side, >= 2
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> v;  // nodes * nodes values

  double spacing() const { return (hi - lo) / (nodes - 1); }
  double at(int ix, int iy) const { return v[static_cast<size_t>(iy) * nodes + ix]; }
  double& at(int ix, int iy) { return v[static_cast<size_t>(iy) * nodes + ix]; }
};

// Bilinear interpolation at (x, y); clamps to the lattice bounding box.
double sample_bilinear(const GridField& g, double x, double y);

// Evaluates f at every lattice node of a fresh field.
GridField tabulate(const std::function<double(double, double)>& f, int nodes, double lo, double hi);

// ---------------------------------------------------------------------------
// Poisson solvers.  Both discretize -laplace(u) = f with the second-order
// 5-point stencil and solve the SPD system by conjugate gradients to the
// given relative residual; non-convergence throws.
// ---------------------------------------------------------------------------

// Unit square (0,1)^2 with homogeneous Dirichlet boundary.  The lattice has
// `nodes` nodes per side (h = 1/(nodes-1)); the outermost ring is the
// boundary, so the returned field carries an exact zero ring.
GridField solve_poisson_square(const std::function<double(double, double)>& f, int nodes,
                               double rel_tol = 1e-10);

// Unit disk with zero Dirichlet boundary, discretized by masking a Cartesian
// lattice over [-1,1]^2: unknowns are the nodes strictly inside the circle,
// and stencil neighbours outside the disk contribute the boundary value 0.
// Returned field is zero outside the disk.
GridField solve_poisson_disk(const std::function<double(double, double)>& f, int nodes,
                             double rel_tol = 1e-10);

// One-dimensional reference for radially symmetric disk problems:
//   -(1/r) d/dr (r du/dr) = f(r)  on (0,1),  u(1) = 0,  u'(0) = 0.
// Conservative tridiagonal discretization on r_i = i/(nodes-1), solved
// directly.  Serves as the refinement oracle for solve_poisson_disk.
std::vector<double> solve_poisson_disk_radial(const std::function<double(double)>& f, int nodes);

}  // namespace gaot
