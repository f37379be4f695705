#include "gaot/pde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gaot {

double sample_bilinear(const GridField& g, double x, double y) {
  const double h = g.spacing();
  const double fx = std::clamp((x - g.lo) / h, 0.0, static_cast<double>(g.nodes - 1));
  const double fy = std::clamp((y - g.lo) / h, 0.0, static_cast<double>(g.nodes - 1));
  int ix = std::min(static_cast<int>(fx), g.nodes - 2);
  int iy = std::min(static_cast<int>(fy), g.nodes - 2);
  const double tx = fx - ix;
  const double ty = fy - iy;
  return (1 - tx) * (1 - ty) * g.at(ix, iy) + tx * (1 - ty) * g.at(ix + 1, iy) +
         (1 - tx) * ty * g.at(ix, iy + 1) + tx * ty * g.at(ix + 1, iy + 1);
}

GridField tabulate(const std::function<double(double, double)>& f, int nodes, double lo, double hi) {
  GridField g;
  g.nodes = nodes;
  g.lo = lo;
  g.hi = hi;
  g.v.resize(static_cast<size_t>(nodes) * nodes);
  const double h = g.spacing();
  for (int iy = 0; iy < nodes; ++iy)
    for (int ix = 0; ix < nodes; ++ix) g.at(ix, iy) = f(lo + ix * h, lo + iy * h);
  return g;
}

namespace {

// Matrix-free conjugate gradients for SPD systems.  Terminates when the
// recurrence residual drops below rel_tol * |b|; throws past max_iter.
void conjugate_gradient(const std::function<void(const std::vector<double>&, std::vector<double>&)>& apply,
                        const std::vector<double>& b, std::vector<double>& x, double rel_tol,
                        int max_iter) {
  const size_t n = b.size();
  x.assign(n, 0.0);
  std::vector<double> r = b;
  std::vector<double> p = b;
  std::vector<double> ap(n);

  double bb = 0.0;
  for (double v : b) bb += v * v;
  if (bb == 0.0) return;  // zero data: solution is identically zero
  const double stop = rel_tol * rel_tol * bb;

  double rr = bb;
  for (int it = 0; it < max_iter; ++it) {
    if (rr <= stop) return;
    apply(p, ap);
    double pap = 0.0;
    for (size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
    const double alpha = rr / pap;
    for (size_t i = 0; i < n; ++i) x[i] += alpha * p[i];
    for (size_t i = 0; i < n; ++i) r[i] -= alpha * ap[i];
    double rr_next = 0.0;
    for (double v : r) rr_next += v * v;
    const double beta = rr_next / rr;
    rr = rr_next;
    for (size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }
  if (rr > stop)
    throw std::runtime_error("poisson solve did not converge: relative residual " +
                             std::to_string(std::sqrt(rr / bb)) + " after " +
                             std::to_string(max_iter) + " iterations");
}

}  // namespace

GridField solve_poisson_square(const std::function<double(double, double)>& f, int nodes,
                               double rel_tol) {
  if (nodes < 3) throw std::invalid_argument("solve_poisson_square: need at least 3 nodes per side");
  const int n = nodes - 2;  // interior unknowns per side
  const double h = 1.0 / (nodes - 1);
  const double inv_h2 = 1.0 / (h * h);

  std::vector<double> rhs(static_cast<size_t>(n) * n);
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix) rhs[static_cast<size_t>(iy) * n + ix] = f((ix + 1) * h, (iy + 1) * h);

  auto apply = [n, inv_h2](const std::vector<double>& u, std::vector<double>& out) {
    for (int iy = 0; iy < n; ++iy) {
      for (int ix = 0; ix < n; ++ix) {
        const size_t k = static_cast<size_t>(iy) * n + ix;
        double s = 4.0 * u[k];
        if (ix > 0) s -= u[k - 1];
        if (ix < n - 1) s -= u[k + 1];
        if (iy > 0) s -= u[k - n];
        if (iy < n - 1) s -= u[k + n];
        out[k] = s * inv_h2;
      }
    }
  };

  std::vector<double> u;
  conjugate_gradient(apply, rhs, u, rel_tol, 30 * nodes);

  GridField g;
  g.nodes = nodes;
  g.lo = 0.0;
  g.hi = 1.0;
  g.v.assign(static_cast<size_t>(nodes) * nodes, 0.0);
  for (int iy = 0; iy < n; ++iy)
    for (int ix = 0; ix < n; ++ix) g.at(ix + 1, iy + 1) = u[static_cast<size_t>(iy) * n + ix];
  return g;
}

GridField solve_poisson_disk(const std::function<double(double, double)>& f, int nodes,
                             double rel_tol) {
  if (nodes < 3) throw std::invalid_argument("solve_poisson_disk: need at least 3 nodes per side");
  const double h = 2.0 / (nodes - 1);
  const double inv_h2 = 1.0 / (h * h);

  // Index map from lattice nodes strictly inside the unit circle to unknowns.
  std::vector<int64_t> id(static_cast<size_t>(nodes) * nodes, -1);
  std::vector<std::pair<int, int>> cells;
  for (int iy = 0; iy < nodes; ++iy) {
    for (int ix = 0; ix < nodes; ++ix) {
      const double x = -1.0 + ix * h;
      const double y = -1.0 + iy * h;
      if (x * x + y * y < 1.0) {
        id[static_cast<size_t>(iy) * nodes + ix] = static_cast<int64_t>(cells.size());
        cells.emplace_back(ix, iy);
      }
    }
  }

  std::vector<double> rhs(cells.size());
  for (size_t k = 0; k < cells.size(); ++k)
    rhs[k] = f(-1.0 + cells[k].first * h, -1.0 + cells[k].second * h);

  auto neighbour = [&](int ix, int iy) -> int64_t {
    if (ix < 0 || iy < 0 || ix >= nodes || iy >= nodes) return -1;
    return id[static_cast<size_t>(iy) * nodes + ix];
  };
  auto apply = [&](const std::vector<double>& u, std::vector<double>& out) {
    for (size_t k = 0; k < cells.size(); ++k) {
      const auto [ix, iy] = cells[k];
      double s = 4.0 * u[k];
      if (int64_t j = neighbour(ix - 1, iy); j >= 0) s -= u[j];
      if (int64_t j = neighbour(ix + 1, iy); j >= 0) s -= u[j];
      if (int64_t j = neighbour(ix, iy - 1); j >= 0) s -= u[j];
      if (int64_t j = neighbour(ix, iy + 1); j >= 0) s -= u[j];
      out[k] = s * inv_h2;
    }
  };

  std::vector<double> u;
  conjugate_gradient(apply, rhs, u, rel_tol, 30 * nodes);

  GridField g;
  g.nodes = nodes;
  g.lo = -1.0;
  g.hi = 1.0;
  g.v.assign(static_cast<size_t>(nodes) * nodes, 0.0);
  for (size_t k = 0; k < cells.size(); ++k)
    g.at(cells[k].first, cells[k].second) = u[k];
  return g;
}

std::vector<double> solve_poisson_disk_radial(const std::function<double(double)>& f, int nodes) {
  if (nodes < 3) throw std::invalid_argument("solve_poisson_disk_radial: need at least 3 nodes");
  const int n = nodes - 1;  // unknowns r_0 .. r_{n-1}; u(r_n = 1) = 0
  const double h = 1.0 / (nodes - 1);

  // Conservative form: -(r_{i+1/2} (u_{i+1}-u_i) - r_{i-1/2} (u_i-u_{i-1})) / (r_i h^2) = f_i.
  // At the origin the polar Laplacian of a smooth even function reduces to
  // 4 (u_1 - u_0) / h^2.
  std::vector<double> diag(n), lower(n, 0.0), upper(n, 0.0), rhs(n);
  diag[0] = 4.0 / (h * h);
  upper[0] = -4.0 / (h * h);
  rhs[0] = f(0.0);
  for (int i = 1; i < n; ++i) {
    const double r = i * h;
    const double rp = r + 0.5 * h;
    const double rm = r - 0.5 * h;
    diag[i] = (rp + rm) / (r * h * h);
    lower[i] = -rm / (r * h * h);
    upper[i] = -rp / (r * h * h);  // u_n = 0 drops the final coupling from the system
    rhs[i] = f(r);
  }

  // Thomas algorithm.
  std::vector<double> c(n, 0.0), u(n + 1, 0.0);
  c[0] = upper[0] / diag[0];
  rhs[0] /= diag[0];
  for (int i = 1; i < n; ++i) {
    const double m = diag[i] - lower[i] * c[i - 1];
    c[i] = upper[i] / m;
    rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / m;
  }
  u[n - 1] = rhs[n - 1];
  for (int i = n - 2; i >= 0; --i) u[i] = rhs[i] - c[i] * u[i + 1];
  return u;  // u[n] = 0 is the boundary node
}

}  // namespace gaot
