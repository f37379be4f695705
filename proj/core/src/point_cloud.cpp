#include "gaot/point_cloud.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace gaot {

std::vector<double> rescale_coords(const std::vector<double>& coords, int64_t n, int d) {
  if (static_cast<int64_t>(coords.size()) != n * d)
    throw std::invalid_argument("rescale_coords: size mismatch");
  std::vector<double> lo(d, std::numeric_limits<double>::infinity());
  std::vector<double> hi(d, -std::numeric_limits<double>::infinity());
  for (int64_t i = 0; i < n; ++i)
    for (int a = 0; a < d; ++a) {
      lo[a] = std::min(lo[a], coords[i * d + a]);
      hi[a] = std::max(hi[a], coords[i * d + a]);
    }
  std::vector<double> out(coords.size());
  for (int64_t i = 0; i < n; ++i)
    for (int a = 0; a < d; ++a) {
      const double span = hi[a] - lo[a];
      out[i * d + a] = span > 0.0 ? -1.0 + 2.0 * (coords[i * d + a] - lo[a]) / span : 0.0;
    }
  return out;
}

LatentGrid make_latent_grid(const std::vector<int64_t>& tokens_per_axis) {
  if (tokens_per_axis.empty()) throw std::invalid_argument("make_latent_grid: no axes");
  for (const int64_t t : tokens_per_axis)
    if (t < 1) throw std::invalid_argument("make_latent_grid: axis needs at least one token");

  LatentGrid g;
  g.d = static_cast<int>(tokens_per_axis.size());
  g.grid_shape = tokens_per_axis;

  std::vector<std::vector<double>> axes(g.d);
  for (int a = 0; a < g.d; ++a) {
    const int64_t n = tokens_per_axis[a];
    axes[a].resize(n);
    for (int64_t j = 0; j < n; ++j)
      axes[a][j] = n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(n - 1);
  }

  const int64_t total = std::accumulate(tokens_per_axis.begin(), tokens_per_axis.end(), int64_t{1},
                                        std::multiplies<int64_t>());
  g.coords.resize(total * g.d);
  std::vector<int64_t> idx(g.d, 0);
  for (int64_t i = 0; i < total; ++i) {
    for (int a = 0; a < g.d; ++a) g.coords[i * g.d + a] = axes[a][idx[a]];
    for (int a = g.d - 1; a >= 0; --a) {  // last axis fastest
      if (++idx[a] < tokens_per_axis[a]) break;
      idx[a] = 0;
    }
  }
  return g;
}

LatentGrid subsample_latent(const PointCloud& cloud, int64_t count, uint64_t seed) {
  if (count > cloud.n)
    throw std::invalid_argument("subsample_latent: requested " + std::to_string(count) + " tokens from " +
                                std::to_string(cloud.n) + " points");
  if (count < 1) throw std::invalid_argument("subsample_latent: count must be positive");

  // partial Fisher-Yates, then sort for a canonical ordering
  std::vector<int64_t> perm(cloud.n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (int64_t i = 0; i < count; ++i) {
    const int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(cloud.n - i)));
    std::swap(perm[i], perm[j]);
  }
  perm.resize(count);
  std::sort(perm.begin(), perm.end());

  LatentGrid g;
  g.d = cloud.d;
  g.coords.resize(count * cloud.d);
  for (int64_t i = 0; i < count; ++i)
    for (int a = 0; a < cloud.d; ++a) g.coords[i * cloud.d + a] = cloud.coords[perm[i] * cloud.d + a];
  return g;
}

}  // namespace gaot
