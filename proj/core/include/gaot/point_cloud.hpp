#pragma once

#include <cstdint>
#include <vector>

#include "gaot/rng.hpp"

namespace gaot {

// Scattered sample locations in [-1,1]^d, row-major [n, d].
struct PointCloud {
  int d = 2;
  int64_t n = 0;
  std::vector<double> coords;
};

// Maps raw coordinates onto [-1,1] per axis (min -> -1, max -> +1).  An axis
// with zero extent collapses to 0.
std::vector<double> rescale_coords(const std::vector<double>& coords, int64_t n, int d);

// Latent token locations the encoder aggregates into.  Strategy I lays the
// tokens on an equispaced tensor-product grid spanning [-1,1]^d (grid_shape
// holds the per-axis counts); strategy II subsamples the input cloud and
// leaves grid_shape empty.
struct LatentGrid {
  int d = 2;
  std::vector<int64_t> grid_shape;
  std::vector<double> coords;

  int64_t size() const { return static_cast<int64_t>(coords.size()) / d; }
};

LatentGrid make_latent_grid(const std::vector<int64_t>& tokens_per_axis);
LatentGrid subsample_latent(const PointCloud& cloud, int64_t count, uint64_t seed);

}  // namespace gaot
