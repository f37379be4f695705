#pragma once

#include <vector>

#include "gaot/mlp.hpp"
#include "gaot/neighbor.hpp"

namespace gaot {

// Per-neighborhood shape descriptors, 3 + 2d values per center:
//   [ count, mean distance, distance variance (population),
//     centroid offset (d), covariance eigenvalues descending (d) ]
// The covariance is taken about the neighbors' own centroid with the 1/n
// population convention; fewer than d neighbors zero it out.  An empty
// neighborhood zeroes the whole row.
int geom_stat_dim(int d);
std::vector<double> geometry_stats(const ScaleNeighborhood& nb, int d);  // [centers, 3+2d] row-major

// Eigenvalues of a symmetric d x d matrix (d <= 3) by cyclic Jacobi sweeps,
// converged when the off-diagonal Frobenius norm drops below tol.  Sorted
// descending.
std::vector<double> symmetric_eigenvalues(std::vector<double> a, int d, double tol = 1e-12);

// Per-component z-score fitted over training rows; std floored at 1e-8.
struct StatNormalizer {
  std::vector<double> mean, stdev;
};
StatNormalizer fit_stat_normalizer(const std::vector<double>& rows, int64_t n, int dim);
std::vector<double> apply_stat_normalizer(const StatNormalizer& nz, const std::vector<double>& rows, int64_t n);

enum class GeoMode { None, Statistical, PointNet };

// Statistical geometry embedding: z-scored stats through a shared MLP.  The
// stats are functions of geometry alone, so they enter the graph as
// constants; gradient flows into the MLP only.
struct StatEmbedding {
  Mlp mlp;                                  // (3+2d) -> geo_dim, shared across scales
  std::vector<StatNormalizer> normalizers;  // one per scale

  ad::Tensor embed(const std::vector<double>& stats, int64_t centers, size_t scale) const;
  void collect(const std::string& prefix, NamedParams& out) { mlp.collect(prefix + ".mlp", out); }
};

// PointNet-style alternative: a shared MLP on each relative displacement,
// mean-pooled per center, then a post MLP.  Empty neighborhoods pool to the
// zero vector before the post MLP.
struct PointNetEmbedding {
  Mlp point_mlp;  // d -> width
  Mlp post;       // width -> geo_dim

  ad::Tensor embed(const ScaleNeighborhood& nb, int d) const;
  void collect(const std::string& prefix, NamedParams& out) {
    point_mlp.collect(prefix + ".point", out);
    post.collect(prefix + ".post", out);
  }
};

}  // namespace gaot
