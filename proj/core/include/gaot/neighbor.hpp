#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gaot/rng.hpp"

namespace gaot {

// Fixed-radius neighborhoods of one query set against one source set, CSR
// style.  Edge e of center c (offsets[c] <= e < offsets[c+1]) points at
// source indices[e]; rel_disp stores source - center, d doubles per edge.
// Sources within a center's bucket are in ascending index order.  The ball
// is closed: |x - y| <= r keeps the edge.
struct ScaleNeighborhood {
  double radius = 0.0;
  std::vector<int64_t> offsets;
  std::vector<int64_t> indices;
  std::vector<double> rel_disp;

  int64_t centers() const { return static_cast<int64_t>(offsets.size()) - 1; }
  int64_t edges() const { return static_cast<int64_t>(indices.size()); }
  int64_t count(int64_t c) const { return offsets[c + 1] - offsets[c]; }
};

struct MultiscaleNeighborhood {
  int d = 2;
  std::vector<ScaleNeighborhood> scales;
};

// Builds one neighborhood per radius via a uniform-cell spatial hash (cell
// edge = radius, 3^d cell scan per query).  Output is independent of hashing
// internals: candidates are sorted per center.
MultiscaleNeighborhood build_neighborhoods(const std::vector<double>& center_coords, int64_t n_centers,
                                           const std::vector<double>& source_coords, int64_t n_sources, int d,
                                           const std::vector<double>& radii);

// Training-time regularization: drops each edge independently with
// probability ratio.  Same seed, same kept set; ratio 0 returns the input.
MultiscaleNeighborhood drop_edges(const MultiscaleNeighborhood& nb, double ratio, Rng& rng);

// Binary cache, magic "GAOTNB1\0".  The file stores the CSR arrays only;
// radii and d come from the caller (the cache key covers both).
void save_neighborhoods(const std::filesystem::path& path, const MultiscaleNeighborhood& nb);
MultiscaleNeighborhood load_neighborhoods(const std::filesystem::path& path, int d,
                                          const std::vector<double>& radii);

// Content-addressed cache key over both coordinate sets and the radii.
uint64_t neighborhood_key(const std::vector<double>& center_coords, const std::vector<double>& source_coords,
                          const std::vector<double>& radii);

// Loads from cache_dir if present, otherwise builds and stores.
MultiscaleNeighborhood cached_neighborhoods(const std::filesystem::path& cache_dir,
                                            const std::vector<double>& center_coords, int64_t n_centers,
                                            const std::vector<double>& source_coords, int64_t n_sources, int d,
                                            const std::vector<double>& radii);

}  // namespace gaot
