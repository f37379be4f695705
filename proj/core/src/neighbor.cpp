#include "gaot/neighbor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "gaot/io.hpp"

namespace gaot {

namespace {

// 21 bits per axis, biased to keep cell indices positive
int64_t cell_key(const int64_t* c, int d) {
  int64_t key = 0;
  for (int a = 0; a < d; ++a) key = (key << 21) | ((c[a] + (int64_t{1} << 20)) & ((int64_t{1} << 21) - 1));
  return key;
}

ScaleNeighborhood build_one(const std::vector<double>& centers, int64_t nc, const std::vector<double>& sources,
                            int64_t ns, int d, double r) {
  if (r <= 0.0) throw std::invalid_argument("build_neighborhoods: radius must be positive");
  ScaleNeighborhood nb;
  nb.radius = r;
  nb.offsets.assign(nc + 1, 0);

  std::unordered_map<int64_t, std::vector<int64_t>> grid;
  grid.reserve(static_cast<size_t>(ns));
  const double inv_r = 1.0 / r;
  std::vector<int64_t> cell(d);
  for (int64_t s = 0; s < ns; ++s) {
    for (int a = 0; a < d; ++a) cell[a] = static_cast<int64_t>(std::floor(sources[s * d + a] * inv_r));
    grid[cell_key(cell.data(), d)].push_back(s);
  }

  const double r2 = r * r;
  std::vector<int64_t> hits;
  std::vector<int64_t> probe(d);
  for (int64_t c = 0; c < nc; ++c) {
    hits.clear();
    for (int a = 0; a < d; ++a) cell[a] = static_cast<int64_t>(std::floor(centers[c * d + a] * inv_r));
    // scan the 3^d block of cells around the query
    const int64_t n_cells = static_cast<int64_t>(std::pow(3.0, d));
    for (int64_t k = 0; k < n_cells; ++k) {
      int64_t rem = k;
      for (int a = 0; a < d; ++a) {
        probe[a] = cell[a] + (rem % 3) - 1;
        rem /= 3;
      }
      const auto it = grid.find(cell_key(probe.data(), d));
      if (it == grid.end()) continue;
      for (const int64_t s : it->second) {
        double d2 = 0.0;
        for (int a = 0; a < d; ++a) {
          const double dx = sources[s * d + a] - centers[c * d + a];
          d2 += dx * dx;
        }
        if (d2 <= r2) hits.push_back(s);
      }
    }
    std::sort(hits.begin(), hits.end());
    for (const int64_t s : hits) {
      nb.indices.push_back(s);
      for (int a = 0; a < d; ++a) nb.rel_disp.push_back(sources[s * d + a] - centers[c * d + a]);
    }
    nb.offsets[c + 1] = static_cast<int64_t>(nb.indices.size());
  }
  return nb;
}

}  // namespace

MultiscaleNeighborhood build_neighborhoods(const std::vector<double>& center_coords, int64_t n_centers,
                                           const std::vector<double>& source_coords, int64_t n_sources, int d,
                                           const std::vector<double>& radii) {
  if (d < 1 || d > 3) throw std::invalid_argument("build_neighborhoods: d must be 1, 2 or 3");
  if (static_cast<int64_t>(center_coords.size()) != n_centers * d ||
      static_cast<int64_t>(source_coords.size()) != n_sources * d)
    throw std::invalid_argument("build_neighborhoods: coordinate buffer size mismatch");
  if (radii.empty()) throw std::invalid_argument("build_neighborhoods: no radii");

  MultiscaleNeighborhood nb;
  nb.d = d;
  nb.scales.reserve(radii.size());
  for (const double r : radii) nb.scales.push_back(build_one(center_coords, n_centers, source_coords, n_sources, d, r));
  return nb;
}

MultiscaleNeighborhood drop_edges(const MultiscaleNeighborhood& nb, double ratio, Rng& rng) {
  if (ratio < 0.0 || ratio >= 1.0) throw std::invalid_argument("drop_edges: ratio must be in [0,1)");
  if (ratio == 0.0) return nb;
  MultiscaleNeighborhood out;
  out.d = nb.d;
  out.scales.resize(nb.scales.size());
  for (size_t m = 0; m < nb.scales.size(); ++m) {
    const ScaleNeighborhood& src = nb.scales[m];
    ScaleNeighborhood& dst = out.scales[m];
    dst.radius = src.radius;
    dst.offsets.assign(src.offsets.size(), 0);
    for (int64_t c = 0; c < src.centers(); ++c) {
      for (int64_t e = src.offsets[c]; e < src.offsets[c + 1]; ++e) {
        if (rng.uniform() < ratio) continue;
        dst.indices.push_back(src.indices[e]);
        for (int a = 0; a < nb.d; ++a) dst.rel_disp.push_back(src.rel_disp[e * nb.d + a]);
      }
      dst.offsets[c + 1] = static_cast<int64_t>(dst.indices.size());
    }
  }
  return out;
}

static constexpr char kNbMagic[9] = "GAOTNB1\0";

void save_neighborhoods(const std::filesystem::path& path, const MultiscaleNeighborhood& nb) {
  io::Writer w(path);
  w.magic(kNbMagic);
  w.u32(static_cast<uint32_t>(nb.scales.size()));
  for (const ScaleNeighborhood& s : nb.scales) {
    w.u64(static_cast<uint64_t>(s.centers()));
    w.u64(static_cast<uint64_t>(s.edges()));
    for (const int64_t v : s.offsets) w.u64(static_cast<uint64_t>(v));
    for (const int64_t v : s.indices) w.u64(static_cast<uint64_t>(v));
    w.f64s(s.rel_disp);
  }
  w.finish();
}

MultiscaleNeighborhood load_neighborhoods(const std::filesystem::path& path, int d,
                                          const std::vector<double>& radii) {
  io::Reader r(path);
  r.expect_magic(kNbMagic);
  const uint32_t n_scales = r.u32();
  if (n_scales != radii.size())
    throw std::runtime_error(path.string() + ": has " + std::to_string(n_scales) + " scales, expected " +
                             std::to_string(radii.size()));
  MultiscaleNeighborhood nb;
  nb.d = d;
  nb.scales.resize(n_scales);
  for (uint32_t m = 0; m < n_scales; ++m) {
    ScaleNeighborhood& s = nb.scales[m];
    s.radius = radii[m];
    const uint64_t centers = r.u64();
    const uint64_t edges = r.u64();
    const auto off = r.u64s(centers + 1);
    s.offsets.assign(off.begin(), off.end());
    const auto idx = r.u64s(edges);
    s.indices.assign(idx.begin(), idx.end());
    s.rel_disp = r.f64s(edges * static_cast<uint64_t>(d));
  }
  return nb;
}

uint64_t neighborhood_key(const std::vector<double>& center_coords, const std::vector<double>& source_coords,
                          const std::vector<double>& radii) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  mix(center_coords.data(), center_coords.size() * sizeof(double));
  mix(source_coords.data(), source_coords.size() * sizeof(double));
  mix(radii.data(), radii.size() * sizeof(double));
  return h;
}

MultiscaleNeighborhood cached_neighborhoods(const std::filesystem::path& cache_dir,
                                            const std::vector<double>& center_coords, int64_t n_centers,
                                            const std::vector<double>& source_coords, int64_t n_sources, int d,
                                            const std::vector<double>& radii) {
  char name[32];
  std::snprintf(name, sizeof name, "nb_%016llx.bin",
                static_cast<unsigned long long>(neighborhood_key(center_coords, source_coords, radii)));
  const std::filesystem::path path = cache_dir / name;
  if (std::filesystem::exists(path)) return load_neighborhoods(path, d, radii);
  MultiscaleNeighborhood nb =
      build_neighborhoods(center_coords, n_centers, source_coords, n_sources, d, radii);
  std::filesystem::create_directories(cache_dir);
  save_neighborhoods(path, nb);
  return nb;
}

}  // namespace gaot
