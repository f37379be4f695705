#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gaot/neighbor.hpp"
#include "gaot/point_cloud.hpp"
#include "gaot/rng.hpp"

using namespace gaot;

namespace {

std::vector<double> random_cloud(int64_t n, int d, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> c(n * d);
  for (auto& v : c) v = rng.uniform(lo, hi);
  return c;
}

// Quadratic reference: same distance expression, same ordering contract.
ScaleNeighborhood brute_force(const std::vector<double>& centers, int64_t nc, const std::vector<double>& sources,
                              int64_t ns, int d, double r) {
  ScaleNeighborhood nb;
  nb.radius = r;
  nb.offsets.assign(nc + 1, 0);
  const double r2 = r * r;
  for (int64_t c = 0; c < nc; ++c) {
    for (int64_t s = 0; s < ns; ++s) {
      double d2 = 0.0;
      for (int a = 0; a < d; ++a) {
        const double dx = sources[s * d + a] - centers[c * d + a];
        d2 += dx * dx;
      }
      if (d2 <= r2) {
        nb.indices.push_back(s);
        for (int a = 0; a < d; ++a) nb.rel_disp.push_back(sources[s * d + a] - centers[c * d + a]);
      }
    }
    nb.offsets[c + 1] = static_cast<int64_t>(nb.indices.size());
  }
  return nb;
}

}  // namespace

TEST_CASE("radius search matches the brute-force reference exactly") {
  Rng rng(2024);
  for (int trial = 0; trial < 8; ++trial) {
    const int d = trial % 2 == 0 ? 2 : 3;
    const int64_t ns = 200 + 150 * trial, nc = 64;
    const auto sources = random_cloud(ns, d, rng);
    const auto centers = random_cloud(nc, d, rng);
    const std::vector<double> radii = {0.022, 0.033, 0.044, 0.25};
    const auto nb = build_neighborhoods(centers, nc, sources, ns, d, radii);
    REQUIRE(nb.scales.size() == radii.size());
    for (size_t m = 0; m < radii.size(); ++m) {
      const auto ref = brute_force(centers, nc, sources, ns, d, radii[m]);
      CHECK(nb.scales[m].offsets == ref.offsets);
      CHECK(nb.scales[m].indices == ref.indices);
      CHECK(nb.scales[m].rel_disp == ref.rel_disp);  // bitwise: same subtraction
    }
  }
}

TEST_CASE("closed ball includes sources exactly at the radius") {
  const std::vector<double> center = {0.0, 0.0};
  const std::vector<double> sources = {0.25, 0.0, 0.0, -0.25, 0.25, 0.25};
  const auto nb = build_neighborhoods(center, 1, sources, 3, 2, {0.25});
  CHECK(nb.scales[0].indices == std::vector<int64_t>{0, 1});
}

TEST_CASE("growing the radius only adds edges") {
  Rng rng(7);
  const auto sources = random_cloud(500, 2, rng);
  const auto centers = random_cloud(40, 2, rng);
  const auto nb = build_neighborhoods(centers, 40, sources, 500, 2, {0.05, 0.1, 0.2});
  for (int64_t c = 0; c < 40; ++c) {
    for (size_t m = 0; m + 1 < 3; ++m) {
      const auto& small = nb.scales[m];
      const auto& big = nb.scales[m + 1];
      for (int64_t e = small.offsets[c]; e < small.offsets[c + 1]; ++e) {
        bool found = false;
        for (int64_t f = big.offsets[c]; f < big.offsets[c + 1] && !found; ++f)
          found = big.indices[f] == small.indices[e];
        CHECK(found);
      }
    }
  }
}

TEST_CASE("empty neighborhoods are represented, not skipped") {
  const std::vector<double> centers = {0.0, 0.0, 0.9, 0.9};
  const std::vector<double> sources = {0.91, 0.9};
  const auto nb = build_neighborhoods(centers, 2, sources, 1, 2, {0.05});
  CHECK(nb.scales[0].offsets == std::vector<int64_t>{0, 0, 1});
  CHECK(nb.scales[0].count(0) == 0);
  CHECK(nb.scales[0].count(1) == 1);
}

TEST_CASE("drop_edges") {
  Rng rng(11);
  const auto sources = random_cloud(800, 2, rng);
  const auto centers = random_cloud(50, 2, rng);
  auto nb = build_neighborhoods(centers, 50, sources, 800, 2, {0.3});
  const int64_t total = nb.scales[0].edges();
  REQUIRE(total > 500);

  Rng keep_all(1);
  const auto same = drop_edges(nb, 0.0, keep_all);
  CHECK(same.scales[0].indices == nb.scales[0].indices);

  Rng r1(42), r2(42), r3(43);
  const auto a = drop_edges(nb, 0.5, r1);
  const auto b = drop_edges(nb, 0.5, r2);
  const auto c = drop_edges(nb, 0.5, r3);
  CHECK(a.scales[0].indices == b.scales[0].indices);
  CHECK(a.scales[0].indices != c.scales[0].indices);

  const double kept = static_cast<double>(a.scales[0].edges()) / static_cast<double>(total);
  CHECK(kept > 0.4);
  CHECK(kept < 0.6);
  CHECK(a.scales[0].offsets.back() == a.scales[0].edges());
  CHECK(static_cast<int64_t>(a.scales[0].rel_disp.size()) == 2 * a.scales[0].edges());

  CHECK_THROWS_AS(drop_edges(nb, 1.0, r1), std::invalid_argument);
}

TEST_CASE("neighborhood cache round-trips bit-exactly") {
  Rng rng(13);
  const auto sources = random_cloud(300, 2, rng);
  const auto centers = random_cloud(30, 2, rng);
  const std::vector<double> radii = {0.1, 0.2};
  const auto nb = build_neighborhoods(centers, 30, sources, 300, 2, radii);

  const auto dir = std::filesystem::temp_directory_path() / "gaot_nb_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "nb.bin";
  save_neighborhoods(path, nb);
  const auto loaded = load_neighborhoods(path, 2, radii);
  REQUIRE(loaded.scales.size() == 2);
  for (size_t m = 0; m < 2; ++m) {
    CHECK(loaded.scales[m].offsets == nb.scales[m].offsets);
    CHECK(loaded.scales[m].indices == nb.scales[m].indices);
    CHECK(loaded.scales[m].rel_disp == nb.scales[m].rel_disp);
    CHECK(loaded.scales[m].radius == radii[m]);
  }

  // writing the loaded structure again must reproduce the same bytes
  const auto path2 = dir / "nb2.bin";
  save_neighborhoods(path2, loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  CHECK_THROWS_AS(load_neighborhoods(path, 2, {0.1}), std::runtime_error);  // scale count mismatch
  std::filesystem::remove_all(dir);
}

TEST_CASE("cached_neighborhoods builds once then reloads") {
  Rng rng(17);
  const auto sources = random_cloud(100, 2, rng);
  const auto centers = random_cloud(10, 2, rng);
  const auto dir = std::filesystem::temp_directory_path() / "gaot_nb_cache_test";
  std::filesystem::remove_all(dir);
  const std::vector<double> radii = {0.2};
  const auto a = cached_neighborhoods(dir, centers, 10, sources, 100, 2, radii);
  CHECK(std::filesystem::exists(dir));
  const auto b = cached_neighborhoods(dir, centers, 10, sources, 100, 2, radii);
  CHECK(a.scales[0].indices == b.scales[0].indices);
  CHECK(a.scales[0].rel_disp == b.scales[0].rel_disp);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cache keys separate inputs and radii") {
  Rng rng(19);
  const auto s1 = random_cloud(50, 2, rng);
  const auto s2 = random_cloud(50, 2, rng);
  const auto c1 = random_cloud(5, 2, rng);
  CHECK(neighborhood_key(c1, s1, {0.1}) != neighborhood_key(c1, s2, {0.1}));
  CHECK(neighborhood_key(c1, s1, {0.1}) != neighborhood_key(c1, s1, {0.2}));
  CHECK(neighborhood_key(c1, s1, {0.1}) == neighborhood_key(c1, s1, {0.1}));
}

TEST_CASE("latent grid strategy I") {
  const auto g3 = make_latent_grid({3});
  CHECK(g3.coords == std::vector<double>{-1.0, 0.0, 1.0});

  const auto g = make_latent_grid({64, 64});
  CHECK(g.size() == 4096);
  CHECK(g.coords[0] == -1.0);
  CHECK(g.coords[1] == -1.0);
  CHECK(g.coords[g.coords.size() - 2] == 1.0);
  CHECK(g.coords.back() == 1.0);

  // row-major: last axis fastest
  const auto g23 = make_latent_grid({2, 3});
  CHECK(g23.size() == 6);
  CHECK(g23.coords[0 * 2 + 0] == -1.0);
  CHECK(g23.coords[0 * 2 + 1] == -1.0);
  CHECK(g23.coords[1 * 2 + 0] == -1.0);
  CHECK(g23.coords[1 * 2 + 1] == 0.0);
  CHECK(g23.coords[3 * 2 + 0] == 1.0);
  CHECK(g23.coords[3 * 2 + 1] == -1.0);

  const auto g1 = make_latent_grid({1, 4});
  CHECK(g1.coords[0] == 0.0);  // singleton axis sits at the center

  CHECK_THROWS_AS(make_latent_grid({}), std::invalid_argument);
  CHECK_THROWS_AS(make_latent_grid({0}), std::invalid_argument);
}

TEST_CASE("latent grid strategy II subsamples the cloud") {
  Rng rng(23);
  PointCloud cloud;
  cloud.d = 2;
  cloud.n = 100;
  cloud.coords = random_cloud(100, 2, rng);

  const auto a = subsample_latent(cloud, 32, 99);
  const auto b = subsample_latent(cloud, 32, 99);
  const auto c = subsample_latent(cloud, 32, 100);
  CHECK(a.size() == 32);
  CHECK(a.coords == b.coords);
  CHECK(a.coords != c.coords);
  CHECK(a.grid_shape.empty());

  // every token coordinate exists in the cloud
  for (int64_t i = 0; i < a.size(); ++i) {
    bool found = false;
    for (int64_t p = 0; p < cloud.n && !found; ++p)
      found = cloud.coords[p * 2] == a.coords[i * 2] && cloud.coords[p * 2 + 1] == a.coords[i * 2 + 1];
    CHECK(found);
  }

  CHECK_THROWS_AS(subsample_latent(cloud, 101, 1), std::invalid_argument);
}

TEST_CASE("rescale_coords maps the bounding box onto [-1,1]") {
  const std::vector<double> raw = {0.0, 10.0, 5.0, 10.0, 10.0, 10.0};
  const auto scaled = rescale_coords(raw, 3, 2);
  CHECK(scaled[0] == -1.0);
  CHECK(scaled[2] == 0.0);
  CHECK(scaled[4] == 1.0);
  // degenerate second axis collapses to 0
  CHECK(scaled[1] == 0.0);
  CHECK(scaled[3] == 0.0);
  CHECK(scaled[5] == 0.0);
}
