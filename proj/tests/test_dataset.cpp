#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "gaot/dataset.hpp"
#include "gaot/pde.hpp"

using namespace gaot;

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double manufactured_error(int nodes) {
  auto f = [](double x, double y) { return 2.0 * kPi * kPi * std::sin(kPi * x) * std::sin(kPi * y); };
  const GridField u = solve_poisson_square(f, nodes);
  const double h = u.spacing();
  double err = 0.0;
  for (int iy = 1; iy < nodes - 1; ++iy)
    for (int ix = 1; ix < nodes - 1; ++ix)
      err = std::max(err, std::abs(u.at(ix, iy) - std::sin(kPi * ix * h) * std::sin(kPi * iy * h)));
  return err;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("gaot_dataset_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("square Poisson solver reproduces a manufactured solution") {
  // u = sin(pi x) sin(pi y) solves -lap(u) = 2 pi^2 sin(pi x) sin(pi y).
  CHECK(manufactured_error(130) < 1e-3);
}

TEST_CASE("square Poisson solver converges at second order") {
  const double coarse = manufactured_error(66);   // h = 1/65
  const double fine = manufactured_error(130);    // h = 1/129
  const double ratio = coarse / fine;
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);
}

TEST_CASE("zero source yields the zero solution") {
  auto zero = [](double, double) { return 0.0; };
  const GridField us = solve_poisson_square(zero, 66);
  for (double v : us.v) CHECK(v == 0.0);
  const GridField ud = solve_poisson_disk(zero, 65);
  for (double v : ud.v) CHECK(v == 0.0);
}

TEST_CASE("radial disk solver matches the analytic constant-source solution") {
  // -lap(u) = 1 on the unit disk gives u = (1 - r^2)/4.
  const int nodes = 4097;
  const auto u = solve_poisson_disk_radial([](double) { return 1.0; }, nodes);
  double err = 0.0;
  for (int i = 0; i < nodes; ++i) {
    const double r = static_cast<double>(i) / (nodes - 1);
    err = std::max(err, std::abs(u[i] - 0.25 * (1.0 - r * r)));
  }
  CHECK(err < 1e-6);
}

TEST_CASE("masked Cartesian disk solve agrees with the radial reference") {
  auto fr = [](double r) { return std::cos(0.5 * kPi * r); };
  const int nr = 8193;
  const auto uref = solve_poisson_disk_radial(fr, nr);

  const int nodes = 257;
  const GridField u2d = solve_poisson_disk(
      [&fr](double x, double y) { return fr(std::sqrt(x * x + y * y)); }, nodes);

  // Compare on lattice nodes with r <= 0.9; the staircase boundary makes the
  // outermost band first-order accurate, the interior is what the datasets
  // sample from.
  const double h = u2d.spacing();
  const double hr = 1.0 / (nr - 1);
  double err = 0.0;
  for (int iy = 0; iy < nodes; ++iy) {
    for (int ix = 0; ix < nodes; ++ix) {
      const double x = -1.0 + ix * h;
      const double y = -1.0 + iy * h;
      const double r = std::sqrt(x * x + y * y);
      if (r > 0.9) continue;
      const double fr_idx = r / hr;
      const int k = std::min(static_cast<int>(fr_idx), nr - 2);
      const double t = fr_idx - k;
      const double ref = (1.0 - t) * uref[k] + t * uref[k + 1];
      err = std::max(err, std::abs(u2d.at(ix, iy) - ref));
    }
  }
  CHECK(err < 5e-3);
  CHECK(err > 0.0);  // the two discretizations genuinely differ
}

TEST_CASE("bilinear sampling is exact for bilinear functions and at nodes") {
  auto f = [](double x, double y) { return 2.0 * x - 3.0 * y + 0.5 + x * y; };
  const GridField g = tabulate(f, 9, -1.0, 1.0);
  CHECK(sample_bilinear(g, -1.0, -1.0) == f(-1.0, -1.0));
  CHECK(sample_bilinear(g, 0.25, 0.25) == doctest::Approx(f(0.25, 0.25)).epsilon(1e-14));
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    const double x = rng.uniform(-1.0, 1.0);
    const double y = rng.uniform(-1.0, 1.0);
    CHECK(sample_bilinear(g, x, y) == doctest::Approx(f(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("all2all pairing enumerates ordered snapshot pairs") {
  std::vector<double> t8(8);
  for (int i = 0; i < 8; ++i) t8[i] = 2.0 * i;
  CHECK(all2all_pairs(t8).size() == 28);

  CHECK(all2all_pairs({0.0, 1.0}).size() == 1);

  const auto p5 = all2all_pairs({0.0, 0.25, 0.5, 0.75, 1.0});
  REQUIRE(p5.size() == 10);
  // lexicographic order
  CHECK(p5.front() == std::pair<int64_t, int64_t>{0, 1});
  CHECK(p5[1] == std::pair<int64_t, int64_t>{0, 2});
  CHECK(p5[4] == std::pair<int64_t, int64_t>{1, 2});
  CHECK(p5.back() == std::pair<int64_t, int64_t>{3, 4});
  for (size_t i = 1; i < p5.size(); ++i) CHECK(p5[i - 1] < p5[i]);

  CHECK_THROWS_AS((void)all2all_pairs({0.0, 0.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS((void)all2all_pairs({1.0, 0.5}), std::invalid_argument);
}

TEST_CASE("diffusion field obeys the analytic per-mode decay") {
  DiffusionField field;
  field.nu = 0.07;
  field.modes.push_back({1, 0, 0.0, 1.0});  // sin mode along x

  Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    const double x = rng.uniform(-1.0, 1.0);
    const double y = rng.uniform(-1.0, 1.0);
    const double t = rng.uniform(0.0, 1.0);
    const double expected =
        std::exp(-0.07 * 4.0 * kPi * kPi * t) * std::sin(2.0 * kPi * 0.5 * (x + 1.0));
    CHECK(field.eval(x, y, t) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("diffusion trajectories start at the initial data and dissipate") {
  const Dataset ds = gen_diffusion({2, 0, 1}, 64, 5, 0.05, 99);
  REQUIRE(ds.samples.size() == 3);
  for (const auto& s : ds.samples) {
    REQUIRE(s.t_count == 5);
    CHECK(s.times.front() == 0.0);
    CHECK(s.times.back() == 1.0);
    // t = 0 snapshot is the input field, bit for bit
    for (int64_t p = 0; p < s.n; ++p) CHECK(s.snapshots[p] == s.input_fields[p]);
    // discrete energy never increases along the trajectory
    double prev = -1.0;
    for (int64_t t = 0; t < s.t_count; ++t) {
      double e = 0.0;
      for (int64_t p = 0; p < s.n; ++p) {
        const double v = s.snapshots[t * s.n + p];
        e += v * v;
      }
      if (t > 0) CHECK(e <= prev);
      prev = e;
    }
  }
}

TEST_CASE("generated coordinates stay inside the reference square") {
  auto check_coords = [](const Dataset& ds) {
    for (const auto& s : ds.samples)
      for (double c : s.coords) {
        CHECK(c >= -1.0);
        CHECK(c <= 1.0);
      }
  };
  check_coords(gen_poisson_gauss({1, 0, 1}, 64, 5));
  check_coords(gen_diffusion({1, 0, 1}, 64, 3, 0.05, 5));

  const Dataset disk = gen_poisson_sines_disk({1, 0, 1}, 64, 2, -0.5, 5);
  check_coords(disk);
  for (const auto& s : disk.samples)
    for (int64_t p = 0; p < s.n; ++p) {
      const double x = s.coords[2 * p];
      const double y = s.coords[2 * p + 1];
      CHECK(x * x + y * y < 1.0);
    }
}

TEST_CASE("dataset files round-trip bit-exactly and regenerate deterministically") {
  TempDir tmp;
  const Dataset ds = gen_poisson_gauss({2, 1, 1}, 64, 1234);
  const auto path_a = tmp.path / "a.gds";
  const auto path_b = tmp.path / "b.gds";
  save_dataset(path_a, ds);

  const Dataset back = load_dataset(path_a);
  REQUIRE(back.samples.size() == ds.samples.size());
  CHECK(back.d == ds.d);
  CHECK(back.c_in == ds.c_in);
  CHECK(back.m == ds.m);
  CHECK(back.train_idx == ds.train_idx);
  CHECK(back.val_idx == ds.val_idx);
  CHECK(back.test_idx == ds.test_idx);
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    CHECK(back.samples[i].coords == ds.samples[i].coords);
    CHECK(back.samples[i].input_fields == ds.samples[i].input_fields);
    CHECK(back.samples[i].times == ds.samples[i].times);
    CHECK(back.samples[i].snapshots == ds.samples[i].snapshots);
  }

  // identical seed, identical bytes
  save_dataset(path_b, gen_poisson_gauss({2, 1, 1}, 64, 1234));
  CHECK(slurp(path_a) == slurp(path_b));

  // a different seed must change the contents
  save_dataset(path_b, gen_poisson_gauss({2, 1, 1}, 64, 1235));
  CHECK(slurp(path_a) != slurp(path_b));
}

TEST_CASE("same seed with more points extends the same samples") {
  const Dataset small = gen_diffusion({1, 0, 0}, 64, 3, 0.05, 77);
  const Dataset big = gen_diffusion({1, 0, 0}, 128, 3, 0.05, 77);
  // the first 64 points of the larger set coincide with the smaller one
  for (int64_t p = 0; p < 64 * 2; ++p)
    CHECK(big.samples[0].coords[p] == small.samples[0].coords[p]);
  for (int64_t p = 0; p < 64; ++p)
    CHECK(big.samples[0].input_fields[p] == small.samples[0].input_fields[p]);
}

TEST_CASE("malformed splits and samples are rejected") {
  TempDir tmp;
  Dataset ds = gen_poisson_gauss({1, 0, 1}, 64, 3);

  SUBCASE("overlapping split indices") {
    ds.val_idx = {0};
    CHECK_THROWS_AS(save_dataset(tmp.path / "bad.gds", ds), std::runtime_error);
  }
  SUBCASE("missing sample coverage") {
    ds.test_idx.clear();
    CHECK_THROWS_AS(save_dataset(tmp.path / "bad.gds", ds), std::runtime_error);
  }
  SUBCASE("out-of-range index") {
    ds.test_idx = {7};
    CHECK_THROWS_AS(save_dataset(tmp.path / "bad.gds", ds), std::runtime_error);
  }
  SUBCASE("descending times") {
    ds.samples[0].times = {1.0};
    ds.samples[0].t_count = 1;
    // force a two-snapshot sample with bad ordering
    ds.samples[0].times = {0.5, 0.25};
    ds.samples[0].t_count = 2;
    ds.samples[0].snapshots.resize(2 * ds.samples[0].n);
    CHECK_THROWS_AS(save_dataset(tmp.path / "bad.gds", ds), std::runtime_error);
  }
  SUBCASE("non-finite values") {
    ds.samples[0].snapshots[0] = std::nan("");
    CHECK_THROWS_AS(save_dataset(tmp.path / "bad.gds", ds), std::runtime_error);
  }
}

TEST_CASE("generator argument validation") {
  CHECK_THROWS_AS((void)gen_poisson_gauss({1, 0, 0}, 32, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)gen_poisson_sines_disk({1, 0, 0}, 64, 0, -0.5, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)gen_diffusion({1, 0, 0}, 64, 2, 0.05, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)gen_diffusion({1, 0, 0}, 64, 3, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)gen_poisson_gauss({0, 0, 0}, 64, 1), std::invalid_argument);
}
