#include "gaot/dataset.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "gaot/io.hpp"
#include "gaot/pde.hpp"

namespace gaot {

namespace {

constexpr char kMagic[9] = "GAOTDS1\0";
constexpr double kPi = 3.141592653589793238462643383279502884;

void check_splits(const Dataset& ds) {
  std::vector<int> seen(ds.samples.size(), 0);
  auto mark = [&](const std::vector<uint64_t>& idx, const char* name) {
    for (uint64_t i : idx) {
      if (i >= ds.samples.size())
        throw std::runtime_error("dataset split '" + std::string(name) + "' references sample " +
                                 std::to_string(i) + " of " + std::to_string(ds.samples.size()));
      if (seen[i]++)
        throw std::runtime_error("dataset splits overlap at sample " + std::to_string(i));
    }
  };
  mark(ds.train_idx, "train");
  mark(ds.val_idx, "val");
  mark(ds.test_idx, "test");
  for (size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw std::runtime_error("dataset splits omit sample " + std::to_string(i));
}

void check_sample(const TrajectorySample& s, const Dataset& ds, size_t which) {
  const auto bad = [&](const std::string& what) {
    throw std::runtime_error("dataset sample " + std::to_string(which) + ": " + what);
  };
  if (s.n <= 0 || s.t_count <= 0) bad("empty sample");
  if (static_cast<int64_t>(s.coords.size()) != s.n * ds.d) bad("coords size mismatch");
  if (static_cast<int64_t>(s.input_fields.size()) != s.n * ds.c_in) bad("input_fields size mismatch");
  if (static_cast<int64_t>(s.times.size()) != s.t_count) bad("times size mismatch");
  if (static_cast<int64_t>(s.snapshots.size()) != s.t_count * s.n * ds.m) bad("snapshots size mismatch");
  for (int64_t t = 1; t < s.t_count; ++t)
    if (!(s.times[t] > s.times[t - 1])) bad("times not strictly ascending");
  auto all_finite = [](const std::vector<double>& v) {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  };
  if (!all_finite(s.coords) || !all_finite(s.input_fields) || !all_finite(s.times) ||
      !all_finite(s.snapshots))
    bad("non-finite values");
}

std::vector<uint64_t> read_index_list(io::Reader& r) {
  const uint64_t n = r.u64();
  return r.u64s(n);
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  check_splits(ds);
  for (size_t i = 0; i < ds.samples.size(); ++i) check_sample(ds.samples[i], ds, i);

  io::Writer w(path);
  w.magic(kMagic);
  w.u32(1);  // version
  w.u32(static_cast<uint32_t>(ds.d));
  w.u32(static_cast<uint32_t>(ds.c_in));
  w.u32(static_cast<uint32_t>(ds.m));
  w.u64(ds.samples.size());
  for (const auto& s : ds.samples) {
    w.u64(static_cast<uint64_t>(s.n));
    w.u64(static_cast<uint64_t>(s.t_count));
    w.f64s(s.coords);
    w.f64s(s.input_fields);
    w.f64s(s.times);
    w.f64s(s.snapshots);
  }
  for (const auto* idx : {&ds.train_idx, &ds.val_idx, &ds.test_idx}) {
    w.u64(idx->size());
    w.u64s(*idx);
  }
  w.finish();
}

Dataset load_dataset(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic(kMagic);
  const uint32_t version = r.u32();
  if (version != 1)
    throw std::runtime_error(path.string() + ": unsupported dataset version " +
                             std::to_string(version));
  Dataset ds;
  ds.d = static_cast<int32_t>(r.u32());
  ds.c_in = static_cast<int32_t>(r.u32());
  ds.m = static_cast<int32_t>(r.u32());
  const uint64_t count = r.u64();
  ds.samples.resize(count);
  for (auto& s : ds.samples) {
    s.n = static_cast<int64_t>(r.u64());
    s.t_count = static_cast<int64_t>(r.u64());
    s.coords = r.f64s(static_cast<size_t>(s.n) * ds.d);
    s.input_fields = r.f64s(static_cast<size_t>(s.n) * ds.c_in);
    s.times = r.f64s(static_cast<size_t>(s.t_count));
    s.snapshots = r.f64s(static_cast<size_t>(s.t_count) * s.n * ds.m);
  }
  ds.train_idx = read_index_list(r);
  ds.val_idx = read_index_list(r);
  ds.test_idx = read_index_list(r);
  check_splits(ds);
  for (size_t i = 0; i < ds.samples.size(); ++i) check_sample(ds.samples[i], ds, i);
  return ds;
}

std::vector<std::pair<int64_t, int64_t>> all2all_pairs(const std::vector<double>& times) {
  for (size_t t = 1; t < times.size(); ++t)
    if (!(times[t] > times[t - 1]))
      throw std::invalid_argument("all2all_pairs: times must strictly ascend");
  std::vector<std::pair<int64_t, int64_t>> pairs;
  const int64_t t_count = static_cast<int64_t>(times.size());
  pairs.reserve(static_cast<size_t>(t_count * (t_count - 1) / 2));
  for (int64_t i = 0; i < t_count; ++i)
    for (int64_t j = i + 1; j < t_count; ++j) pairs.emplace_back(i, j);
  return pairs;
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

namespace {

void assign_splits(Dataset& ds, const GenSplit& split) {
  if (split.train < 0 || split.val < 0 || split.test < 0 || split.total() <= 0)
    throw std::invalid_argument("dataset split counts must be nonnegative with a positive total");
  uint64_t next = 0;
  for (int64_t i = 0; i < split.train; ++i) ds.train_idx.push_back(next++);
  for (int64_t i = 0; i < split.val; ++i) ds.val_idx.push_back(next++);
  for (int64_t i = 0; i < split.test; ++i) ds.test_idx.push_back(next++);
}

struct SampleStreams {
  Rng field;
  Rng points;
};

SampleStreams streams_for(uint64_t seed, int64_t sample) {
  const uint64_t s = derive_seed(seed, "sample", static_cast<uint64_t>(sample));
  return {Rng(derive_seed(s, "field")), Rng(derive_seed(s, "points"))};
}

}  // namespace

Dataset gen_poisson_gauss(const GenSplit& split, int64_t points, uint64_t seed) {
  if (points < 64) throw std::invalid_argument("gen_poisson_gauss: need at least 64 points per sample");
  constexpr int kNodes = 130;  // 128x128 interior unknowns

  Dataset ds;
  ds.d = 2;
  ds.c_in = 1;
  ds.m = 1;
  assign_splits(ds, split);

  for (int64_t si = 0; si < split.total(); ++si) {
    auto rng = streams_for(seed, si);

    struct Bump {
      double cx, cy, sigma, amp;
    };
    std::vector<Bump> bumps(1 + rng.field.below(3));
    for (auto& b : bumps) {
      b.cx = rng.field.uniform(0.2, 0.8);
      b.cy = rng.field.uniform(0.2, 0.8);
      b.sigma = rng.field.uniform(0.05, 0.15);
      b.amp = rng.field.uniform(0.5, 1.5) * (rng.field.uniform() < 0.5 ? -1.0 : 1.0);
    }
    auto f = [&bumps](double x, double y) {
      double s = 0.0;
      for (const auto& b : bumps) {
        const double dx = x - b.cx;
        const double dy = y - b.cy;
        s += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
      }
      return s;
    };

    const GridField fg = tabulate(f, kNodes, 0.0, 1.0);
    const GridField ug = solve_poisson_square(f, kNodes);

    TrajectorySample s;
    s.n = points;
    s.t_count = 1;
    s.times = {0.0};
    s.coords.reserve(points * 2);
    s.input_fields.reserve(points);
    s.snapshots.reserve(points);
    for (int64_t p = 0; p < points; ++p) {
      const double x = rng.points.uniform();
      const double y = rng.points.uniform();
      s.coords.push_back(2.0 * x - 1.0);
      s.coords.push_back(2.0 * y - 1.0);
      s.input_fields.push_back(sample_bilinear(fg, x, y));
      s.snapshots.push_back(sample_bilinear(ug, x, y));
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Dataset gen_poisson_sines_disk(const GenSplit& split, int64_t points, int k_modes, double r_exp,
                               uint64_t seed) {
  if (points < 64)
    throw std::invalid_argument("gen_poisson_sines_disk: need at least 64 points per sample");
  if (k_modes < 1) throw std::invalid_argument("gen_poisson_sines_disk: need k_modes >= 1");
  constexpr int kNodes = 257;  // masked lattice over [-1,1]^2

  Dataset ds;
  ds.d = 2;
  ds.c_in = 1;
  ds.m = 1;
  assign_splits(ds, split);

  for (int64_t si = 0; si < split.total(); ++si) {
    auto rng = streams_for(seed, si);

    // Coefficient grid a_ij, i, j = 1..K, amplitudes (i^2+j^2)^(-r_exp).
    std::vector<double> coef(static_cast<size_t>(k_modes) * k_modes);
    for (double& c : coef) c = rng.field.uniform(-1.0, 1.0);
    const double prefactor = kPi / (static_cast<double>(k_modes) * k_modes);
    auto f = [&](double x, double y) {
      // The sine expansion lives on (0,1)^2; the disk is mapped into it.
      const double xs = 0.5 * (x + 1.0);
      const double ys = 0.5 * (y + 1.0);
      double s = 0.0;
      for (int i = 1; i <= k_modes; ++i) {
        const double sx = std::sin(kPi * i * xs);
        for (int j = 1; j <= k_modes; ++j) {
          const double w = std::pow(static_cast<double>(i * i + j * j), -r_exp);
          s += coef[static_cast<size_t>(i - 1) * k_modes + (j - 1)] * w * sx *
               std::sin(kPi * j * ys);
        }
      }
      return prefactor * s;
    };

    const GridField ug = solve_poisson_disk(f, kNodes);

    TrajectorySample s;
    s.n = points;
    s.t_count = 1;
    s.times = {0.0};
    s.coords.reserve(points * 2);
    s.input_fields.reserve(points);
    s.snapshots.reserve(points);
    for (int64_t p = 0; p < points; ++p) {
      double x, y;
      do {
        x = rng.points.uniform(-1.0, 1.0);
        y = rng.points.uniform(-1.0, 1.0);
      } while (x * x + y * y >= 1.0);
      s.coords.push_back(x);
      s.coords.push_back(y);
      s.input_fields.push_back(f(x, y));
      s.snapshots.push_back(sample_bilinear(ug, x, y));
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

double DiffusionField::eval(double x, double y, double t) const {
  const double xs = 0.5 * (x + 1.0);
  const double ys = 0.5 * (y + 1.0);
  double s = 0.0;
  for (const auto& mo : modes) {
    const double arg = 2.0 * kPi * (mo.kx * xs + mo.ky * ys);
    const double decay =
        std::exp(-nu * 4.0 * kPi * kPi * (mo.kx * mo.kx + mo.ky * mo.ky) * t);
    s += decay * (mo.a_cos * std::cos(arg) + mo.a_sin * std::sin(arg));
  }
  return s;
}

DiffusionField random_diffusion_field(Rng& rng, double nu) {
  DiffusionField field;
  field.nu = nu;
  // Canonical half-plane of wave vectors with |k|_inf <= 2, so every real
  // mode appears exactly once: ky > 0, or ky == 0 with kx > 0.
  constexpr int kMax = 2;
  for (int ky = 0; ky <= kMax; ++ky) {
    for (int kx = -kMax; kx <= kMax; ++kx) {
      if (ky == 0 && kx <= 0) continue;
      const double scale = 1.0 / (kx * kx + ky * ky);
      field.modes.push_back({kx, ky, scale * rng.normal(), scale * rng.normal()});
    }
  }
  return field;
}

Dataset gen_diffusion(const GenSplit& split, int64_t points, int64_t snapshots, double nu,
                      uint64_t seed) {
  if (points < 64) throw std::invalid_argument("gen_diffusion: need at least 64 points per sample");
  if (snapshots < 3) throw std::invalid_argument("gen_diffusion: need at least 3 snapshots");
  if (!(nu > 0.0)) throw std::invalid_argument("gen_diffusion: need nu > 0");

  Dataset ds;
  ds.d = 2;
  ds.c_in = 1;
  ds.m = 1;
  assign_splits(ds, split);

  for (int64_t si = 0; si < split.total(); ++si) {
    auto rng = streams_for(seed, si);
    const DiffusionField field = random_diffusion_field(rng.field, nu);

    TrajectorySample s;
    s.n = points;
    s.t_count = snapshots;
    s.times.resize(snapshots);
    for (int64_t t = 0; t < snapshots; ++t)
      s.times[t] = static_cast<double>(t) / static_cast<double>(snapshots - 1);
    s.coords.reserve(points * 2);
    for (int64_t p = 0; p < points; ++p) {
      s.coords.push_back(rng.points.uniform(-1.0, 1.0));
      s.coords.push_back(rng.points.uniform(-1.0, 1.0));
    }
    s.snapshots.resize(static_cast<size_t>(snapshots) * points);
    for (int64_t t = 0; t < snapshots; ++t)
      for (int64_t p = 0; p < points; ++p)
        s.snapshots[static_cast<size_t>(t) * points + p] =
            field.eval(s.coords[2 * p], s.coords[2 * p + 1], s.times[t]);
    s.input_fields.assign(s.snapshots.begin(), s.snapshots.begin() + points);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace gaot
