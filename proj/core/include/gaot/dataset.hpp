#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "gaot/rng.hpp"

namespace gaot {

// ---------------------------------------------------------------------------
// One PDE sample on a scattered point cloud.  Time-independent samples carry
// a single snapshot at time 0; time-dependent ones carry a trajectory with
// strictly ascending times.  All coordinates live in [-1,1]^d.
// ---------------------------------------------------------------------------
struct TrajectorySample {
  int64_t n = 0;        // collocation points
  int64_t t_count = 1;  // snapshots
  std::vector<double> coords;        // n * d
  std::vector<double> input_fields;  // n * c_in
  std::vector<double> times;         // t_count
  std::vector<double> snapshots;     // t_count * n * m, snapshot-major
};

struct Dataset {
  int32_t d = 2;
  int32_t c_in = 1;
  int32_t m = 1;
  std::vector<TrajectorySample> samples;
  std::vector<uint64_t> train_idx, val_idx, test_idx;
};

// Binary serialization (magic "GAOTDS1\0", little-endian).  Splits must be
// disjoint and cover all samples; both directions enforce that.
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

// Ordered snapshot pairs (i, j) with i < j, enumerated lexicographically:
// T snapshots yield T(T-1)/2 training pairs.  Times must strictly ascend.
std::vector<std::pair<int64_t, int64_t>> all2all_pairs(const std::vector<double>& times);

// ---------------------------------------------------------------------------
// Synthetic dataset generators.  Each sample draws from an independent
// stream derived from (seed, sample index), with separate sub-streams for
// the field and for the collocation points, so regenerating with a
// different point count reproduces the same underlying solutions.
// Splits are assigned in order: train first, then val, then test.
// ---------------------------------------------------------------------------
struct GenSplit {
  int64_t train = 0;
  int64_t val = 0;
  int64_t test = 0;

  int64_t total() const { return train + val + test; }
};

// Poisson -laplace(u) = f on the unit square, zero Dirichlet boundary, with
// f a random superposition of Gaussian bumps.  Solved by second-order finite
// differences on a 128x128 interior grid (CG, relative residual 1e-10); u
// and f are bilinearly interpolated at uniform random interior points and
// coordinates are rescaled to [-1,1]^2.
Dataset gen_poisson_gauss(const GenSplit& split, int64_t points, uint64_t seed);

// Poisson on the unit disk, zero Dirichlet boundary, with a double-sine
// source over modes 1..k_modes whose amplitudes scale as (i^2+j^2)^(-r_exp)
// (r_exp = -0.5 reproduces the reference configuration; k_modes = 16 its
// mode count, 8 the desk default).  Solved on a masked Cartesian grid and
// sampled at uniform random points inside the disk.
Dataset gen_poisson_sines_disk(const GenSplit& split, int64_t points, int k_modes, double r_exp,
                               uint64_t seed);

// Heat equation u_t = nu * laplace(u) on the periodic square with random
// low-frequency spectral initial data.  Snapshots are evaluated exactly via
// per-mode exponential decay at `snapshots` uniform times in [0,1].
Dataset gen_diffusion(const GenSplit& split, int64_t points, int64_t snapshots, double nu,
                      uint64_t seed);

// Exact solution underlying gen_diffusion, exposed for the analytic-decay
// oracle.  Coordinates live in [-1,1]^2 with period 2 per axis.
struct DiffusionField {
  struct Mode {
    int kx = 0, ky = 0;
    double a_cos = 0.0, a_sin = 0.0;
  };
  std::vector<Mode> modes;
  double nu = 0.05;

  double eval(double x, double y, double t) const;
};

DiffusionField random_diffusion_field(Rng& rng, double nu);

}  // namespace gaot
