// Throughput microbenchmarks for the hot paths: neighborhood construction,
// geometry preparation, a full forward step, and a forward/backward training
// step, each across point-cloud sizes.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <map>
#include <memory>
#include <vector>

#include "gaot/dataset.hpp"
#include "gaot/model.hpp"
#include "gaot/neighbor.hpp"
#include "gaot/rng.hpp"
#include "gaot/train.hpp"

namespace {

using namespace gaot;

std::vector<double> random_cloud(int64_t n, int d, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> coords(n * d);
  for (double& c : coords) c = rng.uniform(-1.0, 1.0);
  return coords;
}

GaotConfig bench_config() {
  GaotConfig cfg = desk_config();
  cfg.stepping = Stepping::Output;
  return cfg;
}

// One prepared problem instance per point count, built once and reused
// across iterations so the loop times only the operation under test.
struct Instance {
  GaotModel model;
  SampleGeometry geometry;
  Dataset dataset;
  std::vector<const SampleGeometry*> geos;
};

const Instance& instance_for(int64_t points) {
  static std::map<int64_t, std::unique_ptr<Instance>> cache;
  auto it = cache.find(points);
  if (it == cache.end()) {
    auto inst = std::make_unique<Instance>();
    inst->dataset = gen_poisson_gauss(GenSplit{1, 0, 0}, points, 99);
    Rng init(7);
    inst->model = make_gaot(bench_config(), init);
    const TrajectorySample& s = inst->dataset.samples[0];
    inst->geometry = inst->model.prepare_geometry(s.coords, s.n, s.coords, s.n);
    inst->geos = {&inst->geometry};
    inst->model.fit(inst->dataset, inst->dataset.train_idx, inst->geos);
    it = cache.emplace(points, std::move(inst)).first;
  }
  return *it->second;
}

void BM_NeighborBuild(benchmark::State& state) {
  const int64_t n = state.range(0);
  const std::vector<double> sources = random_cloud(n, 2, 13);
  const std::vector<double> centers = random_cloud(256, 2, 14);
  const std::vector<double> radii{0.0667, 0.10, 0.1333};
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_neighborhoods(centers, 256, sources, n, 2, radii));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_NeighborBuild)->Arg(256)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

void BM_PrepareGeometry(benchmark::State& state) {
  const int64_t n = state.range(0);
  const Instance& inst = instance_for(n);
  const TrajectorySample& s = inst.dataset.samples[0];
  for (auto _ : state) {
    benchmark::DoNotOptimize(inst.model.prepare_geometry(s.coords, s.n, s.coords, s.n));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_PrepareGeometry)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_ForwardStep(benchmark::State& state) {
  const int64_t n = state.range(0);
  const Instance& inst = instance_for(n);
  const TrajectorySample& s = inst.dataset.samples[0];
  for (auto _ : state) {
    benchmark::DoNotOptimize(inst.model.step(inst.geometry, s.input_fields, {}, 0.0, 0.0));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ForwardStep)->Arg(256)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const int64_t n = state.range(0);
  // Private mutable copy: gradients write into the model.
  Instance inst;
  inst.dataset = gen_poisson_gauss(GenSplit{1, 0, 0}, n, 99);
  Rng init(7);
  inst.model = make_gaot(bench_config(), init);
  const TrajectorySample& s = inst.dataset.samples[0];
  inst.geometry = inst.model.prepare_geometry(s.coords, s.n, s.coords, s.n);
  inst.geos = {&inst.geometry};
  inst.model.fit(inst.dataset, inst.dataset.train_idx, inst.geos);
  const std::vector<TrainItem> items{{0, 0, 0}};
  uint64_t round = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        batch_gradient(inst.model, inst.dataset, inst.geos, items, round++, true));
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_TrainStep)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
