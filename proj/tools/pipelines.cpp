#include "pipelines.hpp"

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "gaot/dataset.hpp"
#include "gaot/eval.hpp"
#include "gaot/keyval.hpp"
#include "gaot/model.hpp"
#include "gaot/rng.hpp"
#include "gaot/train.hpp"
#include "gaot/version.hpp"

namespace fs = std::filesystem;

namespace gaot::cli {
namespace {

using Clock = std::chrono::steady_clock;

// ---- shared plumbing -------------------------------------------------------

Dataset synthesize_dataset(const RunConfig& cfg) {
  const DataSection& d = cfg.data;
  const GenSplit split{d.n_samples.at(0), d.n_samples.at(1), d.n_samples.at(2)};
  switch (d.generator) {
    case Generator::PoissonGauss:
      return gen_poisson_gauss(split, d.points, d.seed);
    case Generator::PoissonSinesDisk:
      return gen_poisson_sines_disk(split, d.points, static_cast<int>(d.k_modes), d.r_exp,
                                    d.seed);
    case Generator::Diffusion:
      return gen_diffusion(split, d.points, d.snapshots, d.nu, d.seed);
  }
  throw std::logic_error("synthesize_dataset: unhandled generator");
}

Dataset load_dataset_or_fail(const RunConfig& cfg) {
  if (cfg.data.out.empty()) {
    throw UsageError("data.out is empty: set it to the dataset path");
  }
  if (!fs::exists(cfg.data.out)) {
    throw std::runtime_error("dataset not found: " + cfg.data.out + " (run 'gaot generate' first)");
  }
  return load_dataset(cfg.data.out);
}

const std::vector<uint64_t>& split_ids(const Dataset& ds, const std::string& split) {
  if (split == "train") return ds.train_idx;
  if (split == "val") return ds.val_idx;
  if (split == "test") return ds.test_idx;
  throw UsageError("unknown split '" + split + "'");
}

// Fresh model from [model], with the latent cloud subsampled from the first
// training sample when the strategy asks for it.
GaotModel build_model(const RunConfig& cfg, const Dataset& ds) {
  Rng init(derive_seed(cfg.seed, "init"));
  GaotModel model = make_gaot(cfg.model, init);
  if (cfg.model.strategy == LatentStrategy::Subsample) {
    const uint64_t id = ds.train_idx.empty() ? 0 : ds.train_idx.front();
    const TrajectorySample& s = ds.samples.at(id);
    PointCloud cloud{static_cast<int>(ds.d), s.n, s.coords};
    set_latent_subsample(model, cloud, derive_seed(cfg.seed, "latent"));
  }
  return model;
}

// Builds self-query geometries for the listed samples and exposes them both
// as owned storage and as a sample-id-indexed pointer table (nullptr for
// samples outside the list), which is the layout train/evaluate expect.
struct GeometryTable {
  std::vector<SampleGeometry> store;
  std::vector<const SampleGeometry*> by_sample;
};

GeometryTable build_geometries(const GaotModel& model, const Dataset& ds,
                               const std::vector<uint64_t>& ids, const fs::path& cache_dir) {
  GeometryTable table;
  table.store.reserve(ids.size());
  table.by_sample.assign(ds.samples.size(), nullptr);
  for (uint64_t id : ids) {
    const TrajectorySample& s = ds.samples.at(id);
    table.store.push_back(model.prepare_geometry(s.coords, s.n, s.coords, s.n, cache_dir));
  }
  for (size_t k = 0; k < ids.size(); ++k) {
    table.by_sample[ids[k]] = &table.store[k];
  }
  return table;
}

void write_manifest(const fs::path& run_dir, const std::string& command, const RunConfig& cfg) {
  fs::create_directories(run_dir);
  const fs::path path = run_dir / "manifest.cfg";
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << "# gaot manifest\n";
  out << "# command = " << command << "\n";
  out << "# version = " << kVersion << "\n\n";
  out << emit_run_config(cfg);
  out.flush();
  if (!out) {
    throw std::runtime_error("failed writing " + path.string());
  }
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Single-sample prediction under the configured inference mode; returns the
// prediction plus the number of model evaluations it took.  Mirrors the
// selection logic of evaluate(): time-independent samples are predicted from
// their input fields, time-dependent ones from snapshot 0 to the final time.
std::pair<std::vector<double>, int64_t> predict_sample(const GaotModel& model,
                                                       const TrajectorySample& s,
                                                       const SampleGeometry& g, InferMode mode,
                                                       double ar_dt) {
  const int64_t m = model.cfg.out_channels;
  if (s.t_count <= 1) {
    return {model.step(g, s.input_fields, {}, 0.0, 0.0), 1};
  }
  std::vector<double> u0(s.snapshots.begin(), s.snapshots.begin() + s.n * m);
  const double t0 = s.times.front();
  const double t_final = s.times.back();
  if (mode == InferMode::Direct) {
    return {infer_direct(model, g, u0, u0, t0, t_final - t0), 1};
  }
  Rollout r = infer_autoregressive(model, g, u0, t0, ar_dt, t_final);
  return {std::move(r.prediction), r.evaluations};
}

// Everything evaluate and infer need before they diverge: a checkpointed
// model, the requested split, and its geometries.
struct EvalSetup {
  Dataset ds;
  GaotModel model;
  std::vector<uint64_t> ids;
  GeometryTable geos;
};

EvalSetup prepare_eval(const RunConfig& cfg, const RunPaths& paths) {
  if (cfg.eval.checkpoint.empty()) {
    throw UsageError("eval.checkpoint is empty: point it at a trained model");
  }
  if (cfg.eval.mode == InferMode::Autoregressive && !(cfg.eval.ar_dt > 0.0)) {
    throw UsageError("autoregressive evaluation needs eval.ar_dt > 0");
  }
  if (!fs::exists(cfg.eval.checkpoint)) {
    throw std::runtime_error("checkpoint not found: " + cfg.eval.checkpoint);
  }
  EvalSetup setup;
  setup.ds = load_dataset_or_fail(cfg);
  setup.model = load_checkpoint(cfg.eval.checkpoint);
  setup.ids = split_ids(setup.ds, cfg.eval.split);
  if (setup.ids.empty()) {
    throw UsageError("the '" + cfg.eval.split + "' split is empty");
  }
  setup.geos = build_geometries(setup.model, setup.ds, setup.ids, paths.cache_dir);
  return setup;
}

std::string stepping_name(Stepping s) {
  switch (s) {
    case Stepping::Output: return "output";
    case Stepping::Residual: return "residual";
    case Stepping::Derivative: return "derivative";
  }
  return "?";
}

std::string geometry_name(GeoMode g) {
  switch (g) {
    case GeoMode::Statistical: return "statistical";
    case GeoMode::PointNet: return "pointnet";
    case GeoMode::None: return "none";
  }
  return "?";
}

}  // namespace

// ---- path resolution -------------------------------------------------------

fs::path default_run_dir(uint64_t seed) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::snprintf(stamp, sizeof stamp, "%04d%02d%02d-%02d%02d%02d", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return fs::path("runs") / (std::string(stamp) + "-seed" + std::to_string(seed));
}

fs::path resolve_cache_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv("GAOT_CACHE_DIR"); env != nullptr && *env != '\0') {
    return fs::path(env);
  }
  if (cfg.data.out.empty()) {
    return {};
  }
  const fs::path dataset(cfg.data.out);
  if (dataset.has_parent_path()) {
    return dataset.parent_path() / "gaot_cache";
  }
  return fs::path("gaot_cache");
}

// ---- commands ----------------------------------------------------------------

void cmd_generate(const RunConfig& cfg, const RunPaths& paths) {
  if (cfg.data.out.empty()) {
    throw UsageError("data.out is empty: set it to the dataset output path");
  }
  Dataset ds = synthesize_dataset(cfg);
  const fs::path out(cfg.data.out);
  if (out.has_parent_path()) {
    fs::create_directories(out.parent_path());
  }
  save_dataset(out, ds);
  write_manifest(paths.run_dir, "generate", cfg);
  std::cout << "wrote " << out.string() << ": " << ds.samples.size() << " samples ("
            << ds.train_idx.size() << " train, " << ds.val_idx.size() << " val, "
            << ds.test_idx.size() << " test), " << cfg.data.points << " points each\n";
}

void cmd_train(const RunConfig& cfg, const RunPaths& paths) {
  Dataset ds = load_dataset_or_fail(cfg);
  if (ds.train_idx.empty()) {
    throw UsageError("the dataset has no training split");
  }
  GaotModel model = build_model(cfg, ds);
  GeometryTable geos = build_geometries(model, ds, ds.train_idx, paths.cache_dir);

  std::vector<const SampleGeometry*> train_geos;
  train_geos.reserve(ds.train_idx.size());
  for (uint64_t id : ds.train_idx) {
    train_geos.push_back(geos.by_sample[id]);
  }
  model.fit(ds, ds.train_idx, train_geos);

  TrainConfig tc;
  tc.epochs = cfg.train.epochs;
  tc.batch = cfg.train.batch;
  tc.seed = cfg.train.seed;
  tc.checkpoint_interval = cfg.train.checkpoint_interval;
  tc.checkpoint_dir = cfg.train.checkpoint_dir.empty() ? paths.run_dir / "checkpoints"
                                                       : fs::path(cfg.train.checkpoint_dir);
  tc.log_csv = paths.run_dir / "train.csv";
  const TrainResult res = train(model, ds, geos.by_sample, tc);

  write_manifest(paths.run_dir, "train", cfg);
  std::cout << "trained on " << res.items_per_epoch << " items/epoch for " << cfg.train.epochs
            << " epochs\n";
  if (!res.epoch_loss.empty()) {
    std::cout << "final loss = " << fmt17(res.epoch_loss.back()) << "\n";
  }
  if (!res.last_checkpoint.empty()) {
    std::cout << "checkpoint = " << res.last_checkpoint.string() << "\n";
  }
  std::cout << "log = " << tc.log_csv.string() << "\n";
}

void cmd_evaluate(const RunConfig& cfg, const RunPaths& paths) {
  EvalSetup setup = prepare_eval(cfg, paths);
  const EvalOptions opt{cfg.eval.mode, cfg.eval.ar_dt};
  const EvalReport rep = evaluate(setup.model, setup.ds, setup.ids, setup.geos.by_sample, opt);

  write_eval_csv(paths.run_dir / "report.csv", rep);

  const std::string summary = format_eval_summary(rep);
  {
    const fs::path path = paths.run_dir / "summary.txt";
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    out << summary;
  }

  PlotSeries errs;
  errs.name = "channel 0";
  for (size_t i = 0; i < rep.sample_ids.size(); ++i) {
    errs.x.push_back(static_cast<double>(rep.sample_ids[i]));
    errs.y.push_back(rep.errors[i][0]);
  }
  write_svg_plot(paths.run_dir / "errors.svg", "relative L1 by sample", "sample id",
                 "relative L1", {errs}, /*scatter=*/true);

  write_manifest(paths.run_dir, "evaluate", cfg);
  std::cout << summary;
  std::cout << "report = " << (paths.run_dir / "report.csv").string() << "\n";
}

void cmd_infer(const RunConfig& cfg, const RunPaths& paths) {
  EvalSetup setup = prepare_eval(cfg, paths);
  const int64_t m = setup.model.cfg.out_channels;

  const fs::path path = paths.run_dir / "predictions.csv";
  fs::create_directories(paths.run_dir);
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << "sample_id,point,channel,value\n";

  int64_t evaluations = 0;
  for (size_t k = 0; k < setup.ids.size(); ++k) {
    const uint64_t id = setup.ids[k];
    const TrajectorySample& s = setup.ds.samples[id];
    auto [pred, evals] =
        predict_sample(setup.model, s, setup.geos.store[k], cfg.eval.mode, cfg.eval.ar_dt);
    evaluations += evals;
    for (int64_t p = 0; p < s.n; ++p) {
      for (int64_t c = 0; c < m; ++c) {
        out << id << ',' << p << ',' << c << ',' << fmt17(pred[p * m + c]) << '\n';
      }
    }
  }
  out.flush();
  if (!out) {
    throw std::runtime_error("failed writing " + path.string());
  }

  write_manifest(paths.run_dir, "infer", cfg);
  std::cout << "wrote predictions for " << setup.ids.size() << " samples (" << evaluations
            << " model evaluations) to " << path.string() << "\n";
}

void cmd_bench(const RunConfig& cfg, const RunPaths& paths) {
  if (cfg.bench.sizes.empty()) {
    throw UsageError("bench.sizes is empty");
  }
  fs::create_directories(paths.run_dir);
  const fs::path path = paths.run_dir / "bench.csv";
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << "points,mode,samples_per_s,ms_per_sample\n";
  const std::string mode = cfg.bench.mode == BenchMode::Train ? "train" : "infer";

  for (int64_t size : cfg.bench.sizes) {
    // Fresh probe dataset at this resolution; two training samples are
    // enough to cycle work units through.  Probes stay in memory and skip
    // the neighborhood cache.
    RunConfig probe = cfg;
    probe.data.points = size;
    probe.data.n_samples = {2, 0, 0};
    probe.data.seed = derive_seed(cfg.seed, "bench", static_cast<uint64_t>(size));
    Dataset ds = synthesize_dataset(probe);

    GaotModel model = build_model(cfg, ds);
    GeometryTable geos = build_geometries(model, ds, ds.train_idx, fs::path{});
    std::vector<const SampleGeometry*> train_geos;
    for (uint64_t id : ds.train_idx) {
      train_geos.push_back(geos.by_sample[id]);
    }
    model.fit(ds, ds.train_idx, train_geos);

    const BenchResult r = bench(model, ds, geos.by_sample, cfg.bench.mode);
    out << size << ',' << mode << ',' << fmt17(r.samples_per_s) << ','
        << fmt17(r.ms_per_sample) << '\n';
    std::cout << size << " points: " << fmt17(r.samples_per_s) << " samples/s, "
              << fmt17(r.ms_per_sample) << " ms/sample (" << mode << ")\n";
  }
  out.flush();
  if (!out) {
    throw std::runtime_error("failed writing " + path.string());
  }
  write_manifest(paths.run_dir, "bench", cfg);
}

void cmd_ablate(const RunConfig& cfg, const RunPaths& paths) {
  Dataset ds = load_dataset_or_fail(cfg);
  if (ds.train_idx.empty() || ds.test_idx.empty()) {
    throw UsageError("ablation needs non-empty train and test splits");
  }
  for (uint64_t id : ds.train_idx) {
    if (ds.samples[id].t_count <= 1) {
      throw UsageError("ablation sweeps stepping rules and needs a time-dependent dataset");
    }
  }
  if (cfg.eval.mode == InferMode::Autoregressive && !(cfg.eval.ar_dt > 0.0)) {
    throw UsageError("autoregressive evaluation needs eval.ar_dt > 0");
  }

  // Variant grid: {single scale, configured multiscale ladder} x geometry
  // embedding x stepping rule, in that fixed order.
  const std::vector<double> single{1.0};
  const std::vector<double> multi = cfg.model.enc_scales.size() > 1
                                        ? cfg.model.enc_scales
                                        : std::vector<double>{2.0 / 3.0, 1.0, 4.0 / 3.0};
  const std::vector<std::pair<std::string, std::vector<double>>> scale_variants{
      {"single", single}, {"multi", multi}};
  const std::vector<GeoMode> geo_variants{GeoMode::Statistical, GeoMode::PointNet,
                                          GeoMode::None};
  const std::vector<Stepping> step_variants{Stepping::Output, Stepping::Residual,
                                            Stepping::Derivative};

  std::vector<uint64_t> work_ids = ds.train_idx;
  work_ids.insert(work_ids.end(), ds.test_idx.begin(), ds.test_idx.end());

  fs::create_directories(paths.run_dir);
  const fs::path path = paths.run_dir / "ablate.csv";
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << "scales,geometry,stepping,median_rel_l1,final_train_loss,train_seconds\n";

  uint64_t row = 0;
  for (const auto& [scales_name, scales] : scale_variants) {
    for (GeoMode geo : geo_variants) {
      for (Stepping stepping : step_variants) {
        RunConfig vcfg = cfg;
        vcfg.model.enc_scales = scales;
        vcfg.model.dec_scales = scales;
        vcfg.model.geometry = geo;
        vcfg.model.stepping = stepping;
        vcfg.seed = derive_seed(cfg.seed, "ablate-init", row);

        GaotModel model = build_model(vcfg, ds);
        GeometryTable geos = build_geometries(model, ds, work_ids, paths.cache_dir);
        std::vector<const SampleGeometry*> train_geos;
        for (uint64_t id : ds.train_idx) {
          train_geos.push_back(geos.by_sample[id]);
        }
        model.fit(ds, ds.train_idx, train_geos);

        TrainConfig tc;
        tc.epochs = cfg.train.epochs;
        tc.batch = cfg.train.batch;
        tc.seed = derive_seed(cfg.train.seed, "ablate", row);
        tc.checkpoint_interval = 0;
        const auto started = Clock::now();
        const TrainResult res = train(model, ds, geos.by_sample, tc);
        const double secs = std::chrono::duration<double>(Clock::now() - started).count();

        const EvalOptions opt{cfg.eval.mode, cfg.eval.ar_dt};
        const EvalReport rep = evaluate(model, ds, ds.test_idx, geos.by_sample, opt);

        const double final_loss = res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back();
        out << scales_name << ',' << geometry_name(geo) << ',' << stepping_name(stepping) << ','
            << fmt17(rep.median_rel_l1) << ',' << fmt17(final_loss) << ',' << fmt17(secs)
            << '\n';
        std::cout << scales_name << '/' << geometry_name(geo) << '/' << stepping_name(stepping)
                  << ": median rel L1 " << fmt17(rep.median_rel_l1) << ", final loss "
                  << fmt17(final_loss) << "\n";
        ++row;
      }
    }
  }
  out.flush();
  if (!out) {
    throw std::runtime_error("failed writing " + path.string());
  }
  write_manifest(paths.run_dir, "ablate", cfg);
  std::cout << "table = " << path.string() << "\n";
}

// ---- argv entry point --------------------------------------------------------

int run(const std::vector<std::string>& args) {
  CLI::App app{"geometry-aware neural operator toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string run_dir_flag;
  std::string mode_flag;
  double ar_dt_flag = 0.0;
  std::vector<std::string> sets;

  const std::pair<const char*, const char*> commands[] = {
      {"generate", "synthesize a dataset and write it to data.out"},
      {"train", "train a model on the configured dataset"},
      {"evaluate", "score a trained model on a dataset split"},
      {"infer", "write raw predictions for a dataset split"},
      {"bench", "measure throughput across point counts"},
      {"ablate", "sweep scales x geometry x stepping and tabulate errors"},
  };
  for (const auto& [name, desc] : commands) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config_path, "run configuration file")->required();
    sub->add_option("--set", sets, "override, as section.key=value (repeatable)");
    sub->add_option("--run-dir", run_dir_flag, "output directory for this run");
    if (std::string(name) == "evaluate" || std::string(name) == "infer") {
      sub->add_option("--mode", mode_flag, "inference mode: DR or AR");
      sub->add_option("--ar_dt", ar_dt_flag, "autoregressive rollout stride");
    }
  }

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("gaot");
  for (const std::string& a : args) {
    argv.push_back(a.c_str());
  }
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  CLI::App* picked = app.get_subcommands().front();
  const std::string command = picked->get_name();

  std::vector<std::string> overrides = sets;
  if (command == "evaluate" || command == "infer") {
    if (picked->count("--mode") > 0) {
      overrides.push_back("eval.mode=" + mode_flag);
    }
    if (picked->count("--ar_dt") > 0) {
      overrides.push_back("eval.ar_dt=" + kv::fmt_f64(ar_dt_flag));
    }
  }

  RunConfig cfg;
  try {
    cfg = load_run_config(config_path, overrides);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }

  RunPaths paths;
  paths.run_dir = run_dir_flag.empty() ? default_run_dir(cfg.seed) : fs::path(run_dir_flag);
  paths.cache_dir = resolve_cache_dir(cfg);

  try {
    if (command == "generate") {
      cmd_generate(cfg, paths);
    } else if (command == "train") {
      cmd_train(cfg, paths);
    } else if (command == "evaluate") {
      cmd_evaluate(cfg, paths);
    } else if (command == "infer") {
      cmd_infer(cfg, paths);
    } else if (command == "bench") {
      cmd_bench(cfg, paths);
    } else {
      cmd_ablate(cfg, paths);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  args.reserve(argc > 0 ? static_cast<size_t>(argc - 1) : 0);
  for (int i = 1; i < argc; ++i) {
    args.emplace_back(argv[i]);
  }
  return run(args);
}

}  // namespace gaot::cli
