#pragma once

// Whole-run configuration: one flat, sectioned key=value file drives
// dataset generation, training, evaluation, inference, benchmarking, and
// ablation sweeps.
//
// Grammar, byte for byte:
//   - One statement per line; surrounding blanks and CR are trimmed.
//   - Blank lines and lines starting with '#' are ignored.
//   - '[data]', '[model]', '[train]', '[eval]', '[bench]' switch the
//     current section; any other bracketed line is an error.
//   - Every other line must read 'key = value' (split at the first '=');
//     unknown keys are errors naming the line.
//   - Before the first section header only the run-scope key 'seed' is
//     valid.
//   - Lists are comma-separated, reals use shortest round-trip formatting,
//     and booleans are 'on'/'off'.
//
// Every key has a default except file paths (data.out, eval.checkpoint,
// train.checkpoint_dir), which default to empty.  Section seeds left unset
// resolve from the run seed by fixed hashing (data: derive(seed, "data"),
// train: derive(seed, "train")), so a single top-level seed pins the whole
// pipeline while either stream can still be overridden by hand.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gaot/eval.hpp"
#include "gaot/model.hpp"

namespace gaot {

enum class Generator { PoissonGauss, PoissonSinesDisk, Diffusion };

struct DataSection {
  Generator generator = Generator::PoissonGauss;
  std::vector<int64_t> n_samples{256, 32, 32};  // train, val, test counts
  int64_t points = 1024;
  int64_t snapshots = 8;  // diffusion snapshot count
  double nu = 0.05;       // diffusion viscosity
  int64_t k_modes = 8;    // sines-disk mode count
  double r_exp = -0.5;    // sines-disk amplitude exponent
  uint64_t seed = 0;      // resolved from the run seed when absent
  std::string out;        // dataset file, shared by every other command
};

struct TrainSection {
  int64_t epochs = 200;
  int64_t batch = 8;
  uint64_t seed = 0;                 // resolved from the run seed when absent
  int64_t checkpoint_interval = 50;  // epochs between periodic saves; 0 disables
  std::string checkpoint_dir;        // empty = checkpoints/ under the run directory
};

struct EvalSection {
  std::string checkpoint;      // trained model to load
  std::string split = "test";  // train | val | test
  InferMode mode = InferMode::Direct;
  double ar_dt = 0.0;  // rollout stride; required in autoregressive mode
};

struct BenchSection {
  BenchMode mode = BenchMode::Infer;
  std::vector<int64_t> sizes{256, 512, 1024};  // point counts to probe
};

struct RunConfig {
  uint64_t seed = 0;
  DataSection data;
  GaotConfig model;
  TrainSection train;
  EvalSection eval;
  BenchSection bench;
};

// Parses a configuration.  overrides holds extra 'section.key=value'
// assignments (run scope: plain 'seed=...') applied after the file's lines
// and before seed resolution, which is how command-line --set flags and the
// --mode/--ar_dt shorthands land.  Malformed lines, unknown sections, and
// unknown keys raise std::runtime_error naming the line or override;
// structurally invalid values (bad counts, bad model fields) raise too.
RunConfig parse_run_config(const std::string& text,
                           const std::vector<std::string>& overrides = {});

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});

// Canonical emission: every key of every section, fixed order, round-trip
// value formatting.  parse(emit(cfg)) reproduces cfg exactly, and
// emit(parse(emit(cfg))) equals emit(cfg) byte for byte.
std::string emit_run_config(const RunConfig& cfg);

}  // namespace gaot
