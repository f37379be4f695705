#pragma once

// Command pipelines behind the gaot executable: each subcommand reads one
// RunConfig, produces its outputs under a per-run directory, and leaves a
// manifest from which the run can be reproduced.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaot/runconfig.hpp"

namespace gaot::cli {

// Configuration problems detected before real work starts; mapped to exit
// code 1, unlike runtime failures which map to 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunPaths {
  std::filesystem::path run_dir;
  std::filesystem::path cache_dir;  // empty disables the neighborhood cache
};

// Per-command pipelines; all throw on failure (UsageError for config-level
// problems).  run() wires them to argv and exit codes.
void cmd_generate(const RunConfig& cfg, const RunPaths& paths);
void cmd_train(const RunConfig& cfg, const RunPaths& paths);
void cmd_evaluate(const RunConfig& cfg, const RunPaths& paths);
void cmd_infer(const RunConfig& cfg, const RunPaths& paths);
void cmd_bench(const RunConfig& cfg, const RunPaths& paths);
void cmd_ablate(const RunConfig& cfg, const RunPaths& paths);

// Default output directory for one run: runs/<UTC stamp>-seed<seed>.
std::filesystem::path default_run_dir(uint64_t seed);

// Neighborhood cache location: $GAOT_CACHE_DIR when set and nonempty,
// otherwise a gaot_cache directory next to the dataset file (empty when no
// dataset path is configured, which disables caching).
std::filesystem::path resolve_cache_dir(const RunConfig& cfg);

// Full command-line entry point: parses `<subcommand> --config FILE
// [--set section.key=value]... [--run-dir DIR] [--mode DR|AR] [--ar_dt X]`,
// loads the configuration, dispatches, and maps failures to exit codes
// (0 success, 1 usage or config error, 2 runtime failure).  Never throws.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace gaot::cli
