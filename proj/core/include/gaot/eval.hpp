#pragma once

// Evaluation layer: per-channel relative L1 errors with lower-middle
// medians, cross-model normalized and robustness scores, direct and
// autoregressive inference drivers, wall-clock benchmarking, and report
// emission (CSV rows, a structured text summary, simple SVG charts).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gaot/model.hpp"

namespace gaot {

// ---- metrics ---------------------------------------------------------------

// Per-channel discretized relative L1 error between row-major [n, m] value
// tables: (1/n) sum_i |truth_i - pred_i| / max(|truth_i|, 1e-12).  The
// per-point ratios are reduced in sorted order, so the result is
// bit-identical under any permutation applied jointly to both row sets.
std::vector<double> relative_l1(const std::vector<double>& pred, const std::vector<double>& truth,
                                int64_t n, int64_t m);

// Median with the lower-middle convention: after sorting, the element at
// index (count - 1) / 2.  Even counts take the lower of the two middle
// values instead of averaging, keeping the result deterministic and drawn
// from the data.
double median_lower(std::vector<double> values);

// Cross-model comparison: the best (smallest) error scores exactly 1 and
// every other model scores best/own.  Errors must be positive.
std::vector<double> normalized_scores(const std::vector<double>& errors);

// mean(scores) * (1 - std/mean) with the population standard deviation,
// computed as mean - std (the same quantity without the divide/multiply
// rounding).  The mean must be positive.
double robustness_score(const std::vector<double>& scores);

// ---- inference -------------------------------------------------------------

// Single-shot prediction of u(t + tau) at the query points; exactly one
// step() call, bit for bit.
std::vector<double> infer_direct(const GaotModel& model, const SampleGeometry& g,
                                 const std::vector<double>& fields, const std::vector<double>& u_t,
                                 double t, double tau);

struct Rollout {
  std::vector<double> prediction;  // n_queries * out_channels values at t_final
  int64_t evaluations = 0;         // model steps performed
};

// Fixed-stride rollout from (t0, u0) to t_final: repeatedly steps by dt_ar,
// feeding each prediction back as the next input.  Queries must coincide
// with the points and input/output channel counts must match, and the
// horizon must be a whole multiple of dt_ar within 1e-9.
Rollout infer_autoregressive(const GaotModel& model, const SampleGeometry& g,
                             const std::vector<double>& u0, double t0, double dt_ar,
                             double t_final);

// ---- benchmarking ----------------------------------------------------------

enum class BenchMode { Train, Infer };

struct BenchResult {
  double samples_per_s = 0.0;
  double ms_per_sample = 0.0;
  int64_t warmup = 0;
  int64_t reps = 0;
};

// Wall-clock throughput over single-sample work units cycled round-robin
// through the dataset: forward + backward + one optimizer step per unit in
// train mode, one step() call per unit in infer mode (batch size 1).
// warmup units run untimed, then reps units are timed as one block.  Train
// mode restores the parameter values afterwards.  geos must be indexable by
// sample id.
BenchResult bench(GaotModel& model, const Dataset& ds,
                  const std::vector<const SampleGeometry*>& geos, BenchMode mode,
                  int64_t warmup = 10, int64_t reps = 100, uint64_t seed = 0);

// ---- reports ---------------------------------------------------------------

enum class InferMode { Direct, Autoregressive };

struct EvalOptions {
  InferMode mode = InferMode::Direct;
  double ar_dt = 0.0;  // rollout stride; required in autoregressive mode
};

struct EvalReport {
  std::vector<uint64_t> sample_ids;         // evaluated dataset indices
  std::vector<std::vector<double>> errors;  // [sample][channel] relative L1
  std::vector<double> channel_medians;      // lower-middle median per channel
  double median_rel_l1 = 0.0;               // mean of the channel medians
  double seconds = 0.0;                     // wall time spent in model evaluations
  double samples_per_s = 0.0;
  double ms_per_sample = 0.0;
  int64_t model_evaluations = 0;  // step() calls performed
  std::string mode;               // "DR" or "AR"
  std::string config_echo;        // canonical model config block
};

// Scores the model over the listed samples against their stored solutions.
// Time-independent samples are predicted from their input fields;
// time-dependent ones start from the first snapshot and are scored at the
// final one, either via a single step spanning the whole horizon (direct)
// or a fixed-stride rollout (autoregressive).  geos must be indexable by
// sample id and use each sample's own points as the queries, since that is
// where the reference values live.
EvalReport evaluate(const GaotModel& model, const Dataset& ds, const std::vector<uint64_t>& idx,
                    const std::vector<const SampleGeometry*>& geos, const EvalOptions& opt = {});

// One `sample_id,channel,rel_l1` row per error entry, after a header line.
void write_eval_csv(const std::filesystem::path& path, const EvalReport& report);

// Key = value block with counts, medians and timing, followed by the
// indented model config echo.
std::string format_eval_summary(const EvalReport& report);

// ---- SVG charts ------------------------------------------------------------

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};

// Minimal self-contained chart: axes with range labels, one polyline (line
// mode) or dot set (scatter mode) per series, and a legend.  Meant for
// error-versus-resolution and loss-curve plots; no external viewer
// dependencies beyond plain SVG.
void write_svg_plot(const std::filesystem::path& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<PlotSeries>& series, bool scatter);

}  // namespace gaot
