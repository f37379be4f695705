#pragma once

// Optimization loop: MSE in normalized target space, AdamW with decoupled
// weight decay, a warmup/cosine/constant learning-rate schedule, globally
// shuffled snapshot pairs, CSV metrics, and periodic checkpoints.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gaot/model.hpp"

namespace gaot {

// ---- learning-rate schedule ----------------------------------------------

struct ScheduleConfig {
  int64_t total_epochs = 200;
  double warmup_frac = 0.10;
  double cosine_frac = 0.85;
  double lr_start = 8e-4;
  double lr_peak = 1e-3;
  double lr_cos_end = 1e-4;
  double lr_final = 5e-5;
};

// Piecewise schedule over whole epochs: linear from lr_start to lr_peak over
// the warmup epochs, half-cosine from lr_peak down to lr_cos_end over the
// cosine epochs, then constant lr_final.  Continuous at the warmup/cosine
// boundary (both sides equal lr_peak).  Throws when epoch is out of range.
double lr_at(int64_t epoch, const ScheduleConfig& cfg);

// ---- optimizer -------------------------------------------------------------

// AdamW: bias-corrected adaptive moments plus weight decay applied directly
// to the parameter (decoupled from the gradient).  Throws on non-finite
// gradients, naming the offending parameter.
class AdamW {
 public:
  explicit AdamW(NamedParams params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                 double weight_decay = 1e-5);

  void step(double lr);
  int64_t steps() const { return t_; }

 private:
  NamedParams params_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
  double beta1_, beta2_, eps_, wd_;
};

// ---- training loop ---------------------------------------------------------

// One training item: a (source snapshot, target snapshot) pair of one
// sample.  Time-independent samples contribute a single {sample, 0, 0} item
// whose input is the sample's input fields and whose target is snapshot 0.
struct TrainItem {
  uint64_t sample = 0;
  int64_t t_from = 0;
  int64_t t_to = 0;
};

// Enumerates training items for the configured stepping rule: all ordered
// snapshot pairs for time-dependent samples (derivative stepping skips
// zero-lead pairs), one item per time-independent sample under the output
// rule.
std::vector<TrainItem> training_items(const Dataset& ds, const std::vector<uint64_t>& idx,
                                      Stepping stepping);

// Evaluates the batch loss (mean over items of per-item MSE in normalized
// target space) and leaves the mean gradient in the parameter grad slots.
// Per-item gradients and losses are reduced in ascending (sample, t_from,
// t_to) order, and dropout/edge-mask randomness is derived from the seed
// per item rather than drawn from a shared stream, so the result is
// bit-identical under any permutation of items.  geos must be indexable by
// sample id.
double batch_gradient(GaotModel& model, const Dataset& ds,
                      const std::vector<const SampleGeometry*>& geos,
                      std::vector<TrainItem> items, uint64_t seed, bool training);

struct TrainConfig {
  int64_t epochs = 200;
  int64_t batch = 8;
  uint64_t seed = 0;
  int64_t checkpoint_interval = 0;        // in epochs; 0 disables periodic saves
  std::filesystem::path checkpoint_dir;   // empty disables checkpoints entirely
  std::filesystem::path log_csv;          // empty disables the metrics log
  double weight_decay = 1e-5;
  ScheduleConfig schedule;                // total_epochs is overwritten with epochs
};

struct TrainResult {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_lr;
  int64_t items_per_epoch = 0;
  std::filesystem::path last_checkpoint;  // empty when checkpoints are disabled
};

// Runs the full loop: per epoch, globally shuffles the training items,
// walks them in batches, applies one optimizer step per batch at
// lr_at(epoch), appends `epoch,loss,lr,seconds` to the CSV, and saves
// checkpoints at the configured interval and after the final epoch.  The
// model must be fitted (normalization statistics present).  A non-finite
// batch loss aborts with an exception; previously written checkpoints are
// left in place.
TrainResult train(GaotModel& model, const Dataset& ds,
                  const std::vector<const SampleGeometry*>& geos, const TrainConfig& cfg);

}  // namespace gaot
