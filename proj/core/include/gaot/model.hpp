#pragma once

// Full encode-process-decode operator model: a multiscale attentional graph
// neural operator lifts scattered input fields onto latent tokens, a patch
// transformer processes the tokens, and a second graph operator decodes the
// result at arbitrary query points.  Time conditioning enters as two extra
// input channels (t and lead time tau, both divided by the dataset time
// scale); predictions are produced in z-scored target space and mapped back
// through the configured time-stepping rule u(t+tau) = gamma*u(t) + delta*S.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gaot/dataset.hpp"
#include "gaot/geometry.hpp"
#include "gaot/magno.hpp"
#include "gaot/point_cloud.hpp"
#include "gaot/processor.hpp"

namespace gaot {

enum class Stepping { Output, Residual, Derivative };
enum class LatentStrategy { Grid, Subsample };

struct GaotConfig {
  int d = 2;
  int64_t in_channels = 1;   // input field channels fed to the encoder
  int64_t out_channels = 1;  // solution channels m

  LatentStrategy strategy = LatentStrategy::Grid;
  std::vector<int64_t> latent_tokens{16, 16};  // per-axis counts (grid) or {count} (subsample)

  double enc_radius = 0.10;  // base aggregation radius r0, domain units on [-1,1]^d
  std::vector<double> enc_scales{2.0 / 3.0, 1.0, 4.0 / 3.0};  // per-scale radius factors
  double dec_radius = 0.10;
  std::vector<double> dec_scales{2.0 / 3.0, 1.0, 4.0 / 3.0};

  int64_t lift_channels = 16;  // latent token width
  int64_t attn_dim = 16;       // quadrature attention projection width
  bool attention = true;
  std::vector<int64_t> enc_hidden{32};   // encoder kernel MLP hidden layers
  std::vector<int64_t> dec_hidden{32};   // decoder kernel MLP hidden layers
  std::vector<int64_t> fuse_hidden{32};  // scale-fusion MLP hidden layers
  std::vector<int64_t> gate_hidden{16};  // scale-blend gate MLP hidden layers
  double edge_mask = 0.0;                // training-time encoder edge dropout ratio

  GeoMode geometry = GeoMode::Statistical;
  int64_t geo_dim = 8;                  // geometry embedding width, ignored when mode None
  std::vector<int64_t> geo_hidden{16};  // geometry embedding MLP hidden layers

  int64_t patch_size = 2;
  int64_t proc_blocks = 3;   // transformer depth
  int64_t proc_hidden = 64;  // transformer width
  int64_t proc_ffn = 256;
  int64_t proc_heads = 4;
  double dropout = 0.0;
  PosMode pos = PosMode::Rotary;  // grid strategy only; subsample always sinusoidal

  std::vector<int64_t> out_hidden{32};  // final per-point output MLP hidden layers
  Stepping stepping = Stepping::Output;
  double time_scale = 0.0;  // T_max; 0 = take from the dataset when fitting
};

// Desk-sized defaults (the GaotConfig initializers above) and the reference
// configuration from the source architecture table.
GaotConfig desk_config();
GaotConfig paper_default_config();

// Per-channel z-score statistics for inputs and training targets.  The
// target quantity depends on the stepping rule: the solution itself
// (output), the increment u(t+tau) - u(t) (residual), or the difference
// quotient (u(t+tau) - u(t)) / tau over pairs with tau > 0 (derivative).
// Stds are floored at 1e-8.
struct NormStats {
  std::vector<double> in_mean, in_std;
  std::vector<double> out_mean, out_std;
  bool fitted = false;
};

NormStats fit_normalization(const Dataset& ds, const std::vector<uint64_t>& train_idx,
                            Stepping stepping);

// Precomputed connectivity for one (point cloud, query set) pair: encoder
// neighborhoods from the physical points into the latent tokens, decoder
// neighborhoods from the tokens into the queries, and raw (unnormalized)
// geometry statistics per scale.  Displacements are retained only when the
// model needs them again (PointNet embeddings or edge masking).
struct SampleGeometry {
  int64_t n_points = 0;
  int64_t n_queries = 0;
  std::vector<double> point_coords;  // n_points * d
  std::vector<double> query_coords;  // n_queries * d
  MultiscaleNeighborhood enc;        // centers = latent tokens, sources = points
  MultiscaleNeighborhood dec;        // centers = queries, sources = latent tokens
  std::vector<std::vector<double>> enc_stats, dec_stats;  // per scale, row-major stat rows
};

struct GaotModel {
  GaotConfig cfg;
  LatentGrid latent;
  Magno encoder;
  Magno decoder;
  StatEmbedding geo_enc_stat, geo_dec_stat;      // Statistical mode
  PointNetEmbedding geo_enc_point, geo_dec_point;  // PointNet mode
  Processor processor;
  Mlp output_mlp;  // lift_channels -> out_channels
  NormStats norm;

  int64_t tokens() const { return latent.size(); }

  // Builds both neighborhood sets plus geometry stats for one sample.  A
  // non-empty cache_dir reuses neighborhoods stored there (content-addressed
  // over coordinates and radii) and stores freshly built ones.
  SampleGeometry prepare_geometry(const std::vector<double>& point_coords, int64_t n_points,
                                  const std::vector<double>& query_coords, int64_t n_queries,
                                  const std::filesystem::path& cache_dir = {}) const;

  // Raw network output at the query points, [n_queries, out_channels], in
  // normalized target space.  fields is [n_points, in_channels]; t and tau
  // are physical times (pass 0 for time-independent tasks).  rng drives
  // dropout and edge masking and is only consumed when training is true.
  ad::Tensor forward(const SampleGeometry& g, const std::vector<double>& fields, double t,
                     double tau, Rng& rng, bool training) const;

  // Full time step: denormalizes the network output and applies the stepping
  // rule.  u_t holds current values at the query points (used by the
  // gamma-term; pass the sample solution for residual/derivative stepping).
  // Runs untaped; requires fitted normalization.
  std::vector<double> step(const SampleGeometry& g, const std::vector<double>& fields,
                           const std::vector<double>& u_t, double t, double tau) const;

  // Fits input/target statistics, geometry-stat normalizers, and the time
  // scale from the training split.  train_geos must align with train_idx.
  void fit(const Dataset& ds, const std::vector<uint64_t>& train_idx,
           const std::vector<const SampleGeometry*>& train_geos);

  void collect(NamedParams& out);

  void save_checkpoint(const std::filesystem::path& path) const;
};

GaotModel make_gaot(const GaotConfig& cfg, Rng& rng);

// For the subsample latent strategy: draws the token locations from a point
// cloud (typically the first training sample) and installs them.
void set_latent_subsample(GaotModel& model, const PointCloud& cloud, uint64_t seed);

GaotModel load_checkpoint(const std::filesystem::path& path);

// Canonical key=value text for the model section of a configuration; the
// exact block embedded in checkpoints.  parse rejects unknown keys.
std::string emit_model_config(const GaotConfig& cfg);
GaotConfig parse_model_config(const std::string& text);

// Structural field checks shared by assembly and the configuration layer;
// throws std::invalid_argument naming the offending field.
void validate_model_config(const GaotConfig& cfg);

// Key-level access shared with the configuration layer: set_model_key
// applies one "key = value" assignment (returns false for unknown keys,
// throws on malformed values); model_config_items lists every key with its
// canonical value text, in canonical order.
bool set_model_key(GaotConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::pair<std::string, std::string>> model_config_items(const GaotConfig& cfg);

}  // namespace gaot
