#include "gaot/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "gaot/io.hpp"
#include "gaot/keyval.hpp"
#include "gaot/ops.hpp"

namespace gaot {

namespace {

constexpr char kMagic[9] = "GAOTCK1\0";

double floored_std(double variance) { return std::max(std::sqrt(std::max(variance, 0.0)), 1e-8); }

// Streaming per-channel mean/std accumulator (population convention).
struct ChannelStats {
  int64_t channels = 0;
  int64_t count = 0;
  std::vector<double> sum, sumsq;

  explicit ChannelStats(int64_t c) : channels(c), sum(c, 0.0), sumsq(c, 0.0) {}

  void add_rows(const double* data, int64_t rows) {
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t c = 0; c < channels; ++c) {
        const double v = data[r * channels + c];
        sum[c] += v;
        sumsq[c] += v * v;
      }
    count += rows;
  }

  void finish(std::vector<double>& mean, std::vector<double>& stdev) const {
    if (count == 0) throw std::runtime_error("normalization fit saw no data");
    mean.resize(channels);
    stdev.resize(channels);
    for (int64_t c = 0; c < channels; ++c) {
      mean[c] = sum[c] / count;
      stdev[c] = floored_std(sumsq[c] / count - mean[c] * mean[c]);
    }
  }
};

}  // namespace

GaotConfig desk_config() { return {}; }

GaotConfig paper_default_config() {
  GaotConfig c;
  c.latent_tokens = {64, 64};
  c.enc_radius = c.dec_radius = 0.033;
  c.enc_scales = c.dec_scales = {1.0};
  c.lift_channels = 32;
  c.attn_dim = 32;
  c.enc_hidden = {64, 64, 64};
  c.dec_hidden = {64, 64};
  c.fuse_hidden = {256};
  c.gate_hidden = {64};
  c.geometry = GeoMode::Statistical;
  c.geo_dim = 16;
  c.geo_hidden = {64};
  c.patch_size = 2;
  c.proc_blocks = 5;
  c.proc_hidden = 256;
  c.proc_ffn = 1024;
  c.proc_heads = 8;
  c.dropout = 0.2;
  c.pos = PosMode::Rotary;
  c.out_hidden = {64};
  return c;
}

// ---------------------------------------------------------------------------
// Config text
// ---------------------------------------------------------------------------

bool set_model_key(GaotConfig& cfg, const std::string& key, const std::string& value) {
  using namespace kv;
  if (key == "d") cfg.d = static_cast<int>(parse_i64(key, value));
  else if (key == "in_channels") cfg.in_channels = parse_i64(key, value);
  else if (key == "out_channels") cfg.out_channels = parse_i64(key, value);
  else if (key == "TS") {
    if (value == "grid") cfg.strategy = LatentStrategy::Grid;
    else if (value == "subsample") cfg.strategy = LatentStrategy::Subsample;
    else bad_value(key, value, "'grid' or 'subsample'");
  } else if (key == "NT") cfg.latent_tokens = parse_i64_list(key, value);
  else if (key == "GR") cfg.enc_radius = parse_f64(key, value);
  else if (key == "scales") cfg.enc_scales = parse_f64_list(key, value);
  else if (key == "dec_GR") cfg.dec_radius = parse_f64(key, value);
  else if (key == "dec_scales") cfg.dec_scales = parse_f64_list(key, value);
  else if (key == "LC") cfg.lift_channels = parse_i64(key, value);
  else if (key == "attn_dim") cfg.attn_dim = parse_i64(key, value);
  else if (key == "attention") cfg.attention = parse_bool(key, value);
  else if (key == "ENC-MLP") cfg.enc_hidden = parse_i64_list(key, value);
  else if (key == "DEC-MLP") cfg.dec_hidden = parse_i64_list(key, value);
  else if (key == "FUSE-MLP") cfg.fuse_hidden = parse_i64_list(key, value);
  else if (key == "GATE-MLP") cfg.gate_hidden = parse_i64_list(key, value);
  else if (key == "EM") cfg.edge_mask = parse_f64(key, value);
  else if (key == "GeoEmb") {
    if (value == "statistical") cfg.geometry = GeoMode::Statistical;
    else if (value == "pointnet") cfg.geometry = GeoMode::PointNet;
    else if (value == "none") cfg.geometry = GeoMode::None;
    else bad_value(key, value, "'statistical', 'pointnet' or 'none'");
  } else if (key == "geo_dim") cfg.geo_dim = parse_i64(key, value);
  else if (key == "GEO-MLP") cfg.geo_hidden = parse_i64_list(key, value);
  else if (key == "PS") cfg.patch_size = parse_i64(key, value);
  else if (key == "TL") cfg.proc_blocks = parse_i64(key, value);
  else if (key == "THS") cfg.proc_hidden = parse_i64(key, value);
  else if (key == "FFN") cfg.proc_ffn = parse_i64(key, value);
  else if (key == "HEAD") cfg.proc_heads = parse_i64(key, value);
  else if (key == "Dropout") cfg.dropout = parse_f64(key, value);
  else if (key == "PE") {
    if (value == "rope") cfg.pos = PosMode::Rotary;
    else if (value == "sincos") cfg.pos = PosMode::Sinusoidal;
    else bad_value(key, value, "'rope' or 'sincos'");
  } else if (key == "OUT-MLP") cfg.out_hidden = parse_i64_list(key, value);
  else if (key == "stepping") {
    if (value == "output") cfg.stepping = Stepping::Output;
    else if (value == "residual") cfg.stepping = Stepping::Residual;
    else if (value == "derivative") cfg.stepping = Stepping::Derivative;
    else bad_value(key, value, "'output', 'residual' or 'derivative'");
  } else if (key == "time_scale") cfg.time_scale = parse_f64(key, value);
  else return false;
  return true;
}

std::vector<std::pair<std::string, std::string>> model_config_items(const GaotConfig& cfg) {
  using namespace kv;
  return {
      {"d", fmt_i64(cfg.d)},
      {"in_channels", fmt_i64(cfg.in_channels)},
      {"out_channels", fmt_i64(cfg.out_channels)},
      {"TS", cfg.strategy == LatentStrategy::Grid ? "grid" : "subsample"},
      {"NT", fmt_i64_list(cfg.latent_tokens)},
      {"GR", fmt_f64(cfg.enc_radius)},
      {"scales", fmt_f64_list(cfg.enc_scales)},
      {"dec_GR", fmt_f64(cfg.dec_radius)},
      {"dec_scales", fmt_f64_list(cfg.dec_scales)},
      {"LC", fmt_i64(cfg.lift_channels)},
      {"attn_dim", fmt_i64(cfg.attn_dim)},
      {"attention", fmt_bool(cfg.attention)},
      {"ENC-MLP", fmt_i64_list(cfg.enc_hidden)},
      {"DEC-MLP", fmt_i64_list(cfg.dec_hidden)},
      {"FUSE-MLP", fmt_i64_list(cfg.fuse_hidden)},
      {"GATE-MLP", fmt_i64_list(cfg.gate_hidden)},
      {"EM", fmt_f64(cfg.edge_mask)},
      {"GeoEmb", cfg.geometry == GeoMode::Statistical ? "statistical"
                 : cfg.geometry == GeoMode::PointNet  ? "pointnet"
                                                      : "none"},
      {"geo_dim", fmt_i64(cfg.geo_dim)},
      {"GEO-MLP", fmt_i64_list(cfg.geo_hidden)},
      {"PS", fmt_i64(cfg.patch_size)},
      {"TL", fmt_i64(cfg.proc_blocks)},
      {"THS", fmt_i64(cfg.proc_hidden)},
      {"FFN", fmt_i64(cfg.proc_ffn)},
      {"HEAD", fmt_i64(cfg.proc_heads)},
      {"Dropout", fmt_f64(cfg.dropout)},
      {"PE", cfg.pos == PosMode::Rotary ? "rope" : "sincos"},
      {"OUT-MLP", fmt_i64_list(cfg.out_hidden)},
      {"stepping", cfg.stepping == Stepping::Output     ? "output"
                   : cfg.stepping == Stepping::Residual ? "residual"
                                                        : "derivative"},
      {"time_scale", fmt_f64(cfg.time_scale)},
  };
}

std::string emit_model_config(const GaotConfig& cfg) {
  std::string out = "[model]\n";
  for (const auto& [key, value] : model_config_items(cfg)) out += key + " = " + value + "\n";
  return out;
}

GaotConfig parse_model_config(const std::string& text) {
  GaotConfig cfg;
  size_t pos = 0;
  int lineno = 0;
  while (pos < text.size()) {
    const size_t nl = text.find('\n', pos);
    std::string line = kv::trim(text.substr(pos, nl - pos));
    pos = (nl == std::string::npos) ? text.size() : nl + 1;
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (line == "[model]") continue;
    if (line[0] == '[')
      throw std::runtime_error("model config line " + std::to_string(lineno) +
                               ": unexpected section " + line);
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("model config line " + std::to_string(lineno) +
                               ": expected key = value, got '" + line + "'");
    const std::string key = kv::trim(line.substr(0, eq));
    const std::string value = kv::trim(line.substr(eq + 1));
    if (!set_model_key(cfg, key, value))
      throw std::runtime_error("model config line " + std::to_string(lineno) + ": unknown key '" +
                               key + "'");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

void validate_model_config(const GaotConfig& cfg) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (cfg.d < 1 || cfg.d > 3) fail("d must be 1, 2 or 3");
  if (cfg.in_channels < 1 || cfg.out_channels < 1) fail("channel counts must be positive");
  if (cfg.strategy == LatentStrategy::Grid) {
    if (static_cast<int>(cfg.latent_tokens.size()) != cfg.d)
      fail("NT needs one entry per axis for the grid strategy");
  } else {
    if (cfg.latent_tokens.size() != 1) fail("NT must be a single token count for subsampling");
  }
  for (int64_t t : cfg.latent_tokens)
    if (t < 1) fail("NT entries must be positive");
  if (!(cfg.enc_radius > 0.0) || !(cfg.dec_radius > 0.0)) fail("radii must be positive");
  if (cfg.enc_scales.empty() || cfg.dec_scales.empty()) fail("scale factor lists must be nonempty");
  for (double s : cfg.enc_scales)
    if (!(s > 0.0)) fail("encoder scale factors must be positive");
  for (double s : cfg.dec_scales)
    if (!(s > 0.0)) fail("decoder scale factors must be positive");
  if (cfg.lift_channels < 1 || cfg.attn_dim < 1) fail("LC and attn_dim must be positive");
  if (cfg.geometry != GeoMode::None && cfg.geo_dim < 1)
    fail("geo_dim must be positive when a geometry embedding is enabled");
  if (cfg.edge_mask < 0.0 || cfg.edge_mask >= 1.0) fail("EM must lie in [0, 1)");
  if (cfg.patch_size < 1) fail("PS must be positive");
  if (cfg.proc_blocks < 1) fail("TL must be positive");
  if (cfg.proc_hidden < 1 || cfg.proc_ffn < 1) fail("THS and FFN must be positive");
  if (cfg.proc_heads < 1) fail("HEAD must be positive");
  if (cfg.proc_hidden % cfg.proc_heads != 0) fail("THS must be divisible by HEAD");
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) fail("Dropout must lie in [0, 1)");
  if (cfg.time_scale < 0.0) fail("time_scale must be nonnegative");
}

namespace {

std::vector<double> scaled_radii(double base, const std::vector<double>& factors) {
  std::vector<double> radii(factors.size());
  for (size_t i = 0; i < factors.size(); ++i) radii[i] = base * factors[i];
  return radii;
}

}  // namespace

GaotModel make_gaot(const GaotConfig& cfg, Rng& rng) {
  validate_model_config(cfg);
  GaotModel m;
  m.cfg = cfg;

  if (cfg.strategy == LatentStrategy::Grid) {
    m.latent = make_latent_grid(cfg.latent_tokens);
  } else {
    m.latent.d = cfg.d;  // coords installed later via set_latent_subsample
  }

  const int geo_dim = cfg.geometry == GeoMode::None ? 0 : static_cast<int>(cfg.geo_dim);

  MagnoConfig ec;
  ec.d = cfg.d;
  ec.in_channels = static_cast<int>(cfg.in_channels) + 2;  // two time channels
  ec.lift_channels = static_cast<int>(cfg.lift_channels);
  ec.geo_dim = geo_dim;
  ec.attn_dim = static_cast<int>(cfg.attn_dim);
  ec.attention = cfg.attention;
  ec.scales = static_cast<int>(cfg.enc_scales.size());
  ec.kernel_hidden = cfg.enc_hidden;
  ec.fuse_hidden = cfg.fuse_hidden;
  ec.gate_hidden = cfg.gate_hidden;
  m.encoder = make_magno(ec, rng);

  MagnoConfig dc = ec;
  dc.in_channels = static_cast<int>(cfg.lift_channels);
  dc.scales = static_cast<int>(cfg.dec_scales.size());
  dc.kernel_hidden = cfg.dec_hidden;
  m.decoder = make_magno(dc, rng);

  if (cfg.geometry == GeoMode::Statistical) {
    const StatNormalizer identity{std::vector<double>(geom_stat_dim(cfg.d), 0.0),
                                  std::vector<double>(geom_stat_dim(cfg.d), 1.0)};
    m.geo_enc_stat.mlp = make_mlp(geom_stat_dim(cfg.d), cfg.geo_hidden, cfg.geo_dim, rng);
    m.geo_enc_stat.normalizers.assign(cfg.enc_scales.size(), identity);
    m.geo_dec_stat.mlp = make_mlp(geom_stat_dim(cfg.d), cfg.geo_hidden, cfg.geo_dim, rng);
    m.geo_dec_stat.normalizers.assign(cfg.dec_scales.size(), identity);
  } else if (cfg.geometry == GeoMode::PointNet) {
    m.geo_enc_point.point_mlp = make_mlp(cfg.d, cfg.geo_hidden, cfg.geo_dim, rng);
    m.geo_enc_point.post = make_mlp(cfg.geo_dim, cfg.geo_hidden, cfg.geo_dim, rng);
    m.geo_dec_point.point_mlp = make_mlp(cfg.d, cfg.geo_hidden, cfg.geo_dim, rng);
    m.geo_dec_point.post = make_mlp(cfg.geo_dim, cfg.geo_hidden, cfg.geo_dim, rng);
  }

  ProcessorConfig pc;
  pc.d = cfg.d;
  if (cfg.strategy == LatentStrategy::Grid) {
    pc.grid_shape = cfg.latent_tokens;
    pc.patch_size = cfg.patch_size;
    pc.pos = cfg.pos;
  } else {
    pc.patch_size = 1;
    pc.pos = PosMode::Sinusoidal;  // rotary axes are tied to the token grid
  }
  pc.token_channels = cfg.lift_channels;
  pc.hidden = cfg.proc_hidden;
  pc.heads = cfg.proc_heads;
  pc.ffn = cfg.proc_ffn;
  pc.blocks = cfg.proc_blocks;
  pc.dropout = cfg.dropout;
  m.processor = make_processor(pc, rng);

  m.output_mlp = make_mlp(cfg.lift_channels, cfg.out_hidden, cfg.out_channels, rng);

  m.norm.in_mean.assign(cfg.in_channels, 0.0);
  m.norm.in_std.assign(cfg.in_channels, 1.0);
  m.norm.out_mean.assign(cfg.out_channels, 0.0);
  m.norm.out_std.assign(cfg.out_channels, 1.0);
  return m;
}

void set_latent_subsample(GaotModel& model, const PointCloud& cloud, uint64_t seed) {
  if (model.cfg.strategy != LatentStrategy::Subsample)
    throw std::logic_error("set_latent_subsample applies only to the subsample strategy");
  model.latent = subsample_latent(cloud, model.cfg.latent_tokens[0], seed);
  model.processor.positions = model.latent.coords;
}

SampleGeometry GaotModel::prepare_geometry(const std::vector<double>& point_coords,
                                           int64_t n_points,
                                           const std::vector<double>& query_coords,
                                           int64_t n_queries,
                                           const std::filesystem::path& cache_dir) const {
  if (latent.size() == 0)
    throw std::logic_error("latent tokens unset; call set_latent_subsample first");
  SampleGeometry g;
  g.n_points = n_points;
  g.n_queries = n_queries;
  g.point_coords = point_coords;
  g.query_coords = query_coords;
  auto nbhd = [&](const std::vector<double>& centers, int64_t n_c,
                  const std::vector<double>& sources, int64_t n_s,
                  const std::vector<double>& radii) {
    if (cache_dir.empty()) return build_neighborhoods(centers, n_c, sources, n_s, cfg.d, radii);
    return cached_neighborhoods(cache_dir, centers, n_c, sources, n_s, cfg.d, radii);
  };
  g.enc = nbhd(latent.coords, latent.size(), point_coords, n_points,
               scaled_radii(cfg.enc_radius, cfg.enc_scales));
  g.dec = nbhd(query_coords, n_queries, latent.coords, latent.size(),
               scaled_radii(cfg.dec_radius, cfg.dec_scales));
  if (cfg.geometry == GeoMode::Statistical) {
    for (const auto& sc : g.enc.scales) g.enc_stats.push_back(geometry_stats(sc, cfg.d));
    for (const auto& sc : g.dec.scales) g.dec_stats.push_back(geometry_stats(sc, cfg.d));
  }
  // Displacements are only re-read by PointNet embeddings and by edge-mask
  // re-statistics; drop them otherwise to keep cached geometry small.
  const bool keep_enc = cfg.geometry == GeoMode::PointNet || cfg.edge_mask > 0.0;
  const bool keep_dec = cfg.geometry == GeoMode::PointNet;
  if (!keep_enc)
    for (auto& sc : g.enc.scales) {
      sc.rel_disp.clear();
      sc.rel_disp.shrink_to_fit();
    }
  if (!keep_dec)
    for (auto& sc : g.dec.scales) {
      sc.rel_disp.clear();
      sc.rel_disp.shrink_to_fit();
    }
  return g;
}

namespace {

std::vector<ad::Tensor> geometry_embeddings(const GaotConfig& cfg, const StatEmbedding& stat,
                                            const PointNetEmbedding& point,
                                            const MultiscaleNeighborhood& nb,
                                            const std::vector<std::vector<double>>& stats,
                                            int64_t centers) {
  std::vector<ad::Tensor> geom;
  if (cfg.geometry == GeoMode::Statistical) {
    for (size_t s = 0; s < nb.scales.size(); ++s) geom.push_back(stat.embed(stats[s], centers, s));
  } else if (cfg.geometry == GeoMode::PointNet) {
    for (const auto& sc : nb.scales) geom.push_back(point.embed(sc, cfg.d));
  }
  return geom;
}

}  // namespace

ad::Tensor GaotModel::forward(const SampleGeometry& g, const std::vector<double>& fields, double t,
                              double tau, Rng& rng, bool training) const {
  if (static_cast<int64_t>(fields.size()) != g.n_points * cfg.in_channels)
    throw std::invalid_argument(
        "forward: input fields have " + std::to_string(fields.size()) + " values, expected " +
        std::to_string(g.n_points) + " points x " + std::to_string(cfg.in_channels) + " channels");
  if (latent.size() == 0)
    throw std::logic_error("latent tokens unset; call set_latent_subsample first");

  // z-scored inputs plus the two time channels
  const int64_t c_in = cfg.in_channels;
  const double ts = cfg.time_scale > 0.0 ? cfg.time_scale : 1.0;
  std::vector<double> feat(static_cast<size_t>(g.n_points) * (c_in + 2));
  for (int64_t p = 0; p < g.n_points; ++p) {
    for (int64_t c = 0; c < c_in; ++c)
      feat[p * (c_in + 2) + c] = (fields[p * c_in + c] - norm.in_mean[c]) / norm.in_std[c];
    feat[p * (c_in + 2) + c_in] = t / ts;
    feat[p * (c_in + 2) + c_in + 1] = tau / ts;
  }
  const ad::Tensor x = ad::constant({g.n_points, c_in + 2}, std::move(feat));

  const MultiscaleNeighborhood* enc_nb = &g.enc;
  const std::vector<std::vector<double>>* enc_stats = &g.enc_stats;
  MultiscaleNeighborhood masked;
  std::vector<std::vector<double>> masked_stats;
  if (training && cfg.edge_mask > 0.0) {
    masked = drop_edges(g.enc, cfg.edge_mask, rng);
    if (cfg.geometry == GeoMode::Statistical) {
      for (const auto& sc : masked.scales) masked_stats.push_back(geometry_stats(sc, cfg.d));
      enc_stats = &masked_stats;
    }
    enc_nb = &masked;
  }

  const auto enc_geom =
      geometry_embeddings(cfg, geo_enc_stat, geo_enc_point, *enc_nb, *enc_stats, latent.size());
  ad::Tensor tokens = encoder.forward(*enc_nb, latent.coords, latent.size(), g.point_coords,
                                      g.n_points, x, enc_geom);
  tokens = processor.forward(tokens, rng, training);
  const auto dec_geom =
      geometry_embeddings(cfg, geo_dec_stat, geo_dec_point, g.dec, g.dec_stats, g.n_queries);
  const ad::Tensor decoded = decoder.forward(g.dec, g.query_coords, g.n_queries, latent.coords,
                                             latent.size(), tokens, dec_geom);
  return output_mlp.apply(decoded);
}

std::vector<double> GaotModel::step(const SampleGeometry& g, const std::vector<double>& fields,
                                    const std::vector<double>& u_t, double t, double tau) const {
  if (!norm.fitted)
    throw std::runtime_error("step requires fitted normalization statistics; call fit first");
  const int64_t m = cfg.out_channels;
  const bool needs_state = cfg.stepping != Stepping::Output;
  if (needs_state && static_cast<int64_t>(u_t.size()) != g.n_queries * m)
    throw std::invalid_argument("step: u_t has " + std::to_string(u_t.size()) +
                                " values, expected " + std::to_string(g.n_queries * m));

  ad::NoTape guard;
  Rng unused(0);
  const ad::Tensor raw = forward(g, fields, t, tau, unused, false);

  std::vector<double> out(static_cast<size_t>(g.n_queries) * m);
  const double gamma = cfg.stepping == Stepping::Output ? 0.0 : 1.0;
  const double delta = cfg.stepping == Stepping::Derivative ? tau : 1.0;
  for (int64_t q = 0; q < g.n_queries; ++q) {
    for (int64_t c = 0; c < m; ++c) {
      const size_t i = q * m + c;
      const double denorm = raw.v()[i] * norm.out_std[c] + norm.out_mean[c];
      out[i] = (gamma != 0.0 ? u_t[i] : 0.0) + delta * denorm;
    }
  }
  return out;
}

NormStats fit_normalization(const Dataset& ds, const std::vector<uint64_t>& train_idx,
                            Stepping stepping) {
  if (train_idx.empty()) throw std::invalid_argument("fit_normalization: empty training split");
  for (uint64_t i : train_idx)
    if (i >= ds.samples.size())
      throw std::invalid_argument("fit_normalization: split index out of range");

  bool time_dep = false;
  for (uint64_t i : train_idx) time_dep |= ds.samples[i].t_count > 1;
  if (!time_dep && stepping != Stepping::Output)
    throw std::invalid_argument(
        "residual and derivative stepping need time-dependent data (several snapshots)");

  // Inputs: the static fields for time-independent data; every snapshot for
  // time-dependent data, where the model consumes the evolving state.
  const int64_t in_ch = time_dep ? ds.m : ds.c_in;
  ChannelStats in_stats(in_ch);
  ChannelStats out_stats(ds.m);
  std::vector<double> diff;
  for (uint64_t i : train_idx) {
    const auto& s = ds.samples[i];
    if (time_dep) {
      in_stats.add_rows(s.snapshots.data(), s.t_count * s.n);
    } else {
      in_stats.add_rows(s.input_fields.data(), s.n);
    }
    switch (stepping) {
      case Stepping::Output:
        out_stats.add_rows(s.snapshots.data(), s.t_count * s.n);
        break;
      case Stepping::Residual:
      case Stepping::Derivative:
        for (const auto& [a, b] : all2all_pairs(s.times)) {
          const double tau = s.times[b] - s.times[a];
          if (stepping == Stepping::Derivative && !(tau > 0.0)) continue;
          const double* ua = s.snapshots.data() + a * s.n * ds.m;
          const double* ub = s.snapshots.data() + b * s.n * ds.m;
          diff.resize(static_cast<size_t>(s.n) * ds.m);
          const double scale = stepping == Stepping::Derivative ? 1.0 / tau : 1.0;
          for (size_t k = 0; k < diff.size(); ++k) diff[k] = (ub[k] - ua[k]) * scale;
          out_stats.add_rows(diff.data(), s.n);
        }
        break;
    }
  }

  NormStats norm;
  in_stats.finish(norm.in_mean, norm.in_std);
  out_stats.finish(norm.out_mean, norm.out_std);
  norm.fitted = true;
  return norm;
}

void GaotModel::fit(const Dataset& ds, const std::vector<uint64_t>& train_idx,
                    const std::vector<const SampleGeometry*>& train_geos) {
  norm = fit_normalization(ds, train_idx, cfg.stepping);
  if (static_cast<int64_t>(norm.in_mean.size()) != cfg.in_channels)
    throw std::runtime_error("model expects " + std::to_string(cfg.in_channels) +
                             " input channels but the dataset provides " +
                             std::to_string(norm.in_mean.size()));
  if (static_cast<int64_t>(norm.out_mean.size()) != cfg.out_channels)
    throw std::runtime_error("model emits " + std::to_string(cfg.out_channels) +
                             " output channels but the dataset provides " +
                             std::to_string(norm.out_mean.size()));

  if (cfg.time_scale <= 0.0) {
    double t_max = 0.0;
    for (uint64_t i : train_idx) t_max = std::max(t_max, ds.samples[i].times.back());
    cfg.time_scale = t_max > 0.0 ? t_max : 1.0;
  }

  if (cfg.geometry == GeoMode::Statistical) {
    if (train_geos.empty())
      throw std::invalid_argument("fit: statistical embeddings need the training geometries");
    const int dim = geom_stat_dim(cfg.d);
    auto fit_side = [&](StatEmbedding& emb, bool encoder_side, size_t scales) {
      for (size_t s = 0; s < scales; ++s) {
        std::vector<double> rows;
        int64_t count = 0;
        for (const SampleGeometry* g : train_geos) {
          const auto& stats = encoder_side ? g->enc_stats : g->dec_stats;
          if (stats.size() != scales)
            throw std::invalid_argument("fit: geometry stats scale count mismatch");
          rows.insert(rows.end(), stats[s].begin(), stats[s].end());
          count += static_cast<int64_t>(stats[s].size()) / dim;
        }
        emb.normalizers[s] = fit_stat_normalizer(rows, count, dim);
      }
    };
    fit_side(geo_enc_stat, true, cfg.enc_scales.size());
    fit_side(geo_dec_stat, false, cfg.dec_scales.size());
  }
}

void GaotModel::collect(NamedParams& out) {
  encoder.collect("enc", out);
  decoder.collect("dec", out);
  if (cfg.geometry == GeoMode::Statistical) {
    geo_enc_stat.collect("geo_enc", out);
    geo_dec_stat.collect("geo_dec", out);
  } else if (cfg.geometry == GeoMode::PointNet) {
    geo_enc_point.collect("geo_enc", out);
    geo_dec_point.collect("geo_dec", out);
  }
  processor.collect("proc", out);
  output_mlp.collect("out", out);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

struct NamedBlob {
  std::string name;
  ad::Shape shape;
  const std::vector<double>* data;
};

void append_norm_blobs(const GaotModel& m, std::vector<NamedBlob>& blobs,
                       std::vector<std::vector<double>>& owned) {
  auto own = [&owned](std::vector<double> v) -> const std::vector<double>* {
    owned.push_back(std::move(v));
    return &owned.back();
  };
  blobs.push_back({"latent.coords", {m.latent.size(), m.cfg.d}, &m.latent.coords});
  blobs.push_back({"norm.in_mean", {static_cast<int64_t>(m.norm.in_mean.size())}, &m.norm.in_mean});
  blobs.push_back({"norm.in_std", {static_cast<int64_t>(m.norm.in_std.size())}, &m.norm.in_std});
  blobs.push_back(
      {"norm.out_mean", {static_cast<int64_t>(m.norm.out_mean.size())}, &m.norm.out_mean});
  blobs.push_back({"norm.out_std", {static_cast<int64_t>(m.norm.out_std.size())}, &m.norm.out_std});
  blobs.push_back({"norm.fitted", {1}, own({m.norm.fitted ? 1.0 : 0.0})});
  if (m.cfg.geometry == GeoMode::Statistical) {
    auto side = [&](const StatEmbedding& emb, const std::string& prefix) {
      for (size_t s = 0; s < emb.normalizers.size(); ++s) {
        blobs.push_back({prefix + ".norm" + std::to_string(s) + ".mean",
                         {static_cast<int64_t>(emb.normalizers[s].mean.size())},
                         &emb.normalizers[s].mean});
        blobs.push_back({prefix + ".norm" + std::to_string(s) + ".std",
                         {static_cast<int64_t>(emb.normalizers[s].stdev.size())},
                         &emb.normalizers[s].stdev});
      }
    };
    side(m.geo_enc_stat, "geo_enc");
    side(m.geo_dec_stat, "geo_dec");
  }
}

}  // namespace

void GaotModel::save_checkpoint(const std::filesystem::path& path) const {
  // collect() is non-const only because it hands out mutable tensor
  // pointers; serialization just reads them.
  auto& self = const_cast<GaotModel&>(*this);
  NamedParams params;
  self.collect(params);

  std::vector<NamedBlob> blobs;
  std::vector<std::vector<double>> owned;
  owned.reserve(4);
  for (auto& [name, tensor] : params) blobs.push_back({name, tensor->shape, tensor->val.get()});
  append_norm_blobs(*this, blobs, owned);

  io::Writer w(path);
  w.magic(kMagic);
  const std::string cfg_text = emit_model_config(cfg);
  w.u64(cfg_text.size());
  w.bytes(cfg_text);
  w.u64(blobs.size());
  for (const auto& blob : blobs) {
    w.u32(static_cast<uint32_t>(blob.name.size()));
    w.bytes(blob.name);
    w.u32(static_cast<uint32_t>(blob.shape.size()));
    for (int64_t e : blob.shape) w.u64(static_cast<uint64_t>(e));
    w.f64s(*blob.data);
  }
  w.finish();
}

GaotModel load_checkpoint(const std::filesystem::path& path) {
  io::Reader r(path);
  r.expect_magic(kMagic);
  const uint64_t cfg_len = r.u64();
  const GaotConfig cfg = parse_model_config(r.bytes(cfg_len));

  Rng scratch(0);  // weights are overwritten below
  GaotModel m = make_gaot(cfg, scratch);

  std::map<std::string, std::pair<ad::Shape, std::vector<double>>> stored;
  const uint64_t count = r.u64();
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u32());
    ad::Shape shape(r.u32());
    for (auto& e : shape) e = static_cast<int64_t>(r.u64());
    std::vector<double> data = r.f64s(static_cast<size_t>(ad::numel_of(shape)));
    if (!stored.emplace(name, std::make_pair(std::move(shape), std::move(data))).second)
      throw std::runtime_error(path.string() + ": duplicate tensor '" + name + "'");
  }

  auto take = [&stored, &path](const std::string& name) {
    auto it = stored.find(name);
    if (it == stored.end())
      throw std::runtime_error(path.string() + ": checkpoint is missing tensor '" + name + "'");
    auto out = std::move(it->second);
    stored.erase(it);
    return out;
  };

  NamedParams params;
  m.collect(params);
  for (auto& [name, tensor] : params) {
    auto [shape, data] = take(name);
    if (shape != tensor->shape)
      throw std::runtime_error(path.string() + ": tensor '" + name + "' has shape " +
                               ad::shape_str(shape) + ", model expects " +
                               ad::shape_str(tensor->shape));
    tensor->v() = std::move(data);
  }

  {
    auto [shape, data] = take("latent.coords");
    if (shape.size() != 2 || shape[1] != cfg.d)
      throw std::runtime_error(path.string() + ": malformed latent.coords");
    if (cfg.strategy == LatentStrategy::Grid) {
      if (data != m.latent.coords)
        throw std::runtime_error(path.string() + ": stored latent grid disagrees with config");
    } else {
      m.latent.coords = std::move(data);
      m.processor.positions = m.latent.coords;
    }
  }
  m.norm.in_mean = take("norm.in_mean").second;
  m.norm.in_std = take("norm.in_std").second;
  m.norm.out_mean = take("norm.out_mean").second;
  m.norm.out_std = take("norm.out_std").second;
  m.norm.fitted = take("norm.fitted").second.at(0) != 0.0;
  if (static_cast<int64_t>(m.norm.in_mean.size()) != cfg.in_channels ||
      static_cast<int64_t>(m.norm.in_std.size()) != cfg.in_channels ||
      static_cast<int64_t>(m.norm.out_mean.size()) != cfg.out_channels ||
      static_cast<int64_t>(m.norm.out_std.size()) != cfg.out_channels)
    throw std::runtime_error(path.string() + ": normalization stats disagree with config");
  if (cfg.geometry == GeoMode::Statistical) {
    auto side = [&](StatEmbedding& emb, const std::string& prefix) {
      for (size_t s = 0; s < emb.normalizers.size(); ++s) {
        emb.normalizers[s].mean = take(prefix + ".norm" + std::to_string(s) + ".mean").second;
        emb.normalizers[s].stdev = take(prefix + ".norm" + std::to_string(s) + ".std").second;
      }
    };
    side(m.geo_enc_stat, "geo_enc");
    side(m.geo_dec_stat, "geo_dec");
  }
  if (!stored.empty())
    throw std::runtime_error(path.string() + ": checkpoint has unknown tensor '" +
                             stored.begin()->first + "'");
  return m;
}

}  // namespace gaot
