#include "gaot/magno.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaot/ops.hpp"

namespace gaot {

namespace {

// Per-edge center id expanded from the CSR offsets.
std::vector<int64_t> edge_centers(const std::vector<int64_t>& offsets) {
  std::vector<int64_t> ids(static_cast<size_t>(offsets.back()));
  for (size_t c = 0; c + 1 < offsets.size(); ++c) {
    for (int64_t e = offsets[c]; e < offsets[c + 1]; ++e) ids[static_cast<size_t>(e)] = static_cast<int64_t>(c);
  }
  return ids;
}

bool sorted_per_center(const ScaleNeighborhood& s) {
  for (size_t c = 0; c + 1 < s.offsets.size(); ++c) {
    for (int64_t e = s.offsets[c] + 1; e < s.offsets[c + 1]; ++e) {
      if (s.indices[static_cast<size_t>(e)] < s.indices[static_cast<size_t>(e - 1)]) return false;
    }
  }
  return true;
}

// Ascending source index within each center's slice.  The radius search
// already emits this order, so the usual cost is one scan; a permuted
// neighborhood (e.g. loaded from elsewhere) gets re-sorted so that the
// aggregation order, and therefore the floating-point result, is canonical.
std::vector<int64_t> canonical_indices(const ScaleNeighborhood& s) {
  std::vector<int64_t> idx = s.indices;
  for (size_t c = 0; c + 1 < s.offsets.size(); ++c) {
    std::sort(idx.begin() + s.offsets[c], idx.begin() + s.offsets[c + 1]);
  }
  return idx;
}

}  // namespace

Magno make_magno(const MagnoConfig& cfg, Rng& rng) {
  if (cfg.d < 1 || cfg.in_channels < 1 || cfg.lift_channels < 1 || cfg.scales < 1) {
    throw std::invalid_argument("make_magno: d, in_channels, lift_channels, scales must be positive");
  }
  if (cfg.attention && cfg.attn_dim < 1) throw std::invalid_argument("make_magno: attn_dim must be positive");

  Magno m;
  m.cfg = cfg;
  m.kernel = make_mlp(2 * cfg.d + cfg.in_channels, cfg.kernel_hidden, cfg.lift_channels, rng);
  m.feature = make_mlp(cfg.in_channels, cfg.kernel_hidden, cfg.lift_channels, rng);
  m.fuse = make_mlp(cfg.lift_channels + cfg.geo_dim, cfg.fuse_hidden, cfg.lift_channels, rng);

  const double bound = std::sqrt(6.0 / static_cast<double>(cfg.d + cfg.attn_dim));
  for (int s = 0; s < cfg.scales; ++s) {
    std::vector<double> q(static_cast<size_t>(cfg.d) * cfg.attn_dim), k(q.size());
    for (auto& v : q) v = rng.uniform(-bound, bound);
    for (auto& v : k) v = rng.uniform(-bound, bound);
    m.wq.push_back(ad::param({cfg.d, cfg.attn_dim}, q));
    m.wk.push_back(ad::param({cfg.d, cfg.attn_dim}, k));
  }
  if (cfg.scales > 1) {
    for (int s = 0; s < cfg.scales; ++s) m.gate.push_back(make_mlp(cfg.d, cfg.gate_hidden, 1, rng));
  }
  return m;
}

ad::Tensor Magno::forward(const MultiscaleNeighborhood& nbhd,
                          const std::vector<double>& center_coords, int64_t centers,
                          const std::vector<double>& source_coords, int64_t sources,
                          const ad::Tensor& source_features,
                          const std::vector<ad::Tensor>& geom) const {
  const int d = cfg.d;
  const int64_t lc = cfg.lift_channels;
  if (nbhd.d != d) throw std::invalid_argument("magno forward: neighborhood dimension mismatch");
  if (static_cast<int>(nbhd.scales.size()) != cfg.scales) {
    throw std::invalid_argument("magno forward: neighborhood has " + std::to_string(nbhd.scales.size()) +
                                " scales, config expects " + std::to_string(cfg.scales));
  }
  if (center_coords.size() != static_cast<size_t>(centers) * d ||
      source_coords.size() != static_cast<size_t>(sources) * d) {
    throw std::invalid_argument("magno forward: coordinate buffer size mismatch");
  }
  if (source_features.shape != ad::Shape{sources, cfg.in_channels}) {
    throw std::invalid_argument("magno forward: source feature shape mismatch");
  }
  const size_t want_geom = cfg.geo_dim > 0 ? nbhd.scales.size() : 0;
  if (geom.size() != want_geom) {
    throw std::invalid_argument("magno forward: expected " + std::to_string(want_geom) +
                                " geometry embeddings, got " + std::to_string(geom.size()));
  }
  for (const auto& g : geom) {
    if (g.shape != ad::Shape{centers, cfg.geo_dim}) {
      throw std::invalid_argument("magno forward: geometry embedding shape mismatch");
    }
  }

  const ad::Tensor centers_t = ad::constant({centers, d}, center_coords);
  const ad::Tensor sources_t = ad::constant({sources, d}, source_coords);
  const ad::Tensor phi_all = feature.apply(source_features);  // [sources, lift]
  const double inv_sqrt_dbar = 1.0 / std::sqrt(static_cast<double>(cfg.attn_dim));

  std::vector<ad::Tensor> fused;
  fused.reserve(nbhd.scales.size());
  for (size_t m = 0; m < nbhd.scales.size(); ++m) {
    const ScaleNeighborhood& sn = nbhd.scales[m];
    if (sn.offsets.size() != static_cast<size_t>(centers) + 1) {
      throw std::invalid_argument("magno forward: neighborhood center count mismatch");
    }
    const int64_t edges = static_cast<int64_t>(sn.indices.size());

    ad::Tensor wtilde;
    if (edges == 0) {
      wtilde = ad::zeros({centers, lc});
    } else {
      const std::vector<int64_t>* src = &sn.indices;
      std::vector<int64_t> sorted_src;
      if (!sorted_per_center(sn)) {
        sorted_src = canonical_indices(sn);
        src = &sorted_src;
      }
      const std::vector<int64_t> ctr = edge_centers(sn.offsets);

      // kernel input rows: [center coords ‖ source coords ‖ source features]
      std::vector<double> coord_rows(static_cast<size_t>(edges) * 2 * d);
      for (int64_t e = 0; e < edges; ++e) {
        const int64_t c = ctr[static_cast<size_t>(e)];
        const int64_t s = (*src)[static_cast<size_t>(e)];
        for (int a = 0; a < d; ++a) {
          coord_rows[static_cast<size_t>(e) * 2 * d + a] = center_coords[static_cast<size_t>(c) * d + a];
          coord_rows[static_cast<size_t>(e) * 2 * d + d + a] = source_coords[static_cast<size_t>(s) * d + a];
        }
      }
      const ad::Tensor feats_e = ad::gather_rows(source_features, *src);
      const ad::Tensor kin = ad::concat({ad::constant({edges, 2 * d}, coord_rows), feats_e}, 1);
      const ad::Tensor contrib = ad::mul(kernel.apply(kin), ad::gather_rows(phi_all, *src));

      ad::Tensor alpha;
      if (cfg.attention) {
        const ad::Tensor q_e = ad::gather_rows(ad::matmul(centers_t, wq[m]), ctr);
        const ad::Tensor k_e = ad::gather_rows(ad::matmul(sources_t, wk[m]), *src);
        const ad::Tensor logits = ad::scalar_mul(ad::sum(ad::mul(q_e, k_e), 1, true), inv_sqrt_dbar);
        alpha = ad::segment_softmax(logits, sn.offsets);
      } else {
        std::vector<double> w(static_cast<size_t>(edges));
        for (size_t c = 0; c + 1 < sn.offsets.size(); ++c) {
          const int64_t n = sn.offsets[c + 1] - sn.offsets[c];
          for (int64_t e = sn.offsets[c]; e < sn.offsets[c + 1]; ++e) {
            w[static_cast<size_t>(e)] = 1.0 / static_cast<double>(n);
          }
        }
        alpha = ad::constant({edges, 1}, w);
      }
      wtilde = ad::segment_sum(ad::mul(contrib, alpha), sn.offsets);
    }

    const ad::Tensor fin = cfg.geo_dim > 0 ? ad::concat({wtilde, geom[m]}, 1) : wtilde;
    fused.push_back(fuse.apply(fin));
  }

  if (fused.size() == 1) return fused[0];

  // Blend scales with a softmax over the per-scale gate logits.
  std::vector<ad::Tensor> logits;
  logits.reserve(fused.size());
  for (size_t m = 0; m < fused.size(); ++m) logits.push_back(gate[m].apply(centers_t));
  const ad::Tensor beta = ad::softmax(ad::concat(logits, 1), 1);  // [centers, scales]
  ad::Tensor out = ad::mul(fused[0], ad::slice(beta, 1, 0, 1));
  for (size_t m = 1; m < fused.size(); ++m) {
    out = ad::add(out, ad::mul(fused[m], ad::slice(beta, 1, static_cast<int64_t>(m), 1)));
  }
  return out;
}

void Magno::collect(const std::string& prefix, NamedParams& out) {
  kernel.collect(prefix + ".kernel", out);
  feature.collect(prefix + ".feature", out);
  fuse.collect(prefix + ".fuse", out);
  for (size_t s = 0; s < wq.size(); ++s) {
    out.emplace_back(prefix + ".wq" + std::to_string(s), &wq[s]);
    out.emplace_back(prefix + ".wk" + std::to_string(s), &wk[s]);
  }
  for (size_t s = 0; s < gate.size(); ++s) gate[s].collect(prefix + ".gate" + std::to_string(s), out);
}

}  // namespace gaot
