#pragma once

// Multiscale attentional graph neural operator.  Aggregates source-point
// features into center-point features through radius neighborhoods: at each
// scale, per-edge kernel evaluations are combined with attention-derived
// quadrature weights, fused with an optional geometry embedding, and the
// per-scale results are blended with a learned softmax over scales.  The same
// block serves as the encoder (physical points -> latent tokens) and, with
// roles swapped, as the field decoder (tokens -> arbitrary query points).

#include <string>
#include <vector>

#include "gaot/mlp.hpp"
#include "gaot/neighbor.hpp"

namespace gaot {

struct MagnoConfig {
  int d = 2;              // spatial dimension
  int in_channels = 1;    // width of the source features
  int lift_channels = 16; // width of the produced center features
  int geo_dim = 0;        // geometry embedding width appended before fusion, 0 = off
  int attn_dim = 16;      // projection width for the quadrature attention
  bool attention = true;  // false: uniform quadrature weights 1/n (plain GNO)
  int scales = 3;
  std::vector<int64_t> kernel_hidden{32};
  std::vector<int64_t> fuse_hidden{32};
  std::vector<int64_t> gate_hidden{16};
};

struct Magno {
  MagnoConfig cfg;
  Mlp kernel;   // [center ‖ source ‖ source features] -> lift, shared across scales
  Mlp feature;  // source features -> lift, shared across scales
  std::vector<ad::Tensor> wq, wk;  // per scale, [d, attn_dim] coordinate projections
  Mlp fuse;                        // [lift ‖ geo] -> lift, shared across scales
  std::vector<Mlp> gate;           // per scale, center coords -> 1 blend logit (empty when scales == 1)

  // geom holds one [centers, geo_dim] embedding per scale and must be empty
  // when geo_dim == 0.  Coordinates are plain data (never differentiated);
  // source_features may be tracked, as in the decoder where they are the
  // processed tokens.  Neighbor order inside each center's slice is
  // canonicalized to ascending source index, so permuted inputs produce
  // bit-identical output.
  ad::Tensor forward(const MultiscaleNeighborhood& nbhd,
                     const std::vector<double>& center_coords, int64_t centers,
                     const std::vector<double>& source_coords, int64_t sources,
                     const ad::Tensor& source_features,
                     const std::vector<ad::Tensor>& geom) const;

  void collect(const std::string& prefix, NamedParams& out);
};

Magno make_magno(const MagnoConfig& cfg, Rng& rng);

}  // namespace gaot
