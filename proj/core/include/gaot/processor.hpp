#pragma once

// Patch-based transformer over the latent tokens.  Grid-shaped token sets are
// grouped into non-overlapping patches whose flattened features become the
// transformer sequence; gridless token sets skip patching and feed tokens
// through one by one.  Blocks are pre-norm (RMS) residual attention + FFN with
// rotary or sinusoidal positions and symmetric long-range skip connections
// from early blocks into late ones.

#include <cstdint>
#include <string>
#include <vector>

#include "gaot/mlp.hpp"

namespace gaot {

// x / sqrt(mean(x^2) + 1e-8) per row, scaled elementwise by alpha.
ad::Tensor rmsnorm(const ad::Tensor& x, const ad::Tensor& alpha);

// Token gather plan for one grid: which tokens make up each patch and where
// they go back on the way out.  Token storage is row-major with the last grid
// axis fastest, matching the latent grid builder.
struct Patchifier {
  int64_t patches = 0;
  int64_t per_patch = 1;          // patch_size^d
  std::vector<int64_t> order;     // patches*per_patch token ids, patch-major
  std::vector<int64_t> inverse;   // token id -> position in order
  std::vector<double> centers;    // patches x d positions in token-grid units
};
Patchifier make_patchifier(const std::vector<int64_t>& grid_shape, int64_t patch_size);

enum class PosMode { Rotary, Sinusoidal };

struct ProcessorConfig {
  int d = 2;
  std::vector<int64_t> grid_shape;  // empty: gridless path, patch_size must be 1
  int64_t token_channels = 16;
  int64_t patch_size = 2;
  int64_t hidden = 64;   // sequence width, divisible by heads
  int64_t heads = 4;
  int64_t ffn = 256;
  int64_t blocks = 3;
  double dropout = 0.0;
  PosMode pos = PosMode::Rotary;
};

struct ProcessorBlock {
  ad::Tensor norm_attn, norm_ffn;  // RMS scales [hidden]
  Linear q, k, v, o;
  Linear ffn_in, ffn_out;
};

struct Processor {
  ProcessorConfig cfg;
  Patchifier patch;                // unused on the gridless path
  std::vector<double> positions;   // sequence length x d; from the patch grid,
                                   // or set by the caller for gridless tokens
  std::vector<double> pair_freq;   // hidden/2 rotary frequencies per channel pair
  Linear embed;                    // per_patch*token_channels -> hidden
  Linear unembed;                  // hidden -> per_patch*token_channels
  std::vector<ProcessorBlock> blocks;

  // tokens: [L, token_channels] -> same shape; coordinates are untouched.
  ad::Tensor forward(const ad::Tensor& tokens, Rng& rng, bool training) const;

  void collect(const std::string& prefix, NamedParams& out);
};

Processor make_processor(const ProcessorConfig& cfg, Rng& rng);

}  // namespace gaot
