#include "gaot/processor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gaot/ops.hpp"

namespace gaot {

namespace {
constexpr double kFreqBase = 10000.0;
// Gridless positions are continuous coordinates in [-1,1]; rotary and
// sinusoidal phases are calibrated for integer grid units, so coordinates are
// mapped onto a nominal 64-unit extent before use.
constexpr double kCoordUnits = 32.0;
}  // namespace

ad::Tensor rmsnorm(const ad::Tensor& x, const ad::Tensor& alpha) {
  const ad::Tensor ms = ad::mean(ad::mul(x, x), 1, true);
  return ad::mul(ad::mul(x, ad::rsqrt(ad::scalar_add(ms, 1e-8))), alpha);
}

Patchifier make_patchifier(const std::vector<int64_t>& grid_shape, int64_t patch_size) {
  if (grid_shape.empty()) throw std::invalid_argument("make_patchifier: empty grid shape");
  if (patch_size < 1) throw std::invalid_argument("make_patchifier: patch size must be >= 1");
  const int d = static_cast<int>(grid_shape.size());
  std::vector<int64_t> pgrid(d);
  for (int a = 0; a < d; ++a) {
    if (grid_shape[a] % patch_size != 0) {
      throw std::invalid_argument("make_patchifier: grid axis " + std::to_string(a) + " (" +
                                  std::to_string(grid_shape[a]) + ") not divisible by patch size " +
                                  std::to_string(patch_size));
    }
    pgrid[a] = grid_shape[a] / patch_size;
  }

  Patchifier pf;
  pf.patches = 1;
  for (int a = 0; a < d; ++a) pf.patches *= pgrid[a];
  pf.per_patch = 1;
  for (int a = 0; a < d; ++a) pf.per_patch *= patch_size;

  int64_t tokens = 1;
  for (int a = 0; a < d; ++a) tokens = tokens * grid_shape[a];
  pf.order.resize(pf.patches * pf.per_patch);
  pf.inverse.resize(tokens);
  pf.centers.resize(pf.patches * d);

  std::vector<int64_t> pi(d, 0);  // patch multi-index, row-major iteration
  for (int64_t p = 0; p < pf.patches; ++p) {
    for (int a = 0; a < d; ++a) {
      pf.centers[p * d + a] =
          static_cast<double>(pi[a] * patch_size) + static_cast<double>(patch_size - 1) / 2.0;
    }
    std::vector<int64_t> lo(d, 0);  // local offset within the patch
    for (int64_t j = 0; j < pf.per_patch; ++j) {
      int64_t flat = 0;
      for (int a = 0; a < d; ++a) flat = flat * grid_shape[a] + pi[a] * patch_size + lo[a];
      pf.order[p * pf.per_patch + j] = flat;
      pf.inverse[flat] = p * pf.per_patch + j;
      for (int a = d - 1; a >= 0; --a) {
        if (++lo[a] < patch_size) break;
        lo[a] = 0;
      }
    }
    for (int a = d - 1; a >= 0; --a) {
      if (++pi[a] < pgrid[a]) break;
      pi[a] = 0;
    }
  }
  return pf;
}

Processor make_processor(const ProcessorConfig& cfg, Rng& rng) {
  if (cfg.hidden % cfg.heads != 0) throw std::invalid_argument("processor: hidden width not divisible by heads");
  if (cfg.blocks < 1) throw std::invalid_argument("processor: needs at least one block");
  const int64_t hw = cfg.hidden / cfg.heads;
  if (cfg.pos == PosMode::Rotary && hw % (2 * cfg.d) != 0) {
    throw std::invalid_argument("processor: rotary mode needs per-head width divisible by 2*d");
  }
  if (cfg.grid_shape.empty() && cfg.patch_size != 1) {
    throw std::invalid_argument("processor: gridless tokens cannot be patched; use patch size 1");
  }
  if (!cfg.grid_shape.empty() && static_cast<int>(cfg.grid_shape.size()) != cfg.d) {
    throw std::invalid_argument("processor: grid shape rank must equal d");
  }
  if (cfg.pos == PosMode::Sinusoidal && cfg.hidden % (2 * cfg.d) != 0) {
    throw std::invalid_argument("processor: sinusoidal mode needs hidden divisible by 2*d");
  }

  Processor pr;
  pr.cfg = cfg;
  int64_t per_patch = 1;
  if (!cfg.grid_shape.empty()) {
    pr.patch = make_patchifier(cfg.grid_shape, cfg.patch_size);
    per_patch = pr.patch.per_patch;
    pr.positions = pr.patch.centers;
  }
  pr.embed = make_linear(per_patch * cfg.token_channels, cfg.hidden, rng);
  pr.unembed = make_linear(cfg.hidden, per_patch * cfg.token_channels, rng);
  for (int64_t b = 0; b < cfg.blocks; ++b) {
    ProcessorBlock blk;
    blk.norm_attn = ad::param({cfg.hidden}, std::vector<double>(cfg.hidden, 1.0));
    blk.norm_ffn = ad::param({cfg.hidden}, std::vector<double>(cfg.hidden, 1.0));
    blk.q = make_linear(cfg.hidden, cfg.hidden, rng);
    blk.k = make_linear(cfg.hidden, cfg.hidden, rng);
    blk.v = make_linear(cfg.hidden, cfg.hidden, rng);
    blk.o = make_linear(cfg.hidden, cfg.hidden, rng);
    blk.ffn_in = make_linear(cfg.hidden, cfg.ffn, rng);
    blk.ffn_out = make_linear(cfg.ffn, cfg.hidden, rng);
    pr.blocks.push_back(std::move(blk));
  }

  if (cfg.pos == PosMode::Rotary) {
    // rotary frequency per channel pair: pairs inside a head are split evenly
    // across the d axes, geometric frequency ladder per axis
    const int64_t pairs_per_axis = hw / (2 * cfg.d);
    pr.pair_freq.resize(cfg.hidden / 2);
    for (int64_t j = 0; j < cfg.hidden / 2; ++j) {
      const int64_t in_head = (2 * j) % hw;
      const int64_t k = (in_head % (hw / cfg.d)) / 2;
      pr.pair_freq[j] = std::pow(kFreqBase, -static_cast<double>(k) / static_cast<double>(pairs_per_axis));
    }
  }
  return pr;
}

ad::Tensor Processor::forward(const ad::Tensor& tokens, Rng& rng, bool training) const {
  const int64_t lc = cfg.token_channels;
  const bool grid = !cfg.grid_shape.empty();
  const int64_t per_patch = grid ? patch.per_patch : 1;
  const int64_t n_tokens = tokens.extent(0);
  if (tokens.rank() != 2 || tokens.extent(1) != lc) {
    throw std::invalid_argument("processor forward: tokens must be [L, token_channels]");
  }
  if (grid && n_tokens != static_cast<int64_t>(patch.inverse.size())) {
    throw std::invalid_argument("processor forward: token count does not match the grid");
  }
  const int64_t seq = grid ? patch.patches : n_tokens;
  if (positions.size() != static_cast<size_t>(seq) * cfg.d) {
    throw std::invalid_argument("processor forward: positions not sized to the sequence");
  }

  // patchify: gather member tokens patch-major, flatten, project
  ad::Tensor x = tokens;
  if (grid) x = ad::reshape(ad::gather_rows(tokens, patch.order), {seq, per_patch * lc});
  x = embed.apply(x);  // [seq, hidden]

  const bool coord_units = !grid;
  std::vector<double> pos = positions;
  if (coord_units) {
    for (auto& v : pos) v = (v + 1.0) * kCoordUnits;
  }

  if (cfg.pos == PosMode::Sinusoidal) {
    // absolute sin/cos features on each axis block, added once before block 0
    const int64_t axis_ch = cfg.hidden / cfg.d;
    std::vector<double> pe(static_cast<size_t>(seq) * cfg.hidden);
    for (int64_t r = 0; r < seq; ++r) {
      for (int64_t c = 0; c < cfg.hidden; ++c) {
        const int64_t axis = c / axis_ch;
        const int64_t k = (c % axis_ch) / 2;
        const double freq =
            std::pow(kFreqBase, -static_cast<double>(k) / (static_cast<double>(axis_ch) / 2.0));
        const double phase = pos[r * cfg.d + axis] * freq;
        pe[r * cfg.hidden + c] = (c % 2 == 0) ? std::sin(phase) : std::cos(phase);
      }
    }
    x = ad::add(x, ad::constant({seq, cfg.hidden}, pe));
  }

  std::vector<double> angles;
  if (cfg.pos == PosMode::Rotary) {
    const int64_t hw = cfg.hidden / cfg.heads;
    angles.resize(static_cast<size_t>(seq) * (cfg.hidden / 2));
    for (int64_t r = 0; r < seq; ++r) {
      for (int64_t j = 0; j < cfg.hidden / 2; ++j) {
        const int64_t axis = ((2 * j) % hw) / (hw / cfg.d);
        angles[r * (cfg.hidden / 2) + j] = pos[r * cfg.d + axis] * pair_freq[j];
      }
    }
  }

  const int64_t hw = cfg.hidden / cfg.heads;
  const double inv_sqrt_hw = 1.0 / std::sqrt(static_cast<double>(hw));
  std::vector<ad::Tensor> outs;
  outs.reserve(blocks.size());
  const int64_t tl = static_cast<int64_t>(blocks.size());
  for (int64_t b = 0; b < tl; ++b) {
    // symmetric long-range skip: late blocks also receive an early output
    if (b > 0) x = outs[b - 1];
    if (2 * b > tl) x = ad::add(x, outs[tl - 1 - b]);

    const ProcessorBlock& blk = blocks[b];
    ad::Tensor xn = rmsnorm(x, blk.norm_attn);
    ad::Tensor qa = blk.q.apply(xn), ka = blk.k.apply(xn), va = blk.v.apply(xn);
    if (cfg.pos == PosMode::Rotary) {
      qa = ad::rotate_pairs(qa, angles);
      ka = ad::rotate_pairs(ka, angles);
    }
    std::vector<ad::Tensor> heads;
    heads.reserve(cfg.heads);
    for (int64_t h = 0; h < cfg.heads; ++h) {
      const ad::Tensor qh = ad::slice(qa, 1, h * hw, hw);
      const ad::Tensor kh = ad::slice(ka, 1, h * hw, hw);
      const ad::Tensor vh = ad::slice(va, 1, h * hw, hw);
      const ad::Tensor score = ad::scalar_mul(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_hw);
      heads.push_back(ad::matmul(ad::softmax(score, 1), vh));
    }
    ad::Tensor attn = blk.o.apply(ad::concat(heads, 1));
    attn = ad::dropout(attn, cfg.dropout, rng, training);
    const ad::Tensor z = ad::add(x, attn);

    ad::Tensor f = blk.ffn_out.apply(ad::gelu(blk.ffn_in.apply(rmsnorm(z, blk.norm_ffn))));
    f = ad::dropout(f, cfg.dropout, rng, training);
    outs.push_back(ad::add(z, f));
  }

  ad::Tensor y = unembed.apply(outs.back());  // [seq, per_patch*lc]
  if (grid) y = ad::gather_rows(ad::reshape(y, {seq * per_patch, lc}), patch.inverse);
  return y;
}

void Processor::collect(const std::string& prefix, NamedParams& out) {
  embed.collect(prefix + ".embed", out);
  unembed.collect(prefix + ".unembed", out);
  for (size_t b = 0; b < blocks.size(); ++b) {
    const std::string bp = prefix + ".b" + std::to_string(b);
    out.emplace_back(bp + ".norm_attn", &blocks[b].norm_attn);
    out.emplace_back(bp + ".norm_ffn", &blocks[b].norm_ffn);
    blocks[b].q.collect(bp + ".q", out);
    blocks[b].k.collect(bp + ".k", out);
    blocks[b].v.collect(bp + ".v", out);
    blocks[b].o.collect(bp + ".o", out);
    blocks[b].ffn_in.collect(bp + ".ffn_in", out);
    blocks[b].ffn_out.collect(bp + ".ffn_out", out);
  }
}

}  // namespace gaot
