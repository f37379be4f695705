#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gaot/ops.hpp"
#include "gaot/rng.hpp"
#include "gaot/tensor.hpp"

namespace gaot {

// Parameter registry: stable name -> tensor handle.  Enumeration order is
// the optimizer-state order and the checkpoint order, so it must never depend
// on anything but the model configuration.
using NamedParams = std::vector<std::pair<std::string, ad::Tensor*>>;

struct Linear {
  ad::Tensor w;  // [in, out]
  ad::Tensor b;  // [out]

  ad::Tensor apply(const ad::Tensor& x) const { return ad::add(ad::matmul(x, w), b); }
  void collect(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
  }
};

Linear make_linear(int64_t in, int64_t out, Rng& rng);

enum class Act { Gelu, Tanh, None };

// Plain fully connected stack; the activation sits between layers, never
// after the last one.
struct Mlp {
  std::vector<Linear> layers;
  Act act = Act::Gelu;

  ad::Tensor apply(const ad::Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out);
  int64_t in_dim() const { return layers.front().w.shape[0]; }
  int64_t out_dim() const { return layers.back().w.shape[1]; }
};

Mlp make_mlp(int64_t in, const std::vector<int64_t>& hidden, int64_t out, Rng& rng, Act act = Act::Gelu);

}  // namespace gaot
