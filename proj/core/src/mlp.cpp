#include "gaot/mlp.hpp"

#include <cmath>

namespace gaot {

Linear make_linear(int64_t in, int64_t out, Rng& rng) {
  // Xavier-uniform weights, zero bias
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  return Linear{ad::param({in, out}, std::move(w)), ad::param({out}, std::vector<double>(out, 0.0))};
}

ad::Tensor Mlp::apply(const ad::Tensor& x) const {
  ad::Tensor h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].apply(h);
    if (i + 1 < layers.size()) {
      switch (act) {
        case Act::Gelu: h = ad::gelu(h); break;
        case Act::Tanh: h = ad::tanh(h); break;
        case Act::None: break;
      }
    }
  }
  return h;
}

void Mlp::collect(const std::string& prefix, NamedParams& out) {
  for (size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".l" + std::to_string(i), out);
}

Mlp make_mlp(int64_t in, const std::vector<int64_t>& hidden, int64_t out, Rng& rng, Act act) {
  if (in <= 0 || out <= 0) throw std::invalid_argument("make_mlp: dimensions must be positive");
  Mlp mlp;
  mlp.act = act;
  int64_t cur = in;
  for (const int64_t h : hidden) {
    mlp.layers.push_back(make_linear(cur, h, rng));
    cur = h;
  }
  mlp.layers.push_back(make_linear(cur, out, rng));
  return mlp;
}

}  // namespace gaot
