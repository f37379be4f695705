#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "gaot/gradcheck.hpp"
#include "gaot/magno.hpp"
#include "gaot/ops.hpp"
#include "gaot/rng.hpp"

using namespace gaot;

namespace {

// Evaluates an MLP on a single row, outside any tape.
std::vector<double> run_mlp(const Mlp& mlp, const std::vector<double>& row) {
  ad::NoTape guard;
  const auto out = mlp.apply(ad::constant({1, static_cast<int64_t>(row.size())}, row));
  return *out.val;
}

// Naive reference: per center, recompute the attention softmax, the kernel
// quadrature, fusion, and the scale blend with explicit loops.
std::vector<double> dense_reference(const Magno& model, const MultiscaleNeighborhood& nbhd,
                                    const std::vector<double>& centers, int64_t n_centers,
                                    const std::vector<double>& sources, int64_t n_sources,
                                    const std::vector<double>& features,
                                    const std::vector<std::vector<double>>& geom) {
  ad::NoTape guard;
  const int d = model.cfg.d;
  const int cin = model.cfg.in_channels;
  const int64_t lc = model.cfg.lift_channels;
  const size_t scales = nbhd.scales.size();

  std::vector<std::vector<double>> fused(scales, std::vector<double>(n_centers * lc));
  for (size_t m = 0; m < scales; ++m) {
    const auto& sn = nbhd.scales[m];
    for (int64_t c = 0; c < n_centers; ++c) {
      const int64_t lo = sn.offsets[c], hi = sn.offsets[c + 1];
      std::vector<double> wtilde(lc, 0.0);
      if (hi > lo) {
        // attention logits over the neighbor slice
        std::vector<double> logits(hi - lo, 0.0);
        if (model.cfg.attention) {
          const auto& q = *model.wq[m].val;
          const auto& k = *model.wk[m].val;
          const int ad_ = model.cfg.attn_dim;
          for (int64_t e = lo; e < hi; ++e) {
            const int64_t s = sn.indices[e];
            double dot = 0.0;
            for (int j = 0; j < ad_; ++j) {
              double qy = 0.0, kx = 0.0;
              for (int a = 0; a < d; ++a) {
                qy += centers[c * d + a] * q[a * ad_ + j];
                kx += sources[s * d + a] * k[a * ad_ + j];
              }
              dot += qy * kx;
            }
            logits[e - lo] = dot / std::sqrt(static_cast<double>(ad_));
          }
          const double mx = *std::max_element(logits.begin(), logits.end());
          double z = 0.0;
          for (auto& v : logits) z += std::exp(v - mx);
          for (auto& v : logits) v = std::exp(v - mx) / z;
        } else {
          std::fill(logits.begin(), logits.end(), 1.0 / static_cast<double>(hi - lo));
        }
        for (int64_t e = lo; e < hi; ++e) {
          const int64_t s = sn.indices[e];
          std::vector<double> kin(2 * d + cin);
          for (int a = 0; a < d; ++a) {
            kin[a] = centers[c * d + a];
            kin[d + a] = sources[s * d + a];
          }
          for (int j = 0; j < cin; ++j) kin[2 * d + j] = features[s * cin + j];
          std::vector<double> feat_row(features.begin() + s * cin, features.begin() + (s + 1) * cin);
          const auto kv = run_mlp(model.kernel, kin);
          const auto pv = run_mlp(model.feature, feat_row);
          for (int64_t j = 0; j < lc; ++j) wtilde[j] += logits[e - lo] * kv[j] * pv[j];
        }
      }
      std::vector<double> fin = wtilde;
      if (model.cfg.geo_dim > 0) {
        fin.insert(fin.end(), geom[m].begin() + c * model.cfg.geo_dim,
                   geom[m].begin() + (c + 1) * model.cfg.geo_dim);
      }
      const auto fv = run_mlp(model.fuse, fin);
      std::copy(fv.begin(), fv.end(), fused[m].begin() + c * lc);
    }
  }

  std::vector<double> out(n_centers * lc, 0.0);
  if (scales == 1) return fused[0];
  for (int64_t c = 0; c < n_centers; ++c) {
    std::vector<double> psi(scales);
    for (size_t m = 0; m < scales; ++m) {
      psi[m] = run_mlp(model.gate[m], {centers.begin() + c * d, centers.begin() + (c + 1) * d})[0];
    }
    const double mx = *std::max_element(psi.begin(), psi.end());
    double z = 0.0;
    for (auto& v : psi) z += std::exp(v - mx);
    double beta_sum = 0.0;
    for (size_t m = 0; m < scales; ++m) {
      const double beta = std::exp(psi[m] - mx) / z;
      beta_sum += beta;
      for (int64_t j = 0; j < lc; ++j) out[c * lc + j] += beta * fused[m][c * lc + j];
    }
    CHECK(std::abs(beta_sum - 1.0) < 1e-12);
  }
  return out;
}

struct Scene {
  std::vector<double> centers, sources, features;
  int64_t n_centers, n_sources;
  MultiscaleNeighborhood nbhd;
};

Scene random_scene(Rng& rng, int d, int cin, int64_t n_centers, int64_t n_sources,
                   const std::vector<double>& radii) {
  Scene sc;
  sc.n_centers = n_centers;
  sc.n_sources = n_sources;
  sc.centers.resize(n_centers * d);
  sc.sources.resize(n_sources * d);
  sc.features.resize(n_sources * cin);
  for (auto& v : sc.centers) v = rng.uniform(-1.0, 1.0);
  for (auto& v : sc.sources) v = rng.uniform(-1.0, 1.0);
  for (auto& v : sc.features) v = rng.uniform(-1.0, 1.0);
  sc.nbhd = build_neighborhoods(sc.centers, n_centers, sc.sources, n_sources, d, radii);
  return sc;
}

}  // namespace

TEST_CASE("forward matches the dense per-center reference") {
  Rng rng(101);
  MagnoConfig cfg;
  cfg.d = 2;
  cfg.in_channels = 2;
  cfg.lift_channels = 5;
  cfg.geo_dim = 3;
  cfg.attn_dim = 4;
  cfg.scales = 3;
  cfg.kernel_hidden = {6};
  cfg.fuse_hidden = {6};
  cfg.gate_hidden = {4};
  auto model = make_magno(cfg, rng);

  auto sc = random_scene(rng, 2, 2, 6, 40, {0.4, 0.6, 0.8});
  std::vector<std::vector<double>> geom_raw;
  std::vector<ad::Tensor> geom;
  for (int m = 0; m < 3; ++m) {
    std::vector<double> g(sc.n_centers * cfg.geo_dim);
    for (auto& v : g) v = rng.uniform(-1.0, 1.0);
    geom_raw.push_back(g);
    geom.push_back(ad::constant({sc.n_centers, cfg.geo_dim}, g));
  }

  const auto out = model.forward(sc.nbhd, sc.centers, sc.n_centers, sc.sources, sc.n_sources,
                                 ad::constant({sc.n_sources, cfg.in_channels}, sc.features), geom);
  REQUIRE(out.shape == ad::Shape{sc.n_centers, cfg.lift_channels});
  const auto ref = dense_reference(model, sc.nbhd, sc.centers, sc.n_centers, sc.sources,
                                   sc.n_sources, sc.features, geom_raw);
  for (size_t i = 0; i < ref.size(); ++i) CHECK(out.v()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("scalar attention oracle: softmax([0,2]) weighting") {
  // d = 1, attention width 1, W_q = W_k = [1]; center y = 1 with sources at 0
  // and 2 gives logits <1*1, 1*x>/sqrt(1) = {0, 2}.
  Rng rng(103);
  MagnoConfig cfg;
  cfg.d = 1;
  cfg.in_channels = 1;
  cfg.lift_channels = 3;
  cfg.geo_dim = 0;
  cfg.attn_dim = 1;
  cfg.scales = 1;
  cfg.kernel_hidden = {4};
  cfg.fuse_hidden = {};
  auto model = make_magno(cfg, rng);
  (*model.wq[0].val)[0] = 1.0;
  (*model.wk[0].val)[0] = 1.0;

  const std::vector<double> centers{1.0};
  const std::vector<double> sources{0.0, 2.0};
  const std::vector<double> feats{0.3, -0.7};
  const auto nbhd = build_neighborhoods(centers, 1, sources, 2, 1, {1.5});
  REQUIRE(nbhd.scales[0].indices.size() == 2);

  const auto out = model.forward(nbhd, centers, 1, sources, 2, ad::constant({2, 1}, feats), {});

  const double a1 = std::exp(2.0) / (1.0 + std::exp(2.0));  // weight on x = 2
  const double a0 = 1.0 - a1;
  CHECK(a0 == doctest::Approx(0.11920292202211755).epsilon(1e-12));
  ad::NoTape guard;
  const auto k0 = run_mlp(model.kernel, {1.0, 0.0, 0.3});
  const auto k1 = run_mlp(model.kernel, {1.0, 2.0, -0.7});
  const auto p0 = run_mlp(model.feature, {0.3});
  const auto p1 = run_mlp(model.feature, {-0.7});
  std::vector<double> wt(3);
  for (int j = 0; j < 3; ++j) wt[j] = a0 * k0[j] * p0[j] + a1 * k1[j] * p1[j];
  const auto expect = run_mlp(model.fuse, wt);
  for (int j = 0; j < 3; ++j) CHECK(out.v()[j] == doctest::Approx(expect[j]).epsilon(1e-12));
}

TEST_CASE("coincident neighbors split the weight evenly") {
  Rng rng(107);
  MagnoConfig cfg;
  cfg.d = 2;
  cfg.in_channels = 1;
  cfg.lift_channels = 4;
  cfg.attn_dim = 3;
  cfg.scales = 1;
  cfg.fuse_hidden = {};
  auto model = make_magno(cfg, rng);

  const std::vector<double> centers{0.0, 0.0};
  const std::vector<double> sources{0.1, 0.2, 0.1, 0.2};  // same point, twice
  const std::vector<double> feats{1.0, -2.0};
  const auto nbhd = build_neighborhoods(centers, 1, sources, 2, 2, {0.5});
  const auto out = model.forward(nbhd, centers, 1, sources, 2, ad::constant({2, 1}, feats), {});

  ad::NoTape guard;
  const auto k0 = run_mlp(model.kernel, {0.0, 0.0, 0.1, 0.2, 1.0});
  const auto k1 = run_mlp(model.kernel, {0.0, 0.0, 0.1, 0.2, -2.0});
  const auto p0 = run_mlp(model.feature, {1.0});
  const auto p1 = run_mlp(model.feature, {-2.0});
  std::vector<double> wt(4);
  for (int j = 0; j < 4; ++j) wt[j] = 0.5 * (k0[j] * p0[j] + k1[j] * p1[j]);
  const auto expect = run_mlp(model.fuse, wt);
  for (int j = 0; j < 4; ++j) CHECK(out.v()[j] == doctest::Approx(expect[j]).epsilon(1e-12));
}

TEST_CASE("quadrature weights sum to one through a constant-kernel probe") {
  // With K and phi pinned to the constant 1 and an identity fusion, each
  // center's output is exactly the sum of its quadrature weights.
  Rng rng(109);
  MagnoConfig cfg;
  cfg.d = 2;
  cfg.in_channels = 1;
  cfg.lift_channels = 2;
  cfg.attn_dim = 3;
  cfg.scales = 1;
  cfg.kernel_hidden = {};
  cfg.fuse_hidden = {};

  for (const bool attn : {true, false}) {
    cfg.attention = attn;
    auto model = make_magno(cfg, rng);
    std::fill(model.kernel.layers[0].w.val->begin(), model.kernel.layers[0].w.val->end(), 0.0);
    std::fill(model.kernel.layers[0].b.val->begin(), model.kernel.layers[0].b.val->end(), 1.0);
    std::fill(model.feature.layers[0].w.val->begin(), model.feature.layers[0].w.val->end(), 0.0);
    std::fill(model.feature.layers[0].b.val->begin(), model.feature.layers[0].b.val->end(), 1.0);
    auto& fw = *model.fuse.layers[0].w.val;
    std::fill(fw.begin(), fw.end(), 0.0);
    fw[0] = 1.0;
    fw[3] = 1.0;  // identity on the 2x2 fusion
    std::fill(model.fuse.layers[0].b.val->begin(), model.fuse.layers[0].b.val->end(), 0.0);

    auto sc = random_scene(rng, 2, 1, 10, 60, {0.5});
    const auto out = model.forward(sc.nbhd, sc.centers, sc.n_centers, sc.sources, sc.n_sources,
                                   ad::constant({sc.n_sources, 1}, sc.features), {});
    for (int64_t c = 0; c < sc.n_centers; ++c) {
      const bool empty = sc.nbhd.scales[0].offsets[c] == sc.nbhd.scales[0].offsets[c + 1];
      const double want = empty ? 0.0 : 1.0;
      CHECK(std::abs(out.v()[c * 2] - want) < 1e-12);
      CHECK(std::abs(out.v()[c * 2 + 1] - want) < 1e-12);
    }
  }
}

TEST_CASE("empty neighborhoods yield the fused zero vector") {
  Rng rng(113);
  MagnoConfig cfg;
  cfg.d = 2;
  cfg.in_channels = 1;
  cfg.lift_channels = 4;
  cfg.geo_dim = 2;
  cfg.scales = 2;
  auto model = make_magno(cfg, rng);

  // centers far outside the source cluster: every neighborhood is empty
  const std::vector<double> centers{5.0, 5.0, -5.0, -5.0};
  auto sc = random_scene(rng, 2, 1, 1, 20, {0.1, 0.2});
  const auto nbhd = build_neighborhoods(centers, 2, sc.sources, sc.n_sources, 2, {0.1, 0.2});
  REQUIRE(nbhd.scales[0].indices.empty());
  REQUIRE(nbhd.scales[1].indices.empty());

  std::vector<ad::Tensor> geom;
  std::vector<std::vector<double>> geom_raw;
  for (int m = 0; m < 2; ++m) {
    std::vector<double> g(2 * 2);
    for (auto& v : g) v = rng.uniform(-1.0, 1.0);
    geom_raw.push_back(g);
    geom.push_back(ad::constant({2, 2}, g));
  }
  const auto out = model.forward(nbhd, centers, 2, sc.sources, sc.n_sources,
                                 ad::constant({sc.n_sources, 1}, sc.features), geom);
  const auto ref = dense_reference(model, nbhd, centers, 2, sc.sources, sc.n_sources,
                                   sc.features, geom_raw);
  for (size_t i = 0; i < ref.size(); ++i) CHECK(out.v()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("neighbor-order permutation leaves the output bit-identical") {
  Rng rng(127);
  MagnoConfig cfg;
  cfg.d = 2;
  cfg.in_channels = 2;
  cfg.lift_channels = 4;
  cfg.geo_dim = 2;
  cfg.scales = 2;
  auto model = make_magno(cfg, rng);

  auto sc = random_scene(rng, 2, 2, 5, 50, {0.5, 0.7});
  std::vector<ad::Tensor> geom;
  for (int m = 0; m < 2; ++m) {
    std::vector<double> g(sc.n_centers * 2);
    for (auto& v : g) v = rng.uniform(-1.0, 1.0);
    geom.push_back(ad::constant({sc.n_centers, 2}, g));
  }
  const auto feats = ad::constant({sc.n_sources, 2}, sc.features);
  const auto out = model.forward(sc.nbhd, sc.centers, sc.n_centers, sc.sources, sc.n_sources, feats, geom);

  // reverse every center's slice in both indices and displacements
  auto perm = sc.nbhd;
  for (auto& s : perm.scales) {
    for (size_t c = 0; c + 1 < s.offsets.size(); ++c) {
      std::reverse(s.indices.begin() + s.offsets[c], s.indices.begin() + s.offsets[c + 1]);
      for (int64_t a = s.offsets[c], b = s.offsets[c + 1] - 1; a < b; ++a, --b) {
        for (int j = 0; j < 2; ++j) std::swap(s.rel_disp[a * 2 + j], s.rel_disp[b * 2 + j]);
      }
    }
  }
  bool moved = false;
  for (size_t m = 0; m < perm.scales.size(); ++m) {
    moved = moved || perm.scales[m].indices != sc.nbhd.scales[m].indices;
  }
  REQUIRE(moved);  // the permutation actually changed the stored order
  const auto out2 = model.forward(perm, sc.centers, sc.n_centers, sc.sources, sc.n_sources, feats, geom);
  REQUIRE(out.numel() == out2.numel());
  CHECK(std::memcmp(out.v().data(), out2.v().data(), out.numel() * sizeof(double)) == 0);
}

TEST_CASE("single scale with uniform weights equals a plain GNO") {
  Rng rng(131);
  MagnoConfig cfg;
  cfg.d = 2;
  cfg.in_channels = 2;
  cfg.lift_channels = 4;
  cfg.geo_dim = 0;
  cfg.scales = 1;
  cfg.attention = false;
  auto model = make_magno(cfg, rng);

  auto sc = random_scene(rng, 2, 2, 8, 48, {0.5});
  const auto out = model.forward(sc.nbhd, sc.centers, sc.n_centers, sc.sources, sc.n_sources,
                                 ad::constant({sc.n_sources, 2}, sc.features), {});

  // independent plain-GNO loop: mean of K([y,x,a]) .* phi(a) over the ball
  ad::NoTape guard;
  const auto& sn = sc.nbhd.scales[0];
  for (int64_t c = 0; c < sc.n_centers; ++c) {
    std::vector<double> acc(4, 0.0);
    const int64_t lo = sn.offsets[c], hi = sn.offsets[c + 1];
    for (int64_t e = lo; e < hi; ++e) {
      const int64_t s = sn.indices[e];
      const auto kv = run_mlp(model.kernel, {sc.centers[c * 2], sc.centers[c * 2 + 1],
                                             sc.sources[s * 2], sc.sources[s * 2 + 1],
                                             sc.features[s * 2], sc.features[s * 2 + 1]});
      const auto pv = run_mlp(model.feature, {sc.features[s * 2], sc.features[s * 2 + 1]});
      for (int j = 0; j < 4; ++j) acc[j] += kv[j] * pv[j] / static_cast<double>(hi - lo);
    }
    const auto fv = run_mlp(model.fuse, acc);
    for (int j = 0; j < 4; ++j) CHECK(out.v()[c * 4 + j] == doctest::Approx(fv[j]).epsilon(1e-12));
  }
}

TEST_CASE("gradients pass finite differences for every parameter") {
  Rng rng(137);
  MagnoConfig cfg;
  cfg.d = 2;
  cfg.in_channels = 2;
  cfg.lift_channels = 4;
  cfg.geo_dim = 2;
  cfg.attn_dim = 3;
  cfg.scales = 2;
  cfg.kernel_hidden = {5};
  cfg.fuse_hidden = {4};
  cfg.gate_hidden = {3};
  auto model = make_magno(cfg, rng);

  auto sc = random_scene(rng, 2, 2, 4, 16, {0.6, 0.9});
  std::vector<ad::Tensor> geom;
  for (int m = 0; m < 2; ++m) {
    std::vector<double> g(sc.n_centers * 2);
    for (auto& v : g) v = rng.uniform(-0.5, 0.5);
    geom.push_back(ad::constant({sc.n_centers, 2}, g));
  }
  ad::Tensor feats = ad::param({sc.n_sources, 2}, sc.features);
  std::vector<double> pr(sc.n_centers * 4);
  for (auto& v : pr) v = rng.uniform(-1.0, 1.0);
  const ad::Tensor proj = ad::constant({sc.n_centers, 4}, pr);

  auto f = [&] {
    return ad::mean_all(ad::mul(
        model.forward(sc.nbhd, sc.centers, sc.n_centers, sc.sources, sc.n_sources, feats, geom), proj));
  };

  NamedParams params;
  model.collect("m", params);
  CHECK(params.size() > 10);
  for (auto& [name, p] : params) {
    INFO(name);
    CHECK(ad::check_gradient(f, *p) < 1e-5);
  }
  // the decoder path differentiates through the source features as well
  CHECK(ad::check_gradient(f, feats) < 1e-5);
}

TEST_CASE("shape and scale mismatches are rejected") {
  Rng rng(139);
  MagnoConfig cfg;
  cfg.d = 2;
  cfg.in_channels = 1;
  cfg.lift_channels = 2;
  cfg.geo_dim = 2;
  cfg.scales = 2;
  auto model = make_magno(cfg, rng);
  auto sc = random_scene(rng, 2, 1, 3, 12, {0.5, 0.7});
  const auto feats = ad::constant({sc.n_sources, 1}, sc.features);
  std::vector<ad::Tensor> geom{ad::zeros({3, 2}), ad::zeros({3, 2})};

  CHECK_THROWS(model.forward(sc.nbhd, sc.centers, sc.n_centers, sc.sources, sc.n_sources, feats, {}));
  std::vector<ad::Tensor> bad_shape{ad::zeros({3, 2}), ad::zeros({3, 3})};
  CHECK_THROWS(model.forward(sc.nbhd, sc.centers, sc.n_centers, sc.sources, sc.n_sources, feats, bad_shape));
  const auto one_scale = build_neighborhoods(sc.centers, 3, sc.sources, 12, 2, {0.5});
  CHECK_THROWS(model.forward(one_scale, sc.centers, sc.n_centers, sc.sources, sc.n_sources, feats, geom));
  const auto bad_feats = ad::constant({sc.n_sources, 2}, std::vector<double>(24, 0.0));
  CHECK_THROWS(model.forward(sc.nbhd, sc.centers, sc.n_centers, sc.sources, sc.n_sources, bad_feats, geom));
}
