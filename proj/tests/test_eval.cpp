#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "gaot/eval.hpp"
#include "gaot/train.hpp"

using namespace gaot;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("gaot_eval_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GaotConfig tiny_config() {
  GaotConfig c;
  c.latent_tokens = {4, 2};
  c.enc_radius = 0.8;
  c.enc_scales = {0.75, 1.25};
  c.dec_radius = 0.8;
  c.dec_scales = {0.75, 1.25};
  c.lift_channels = 4;
  c.attn_dim = 4;
  c.enc_hidden = {8};
  c.dec_hidden = {8};
  c.fuse_hidden = {8};
  c.gate_hidden = {6};
  c.geometry = GeoMode::Statistical;
  c.geo_dim = 3;
  c.geo_hidden = {6};
  c.patch_size = 2;
  c.proc_blocks = 2;
  c.proc_hidden = 8;
  c.proc_ffn = 16;
  c.proc_heads = 2;
  c.out_hidden = {6};
  return c;
}

struct Fixture {
  Dataset ds;
  GaotModel model;
  std::vector<SampleGeometry> geo_store;
  std::vector<const SampleGeometry*> geos;

  Fixture(GaotConfig cfg, Dataset dataset, uint64_t init_seed)
      : ds(std::move(dataset)), model([&] {
          Rng init(init_seed);
          return make_gaot(cfg, init);
        }()) {
    geo_store.reserve(ds.samples.size());
    for (const auto& s : ds.samples)
      geo_store.push_back(model.prepare_geometry(s.coords, s.n, s.coords, s.n));
    for (const auto& g : geo_store) geos.push_back(&g);
    model.fit(ds, ds.train_idx, geos);
  }
};

// Diffusion trajectories with dyadic snapshot times 0, 0.25, ..., 1, so
// stride divisibility in the rollout tests is exact.
Fixture diffusion_fixture(Stepping stepping) {
  GaotConfig cfg = tiny_config();
  cfg.stepping = stepping;
  return Fixture(cfg, gen_diffusion(GenSplit{4, 0, 3}, 64, 5, 0.05, 21), 17);
}

std::vector<double> snapshot_of(const TrajectorySample& s, int64_t t_idx, int64_t m) {
  const size_t stride = static_cast<size_t>(s.n) * m;
  return {s.snapshots.begin() + t_idx * stride, s.snapshots.begin() + (t_idx + 1) * stride};
}

std::vector<double> snapshot_params(GaotModel& model) {
  NamedParams params;
  model.collect(params);
  std::vector<double> out;
  for (auto& [name, p] : params) out.insert(out.end(), p->v().begin(), p->v().end());
  return out;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("relative L1 matches hand computations") {
  SUBCASE("perfect prediction scores zero") {
    const std::vector<double> v{0.3, -1.7, 2.5, 0.0};
    const auto err = relative_l1(v, v, 4, 1);
    REQUIRE(err.size() == 1);
    CHECK(err[0] == 0.0);
  }

  SUBCASE("two-point example") {
    const auto err = relative_l1({0.0, 2.0}, {1.0, 2.0}, 2, 1);
    CHECK(err[0] == 0.5);
  }

  SUBCASE("homogeneity: scaling pred and truth together changes nothing") {
    const std::vector<double> truth{1.0, 2.0, 4.0};
    const std::vector<double> pred{0.0, 3.0, 8.0};
    std::vector<double> truth3(3), pred3(3);
    for (int i = 0; i < 3; ++i) {
      truth3[i] = 3.0 * truth[i];
      pred3[i] = 3.0 * pred[i];
    }
    CHECK(relative_l1(pred, truth, 3, 1)[0] == relative_l1(pred3, truth3, 3, 1)[0]);

    Rng rng(5);
    std::vector<double> t(40), p(40), t2(40), p2(40);
    for (int i = 0; i < 40; ++i) {
      t[i] = rng.uniform(0.5, 2.0);
      p[i] = rng.uniform(-1.0, 1.0);
      t2[i] = 0.25 * t[i];  // power-of-two scale, exact in binary
      p2[i] = 0.25 * p[i];
    }
    CHECK(relative_l1(p, t, 40, 1)[0] == relative_l1(p2, t2, 40, 1)[0]);
  }

  SUBCASE("channels are scored independently") {
    // channel 0: {1,2} vs {0,2} -> 0.5; channel 1: {4,4} vs {3,4} -> 0.125
    const std::vector<double> truth{1.0, 4.0, 2.0, 4.0};
    const std::vector<double> pred{0.0, 3.0, 2.0, 4.0};
    const auto err = relative_l1(pred, truth, 2, 2);
    REQUIRE(err.size() == 2);
    CHECK(err[0] == 0.5);
    CHECK(err[1] == 0.125);
  }

  SUBCASE("zero truth values hit the denominator floor") {
    const auto err = relative_l1({1.0}, {0.0}, 1, 1);
    CHECK(err[0] == 1e12);
  }

  SUBCASE("size mismatches are rejected") {
    CHECK_THROWS_AS((void)relative_l1({1.0, 2.0}, {1.0}, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS((void)relative_l1({}, {}, 0, 1), std::invalid_argument);
  }
}

TEST_CASE("relative L1 is bit-identical under joint row permutations") {
  const int64_t n = 101, m = 2;
  Rng rng(33);
  std::vector<double> truth(n * m), pred(n * m);
  for (auto& v : truth) v = rng.normal();
  for (auto& v : pred) v = rng.normal();

  std::vector<int64_t> perm(n);
  for (int64_t i = 0; i < n; ++i) perm[i] = i;
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[static_cast<int64_t>(rng.below(static_cast<uint64_t>(i) + 1))]);

  std::vector<double> truth_p(n * m), pred_p(n * m);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t c = 0; c < m; ++c) {
      truth_p[i * m + c] = truth[perm[i] * m + c];
      pred_p[i * m + c] = pred[perm[i] * m + c];
    }

  const auto a = relative_l1(pred, truth, n, m);
  const auto b = relative_l1(pred_p, truth_p, n, m);
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("median uses the lower-middle convention") {
  CHECK(median_lower({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median_lower({4.0, 1.0, 3.0, 2.0}) == 2.0);  // lower of {2,3}, not 2.5
  CHECK(median_lower({7.0}) == 7.0);
  CHECK(median_lower({2.0, 1.0}) == 1.0);
  CHECK_THROWS_AS((void)median_lower({}), std::invalid_argument);
}

TEST_CASE("normalized scores and robustness match their definitions") {
  SUBCASE("normalized scores") {
    const auto s = normalized_scores({2.0, 4.0});
    REQUIRE(s.size() == 2);
    CHECK(s[0] == 1.0);
    CHECK(s[1] == 0.5);

    const auto r = normalized_scores({4.0, 2.0});
    CHECK(r[0] == 0.5);
    CHECK(r[1] == 1.0);

    CHECK(normalized_scores({7.0}) == std::vector<double>{1.0});
    CHECK(normalized_scores({3.0, 3.0, 3.0}) == std::vector<double>{1.0, 1.0, 1.0});

    CHECK_THROWS_AS((void)normalized_scores({}), std::invalid_argument);
    CHECK_THROWS_AS((void)normalized_scores({1.0, 0.0}), std::invalid_argument);
    CHECK_THROWS_AS((void)normalized_scores({1.0, -2.0}), std::invalid_argument);
  }

  SUBCASE("robustness score") {
    CHECK(robustness_score({1.0, 0.5}) == 0.5);
    CHECK(robustness_score({0.5, 0.5, 0.5}) == 0.5);  // CV = 0 leaves the mean
    CHECK(robustness_score({1.0, 1.0, 1.0, 0.0}) ==
          doctest::Approx(0.75 - std::sqrt(0.1875)).epsilon(1e-15));
    CHECK_THROWS_AS((void)robustness_score({}), std::invalid_argument);
    CHECK_THROWS_AS((void)robustness_score({1.0, -1.0}), std::invalid_argument);
  }
}

TEST_CASE("direct inference is exactly one step") {
  Fixture fx = diffusion_fixture(Stepping::Derivative);
  const auto& s = fx.ds.samples[fx.ds.test_idx[0]];
  const SampleGeometry& g = *fx.geos[fx.ds.test_idx[0]];
  const auto u0 = snapshot_of(s, 0, fx.ds.m);

  const auto direct = infer_direct(fx.model, g, u0, u0, s.times.front(), 0.5);
  const auto stepped = fx.model.step(g, u0, u0, s.times.front(), 0.5);
  CHECK(bitwise_equal(direct, stepped));

  // Zero lead time under derivative stepping reproduces the input state.
  const auto frozen = infer_direct(fx.model, g, u0, u0, s.times.front(), 0.0);
  CHECK(bitwise_equal(frozen, u0));
}

TEST_CASE("autoregressive rollout strides, counts, and composition") {
  Fixture fx = diffusion_fixture(Stepping::Derivative);
  const auto& s = fx.ds.samples[fx.ds.test_idx[0]];
  const SampleGeometry& g = *fx.geos[fx.ds.test_idx[0]];
  const auto u0 = snapshot_of(s, 0, fx.ds.m);

  SUBCASE("evaluation counts over long horizons") {
    CHECK(infer_autoregressive(fx.model, g, u0, 0.0, 2.0, 14.0).evaluations == 7);
    CHECK(infer_autoregressive(fx.model, g, u0, 0.0, 4.0, 16.0).evaluations == 4);
  }

  SUBCASE("a single-stride rollout equals direct inference bit for bit") {
    const auto roll = infer_autoregressive(fx.model, g, u0, 0.0, 0.75, 0.75);
    CHECK(roll.evaluations == 1);
    CHECK(bitwise_equal(roll.prediction, infer_direct(fx.model, g, u0, u0, 0.0, 0.75)));
  }

  SUBCASE("two strides compose two steps") {
    const auto roll = infer_autoregressive(fx.model, g, u0, 0.0, 0.25, 0.5);
    REQUIRE(roll.evaluations == 2);
    const auto u1 = fx.model.step(g, u0, u0, 0.0, 0.25);
    const auto u2 = fx.model.step(g, u1, u1, 0.25, 0.25);
    CHECK(bitwise_equal(roll.prediction, u2));
  }

  SUBCASE("a zero-length horizon returns the initial state untouched") {
    const auto roll = infer_autoregressive(fx.model, g, u0, 0.5, 0.25, 0.5);
    CHECK(roll.evaluations == 0);
    CHECK(bitwise_equal(roll.prediction, u0));
  }

  SUBCASE("unusable strides and horizons are rejected") {
    CHECK_THROWS_AS((void)infer_autoregressive(fx.model, g, u0, 0.0, 4.0, 14.0),
                    std::invalid_argument);  // 14 is not a multiple of 4
    CHECK_THROWS_AS((void)infer_autoregressive(fx.model, g, u0, 0.0, 0.0, 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)infer_autoregressive(fx.model, g, u0, 0.0, -0.5, 1.0),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)infer_autoregressive(fx.model, g, u0, 1.0, 0.5, 0.0),
                    std::invalid_argument);
  }

  SUBCASE("queries must coincide with the points") {
    std::vector<double> few(s.coords.begin(), s.coords.begin() + 10 * fx.ds.d);
    const SampleGeometry partial = fx.model.prepare_geometry(s.coords, s.n, few, 10);
    CHECK_THROWS_AS((void)infer_autoregressive(fx.model, partial, u0, 0.0, 0.25, 0.5),
                    std::invalid_argument);
  }

  SUBCASE("feeding predictions back needs matching channel counts") {
    GaotConfig c = tiny_config();
    c.in_channels = 2;
    Rng init(3);
    GaotModel two_in = make_gaot(c, init);
    const SampleGeometry self = two_in.prepare_geometry(s.coords, s.n, s.coords, s.n);
    CHECK_THROWS_AS((void)infer_autoregressive(two_in, self, u0, 0.0, 0.25, 0.5),
                    std::invalid_argument);
  }
}

TEST_CASE("evaluate scores stored trajectories at the final snapshot") {
  Fixture fx = diffusion_fixture(Stepping::Derivative);
  const int64_t m = fx.ds.m;

  SUBCASE("direct mode") {
    const EvalReport rep = evaluate(fx.model, fx.ds, fx.ds.test_idx, fx.geos);
    REQUIRE(rep.sample_ids.size() == fx.ds.test_idx.size());
    REQUIRE(rep.errors.size() == fx.ds.test_idx.size());
    CHECK(rep.mode == "DR");
    CHECK(rep.model_evaluations == static_cast<int64_t>(fx.ds.test_idx.size()));
    CHECK(rep.config_echo == emit_model_config(fx.model.cfg));
    CHECK(rep.seconds >= 0.0);
    CHECK(std::isfinite(rep.samples_per_s));
    CHECK(rep.ms_per_sample > 0.0);

    std::vector<double> column;
    for (size_t i = 0; i < rep.sample_ids.size(); ++i) {
      const auto& s = fx.ds.samples[rep.sample_ids[i]];
      const SampleGeometry& g = *fx.geos[rep.sample_ids[i]];
      const auto u0 = snapshot_of(s, 0, m);
      const auto truth = snapshot_of(s, s.t_count - 1, m);
      const auto pred =
          fx.model.step(g, u0, u0, s.times.front(), s.times.back() - s.times.front());
      const auto want = relative_l1(pred, truth, s.n, m);
      REQUIRE(rep.errors[i].size() == want.size());
      CHECK(bitwise_equal(rep.errors[i], want));
      CHECK(rep.errors[i][0] >= 0.0);
      column.push_back(rep.errors[i][0]);
    }
    REQUIRE(rep.channel_medians.size() == 1);
    CHECK(rep.channel_medians[0] == median_lower(column));
    CHECK(rep.median_rel_l1 == rep.channel_medians[0]);
  }

  SUBCASE("autoregressive mode") {
    EvalOptions opt;
    opt.mode = InferMode::Autoregressive;
    opt.ar_dt = 0.25;
    const EvalReport rep = evaluate(fx.model, fx.ds, fx.ds.test_idx, fx.geos, opt);
    CHECK(rep.mode == "AR");
    CHECK(rep.model_evaluations == 4 * static_cast<int64_t>(fx.ds.test_idx.size()));

    for (size_t i = 0; i < rep.sample_ids.size(); ++i) {
      const auto& s = fx.ds.samples[rep.sample_ids[i]];
      const SampleGeometry& g = *fx.geos[rep.sample_ids[i]];
      const auto u0 = snapshot_of(s, 0, m);
      const auto roll =
          infer_autoregressive(fx.model, g, u0, s.times.front(), 0.25, s.times.back());
      const auto want = relative_l1(roll.prediction, snapshot_of(s, s.t_count - 1, m), s.n, m);
      CHECK(bitwise_equal(rep.errors[i], want));
    }
  }

  SUBCASE("a whole-horizon stride reduces autoregressive to direct") {
    EvalOptions opt;
    opt.mode = InferMode::Autoregressive;
    opt.ar_dt = 1.0;
    const EvalReport ar = evaluate(fx.model, fx.ds, fx.ds.test_idx, fx.geos, opt);
    const EvalReport dr = evaluate(fx.model, fx.ds, fx.ds.test_idx, fx.geos);
    REQUIRE(ar.errors.size() == dr.errors.size());
    for (size_t i = 0; i < ar.errors.size(); ++i)
      CHECK(bitwise_equal(ar.errors[i], dr.errors[i]));
  }

  SUBCASE("unusable requests are rejected") {
    CHECK_THROWS_AS((void)evaluate(fx.model, fx.ds, {}, fx.geos), std::invalid_argument);
    CHECK_THROWS_AS((void)evaluate(fx.model, fx.ds, {99}, fx.geos), std::invalid_argument);
    std::vector<const SampleGeometry*> short_geos(fx.geos.begin(), fx.geos.end() - 1);
    CHECK_THROWS_AS((void)evaluate(fx.model, fx.ds, fx.ds.test_idx, short_geos),
                    std::invalid_argument);
    EvalOptions opt;
    opt.mode = InferMode::Autoregressive;  // ar_dt left unset
    CHECK_THROWS_AS((void)evaluate(fx.model, fx.ds, fx.ds.test_idx, fx.geos, opt),
                    std::invalid_argument);
  }
}

TEST_CASE("evaluate handles time-independent samples from their input fields") {
  GaotConfig cfg = tiny_config();
  Fixture fx(cfg, gen_poisson_gauss(GenSplit{2, 0, 1}, 64, 7), 9);

  const EvalReport rep = evaluate(fx.model, fx.ds, fx.ds.test_idx, fx.geos);
  REQUIRE(rep.errors.size() == 1);
  CHECK(rep.model_evaluations == 1);

  const auto& s = fx.ds.samples[fx.ds.test_idx[0]];
  const SampleGeometry& g = *fx.geos[fx.ds.test_idx[0]];
  const auto pred = fx.model.step(g, s.input_fields, {}, 0.0, 0.0);
  const auto want = relative_l1(pred, snapshot_of(s, 0, fx.ds.m), s.n, fx.ds.m);
  CHECK(bitwise_equal(rep.errors[0], want));
}

TEST_CASE("evaluation reports round-trip through CSV and summarize cleanly") {
  TempDir tmp;
  Fixture fx = diffusion_fixture(Stepping::Derivative);
  const EvalReport rep = evaluate(fx.model, fx.ds, fx.ds.test_idx, fx.geos);

  const auto csv_path = tmp.path / "report.csv";
  write_eval_csv(csv_path, rep);
  std::ifstream in(csv_path);
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "sample_id,channel,rel_l1");
  size_t rows = 0;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string sample_str, channel_str, err_str;
    REQUIRE(std::getline(row, sample_str, ','));
    REQUIRE(std::getline(row, channel_str, ','));
    REQUIRE(std::getline(row, err_str));
    const size_t i = rows / rep.channel_medians.size();
    const size_t c = rows % rep.channel_medians.size();
    CHECK(std::stoull(sample_str) == rep.sample_ids[i]);
    CHECK(std::stoull(channel_str) == c);
    CHECK(std::stod(err_str) == rep.errors[i][c]);  // %.17g round-trips exactly
    ++rows;
  }
  CHECK(rows == rep.sample_ids.size() * rep.channel_medians.size());

  const std::string summary = format_eval_summary(rep);
  CHECK(summary.find("mode = DR") != std::string::npos);
  CHECK(summary.find("samples = 3") != std::string::npos);
  CHECK(summary.find("median_rel_l1 = ") != std::string::npos);
  CHECK(summary.find("config:") != std::string::npos);
  const std::string first_cfg_line = rep.config_echo.substr(0, rep.config_echo.find('\n'));
  CHECK(summary.find("  " + first_cfg_line) != std::string::npos);
}

TEST_CASE("bench reports positive statistics and leaves the model in place") {
  Fixture fx = diffusion_fixture(Stepping::Derivative);

  SUBCASE("train mode restores the parameters") {
    const auto before = snapshot_params(fx.model);
    const BenchResult r = bench(fx.model, fx.ds, fx.geos, BenchMode::Train, 1, 3, 5);
    CHECK(r.warmup == 1);
    CHECK(r.reps == 3);
    CHECK(r.samples_per_s > 0.0);
    CHECK(std::isfinite(r.samples_per_s));
    CHECK(r.ms_per_sample > 0.0);
    CHECK(bitwise_equal(before, snapshot_params(fx.model)));
  }

  SUBCASE("infer mode at batch one") {
    const BenchResult r = bench(fx.model, fx.ds, fx.geos, BenchMode::Infer, 1, 3);
    CHECK(r.samples_per_s > 0.0);
    CHECK(r.ms_per_sample > 0.0);
    CHECK(r.ms_per_sample * r.samples_per_s == doctest::Approx(1000.0).epsilon(1e-9));
  }

  SUBCASE("unusable setups are rejected") {
    CHECK_THROWS_AS((void)bench(fx.model, fx.ds, fx.geos, BenchMode::Infer, 1, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)bench(fx.model, fx.ds, fx.geos, BenchMode::Infer, -1, 3),
                    std::invalid_argument);
    std::vector<const SampleGeometry*> short_geos(fx.geos.begin(), fx.geos.end() - 1);
    CHECK_THROWS_AS((void)bench(fx.model, fx.ds, short_geos, BenchMode::Infer, 1, 3),
                    std::invalid_argument);
  }
}

TEST_CASE("svg charts carry the requested marks") {
  TempDir tmp;
  PlotSeries a{"train < loss", {0.0, 1.0, 2.0, 3.0}, {1.0, 0.5, 0.3, 0.25}};
  PlotSeries b{"test", {0.0, 1.0, 2.0, 3.0}, {1.2, 0.8, 0.6, 0.55}};

  SUBCASE("line chart") {
    const auto path = tmp.path / "loss.svg";
    write_svg_plot(path, "loss < curves", "epoch", "mse", {a, b}, false);
    const std::string svg = slurp(path);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("<polyline") != std::string::npos);
    CHECK(svg.find("<circle") == std::string::npos);
    CHECK(svg.find("loss &lt; curves") != std::string::npos);
    CHECK(svg.find("train &lt; loss") != std::string::npos);
    CHECK(svg.find("epoch") != std::string::npos);
    CHECK(svg.find("</svg>") != std::string::npos);
  }

  SUBCASE("scatter chart") {
    const auto path = tmp.path / "errors.svg";
    write_svg_plot(path, "error vs resolution", "points", "rel L1", {a}, true);
    const std::string svg = slurp(path);
    CHECK(svg.find("<circle") != std::string::npos);
    CHECK(svg.find("<polyline") == std::string::npos);
  }

  SUBCASE("degenerate ranges still render") {
    const auto path = tmp.path / "flat.svg";
    write_svg_plot(path, "flat", "x", "y", {{"c", {1.0, 1.0}, {2.0, 2.0}}}, false);
    CHECK(slurp(path).rfind("<svg", 0) == 0);
  }

  SUBCASE("unusable series are rejected") {
    CHECK_THROWS_AS(write_svg_plot(tmp.path / "bad.svg", "t", "x", "y",
                                   {{"bad", {1.0, 2.0}, {1.0}}}, false),
                    std::invalid_argument);
    CHECK_THROWS_AS(write_svg_plot(tmp.path / "empty.svg", "t", "x", "y", {{"e", {}, {}}}, false),
                    std::invalid_argument);
    const double nan = std::nan("");
    CHECK_THROWS_AS(write_svg_plot(tmp.path / "nan.svg", "t", "x", "y",
                                   {{"n", {nan}, {nan}}}, false),
                    std::invalid_argument);
  }
}
