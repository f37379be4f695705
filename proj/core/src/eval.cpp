#include "gaot/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gaot/train.hpp"

namespace gaot {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

std::vector<double> snapshot_slice(const TrajectorySample& s, int64_t t_idx, int64_t m) {
  const size_t stride = static_cast<size_t>(s.n) * m;
  const size_t off = static_cast<size_t>(t_idx) * stride;
  return {s.snapshots.begin() + off, s.snapshots.begin() + off + stride};
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---- metrics ---------------------------------------------------------------

std::vector<double> relative_l1(const std::vector<double>& pred, const std::vector<double>& truth,
                                int64_t n, int64_t m) {
  if (n <= 0 || m <= 0) throw std::invalid_argument("relative_l1: empty value table");
  const size_t want = static_cast<size_t>(n) * m;
  if (pred.size() != want || truth.size() != want)
    throw std::invalid_argument("relative_l1: pred and truth must both hold " +
                                std::to_string(want) + " values");

  std::vector<double> out(static_cast<size_t>(m));
  std::vector<double> terms(static_cast<size_t>(n));
  for (int64_t c = 0; c < m; ++c) {
    for (int64_t i = 0; i < n; ++i) {
      const double t = truth[static_cast<size_t>(i) * m + c];
      const double p = pred[static_cast<size_t>(i) * m + c];
      terms[static_cast<size_t>(i)] = std::abs(t - p) / std::max(std::abs(t), 1e-12);
    }
    // Sorting before the reduction makes the sum independent of row order.
    std::sort(terms.begin(), terms.end());
    double sum = 0.0;
    for (double v : terms) sum += v;
    out[static_cast<size_t>(c)] = sum / static_cast<double>(n);
  }
  return out;
}

double median_lower(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty sequence");
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

std::vector<double> normalized_scores(const std::vector<double>& errors) {
  if (errors.empty()) throw std::invalid_argument("normalized_scores: no errors given");
  for (double e : errors)
    if (!(e > 0.0)) throw std::invalid_argument("normalized_scores: errors must be positive");
  const double best = *std::min_element(errors.begin(), errors.end());
  std::vector<double> scores(errors.size());
  for (size_t i = 0; i < errors.size(); ++i) scores[i] = best / errors[i];
  return scores;
}

double robustness_score(const std::vector<double>& scores) {
  if (scores.empty()) throw std::invalid_argument("robustness_score: no scores given");
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(scores.size());
  if (!(mean > 0.0)) throw std::invalid_argument("robustness_score: mean score must be positive");
  double var = 0.0;
  for (double s : scores) var += (s - mean) * (s - mean);
  var /= static_cast<double>(scores.size());
  return mean - std::sqrt(var);
}

// ---- inference -------------------------------------------------------------

std::vector<double> infer_direct(const GaotModel& model, const SampleGeometry& g,
                                 const std::vector<double>& fields, const std::vector<double>& u_t,
                                 double t, double tau) {
  return model.step(g, fields, u_t, t, tau);
}

Rollout infer_autoregressive(const GaotModel& model, const SampleGeometry& g,
                             const std::vector<double>& u0, double t0, double dt_ar,
                             double t_final) {
  if (!(dt_ar > 0.0)) throw std::invalid_argument("rollout stride must be positive");
  if (t_final < t0) throw std::invalid_argument("rollout horizon ends before it starts");
  if (g.n_queries != g.n_points)
    throw std::invalid_argument(
        "autoregressive rollout feeds predictions back as inputs; the geometry must use the "
        "points themselves as queries");
  if (model.cfg.in_channels != model.cfg.out_channels)
    throw std::invalid_argument(
        "autoregressive rollout needs matching input and output channel counts");

  const double horizon = t_final - t0;
  const int64_t steps = std::llround(horizon / dt_ar);
  if (std::abs(horizon - static_cast<double>(steps) * dt_ar) > 1e-9)
    throw std::invalid_argument("rollout horizon " + std::to_string(horizon) +
                                " is not a whole multiple of the stride " + std::to_string(dt_ar));

  Rollout r;
  r.prediction = u0;
  for (int64_t k = 0; k < steps; ++k)
    r.prediction = model.step(g, r.prediction, r.prediction,
                              t0 + static_cast<double>(k) * dt_ar, dt_ar);
  r.evaluations = steps;
  return r;
}

// ---- benchmarking ----------------------------------------------------------

namespace {

template <class Unit>
BenchResult run_timed(Unit&& unit, int64_t warmup, int64_t reps) {
  for (int64_t r = 0; r < warmup; ++r) unit(r);
  const auto start = Clock::now();
  for (int64_t r = 0; r < reps; ++r) unit(warmup + r);
  const double secs = std::max(seconds_between(start, Clock::now()), 1e-12);

  BenchResult out;
  out.samples_per_s = static_cast<double>(reps) / secs;
  out.ms_per_sample = 1e3 * secs / static_cast<double>(reps);
  out.warmup = warmup;
  out.reps = reps;
  return out;
}

}  // namespace

BenchResult bench(GaotModel& model, const Dataset& ds,
                  const std::vector<const SampleGeometry*>& geos, BenchMode mode, int64_t warmup,
                  int64_t reps, uint64_t seed) {
  if (reps < 1) throw std::invalid_argument("bench needs at least one timed repetition");
  if (warmup < 0) throw std::invalid_argument("bench warmup cannot be negative");
  if (ds.samples.empty()) throw std::invalid_argument("bench: empty dataset");
  if (geos.size() != ds.samples.size())
    throw std::invalid_argument("bench: need one geometry per dataset sample");

  const int64_t m = ds.m;

  if (mode == BenchMode::Train) {
    std::vector<uint64_t> all(ds.samples.size());
    std::iota(all.begin(), all.end(), uint64_t{0});
    const auto items = training_items(ds, all, model.cfg.stepping);
    if (items.empty()) throw std::invalid_argument("bench: the dataset yields no training items");

    NamedParams params;
    model.collect(params);
    std::vector<std::vector<double>> saved;
    saved.reserve(params.size());
    for (auto& [name, p] : params) saved.emplace_back(p->v().begin(), p->v().end());
    auto restore = [&] {
      for (size_t i = 0; i < params.size(); ++i)
        std::copy(saved[i].begin(), saved[i].end(), params[i].second->v().begin());
    };

    AdamW opt(params);
    auto unit = [&](int64_t r) {
      const auto& item = items[static_cast<size_t>(r % static_cast<int64_t>(items.size()))];
      batch_gradient(model, ds, geos, {item}, seed, true);
      opt.step(1e-3);
    };
    try {
      BenchResult out = run_timed(unit, warmup, reps);
      restore();
      return out;
    } catch (...) {
      restore();
      throw;
    }
  }

  auto unit = [&](int64_t r) {
    const size_t id = static_cast<size_t>(r % static_cast<int64_t>(ds.samples.size()));
    const TrajectorySample& s = ds.samples[id];
    const SampleGeometry& g = *geos[id];
    if (s.t_count > 1) {
      const std::vector<double> u0 = snapshot_slice(s, 0, m);
      const std::vector<double> u_t = g.n_queries == s.n
                                          ? u0
                                          : std::vector<double>(static_cast<size_t>(g.n_queries) * m, 0.0);
      (void)model.step(g, u0, u_t, s.times.front(), s.times[1] - s.times.front());
    } else {
      (void)model.step(g, s.input_fields,
                       std::vector<double>(static_cast<size_t>(g.n_queries) * m, 0.0), 0.0, 0.0);
    }
  };
  return run_timed(unit, warmup, reps);
}

// ---- reports ---------------------------------------------------------------

EvalReport evaluate(const GaotModel& model, const Dataset& ds, const std::vector<uint64_t>& idx,
                    const std::vector<const SampleGeometry*>& geos, const EvalOptions& opt) {
  if (idx.empty()) throw std::invalid_argument("evaluate: no samples selected");
  if (geos.size() != ds.samples.size())
    throw std::invalid_argument("evaluate: need one geometry per dataset sample");
  if (opt.mode == InferMode::Autoregressive && !(opt.ar_dt > 0.0))
    throw std::invalid_argument("evaluate: autoregressive mode needs a positive ar_dt");

  EvalReport rep;
  rep.mode = opt.mode == InferMode::Direct ? "DR" : "AR";
  rep.config_echo = emit_model_config(model.cfg);
  const int64_t m = ds.m;

  const auto start = Clock::now();
  for (uint64_t id : idx) {
    if (id >= ds.samples.size())
      throw std::invalid_argument("evaluate: sample index " + std::to_string(id) +
                                  " out of range");
    const TrajectorySample& s = ds.samples[id];
    if (!geos[id])
      throw std::invalid_argument("evaluate: missing geometry for sample " + std::to_string(id));
    const SampleGeometry& g = *geos[id];
    if (g.n_queries != s.n)
      throw std::invalid_argument(
          "evaluate: the geometry must use the sample's own points as queries");

    std::vector<double> pred, truth;
    if (s.t_count <= 1) {
      truth = snapshot_slice(s, 0, m);
      pred = model.step(g, s.input_fields, {}, 0.0, 0.0);
      rep.model_evaluations += 1;
    } else {
      const std::vector<double> u0 = snapshot_slice(s, 0, m);
      truth = snapshot_slice(s, s.t_count - 1, m);
      const double t0 = s.times.front();
      const double tf = s.times.back();
      if (opt.mode == InferMode::Direct) {
        pred = model.step(g, u0, u0, t0, tf - t0);
        rep.model_evaluations += 1;
      } else {
        Rollout roll = infer_autoregressive(model, g, u0, t0, opt.ar_dt, tf);
        pred = std::move(roll.prediction);
        rep.model_evaluations += roll.evaluations;
      }
    }
    rep.sample_ids.push_back(id);
    rep.errors.push_back(relative_l1(pred, truth, s.n, m));
  }
  rep.seconds = seconds_between(start, Clock::now());

  const double secs = std::max(rep.seconds, 1e-12);
  rep.samples_per_s = static_cast<double>(idx.size()) / secs;
  rep.ms_per_sample = 1e3 * secs / static_cast<double>(idx.size());

  rep.channel_medians.resize(static_cast<size_t>(m));
  std::vector<double> column(rep.errors.size());
  for (int64_t c = 0; c < m; ++c) {
    for (size_t i = 0; i < rep.errors.size(); ++i) column[i] = rep.errors[i][static_cast<size_t>(c)];
    rep.channel_medians[static_cast<size_t>(c)] = median_lower(column);
  }
  double sum = 0.0;
  for (double v : rep.channel_medians) sum += v;
  rep.median_rel_l1 = sum / static_cast<double>(m);
  return rep;
}

void write_eval_csv(const std::filesystem::path& path, const EvalReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "sample_id,channel,rel_l1\n";
  for (size_t i = 0; i < report.errors.size(); ++i)
    for (size_t c = 0; c < report.errors[i].size(); ++c)
      out << report.sample_ids[i] << ',' << c << ',' << fmt17(report.errors[i][c]) << '\n';
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string format_eval_summary(const EvalReport& report) {
  std::ostringstream out;
  out << "mode = " << report.mode << '\n';
  out << "samples = " << report.sample_ids.size() << '\n';
  out << "channels = " << report.channel_medians.size() << '\n';
  out << "model_evaluations = " << report.model_evaluations << '\n';
  out << "seconds = " << fmt17(report.seconds) << '\n';
  out << "samples_per_s = " << fmt17(report.samples_per_s) << '\n';
  out << "ms_per_sample = " << fmt17(report.ms_per_sample) << '\n';
  for (size_t c = 0; c < report.channel_medians.size(); ++c)
    out << "median_rel_l1[" << c << "] = " << fmt17(report.channel_medians[c]) << '\n';
  out << "median_rel_l1 = " << fmt17(report.median_rel_l1) << '\n';
  out << "config:\n";
  std::istringstream cfg(report.config_echo);
  for (std::string line; std::getline(cfg, line);) out << "  " << line << '\n';
  return out.str();
}

// ---- SVG charts ------------------------------------------------------------

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char ch : s) {
    if (ch == '&')
      out += "&amp;";
    else if (ch == '<')
      out += "&lt;";
    else if (ch == '>')
      out += "&gt;";
    else
      out += ch;
  }
  return out;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                    "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

void write_svg_plot(const std::filesystem::path& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<PlotSeries>& series, bool scatter) {
  double xmin = 0.0, xmax = 0.0, ymin = 0.0, ymax = 0.0;
  bool any = false;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size())
      throw std::invalid_argument("plot series '" + s.name + "' has mismatched x/y lengths");
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!any) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        any = true;
      } else {
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, s.y[i]);
        ymax = std::max(ymax, s.y[i]);
      }
    }
  }
  if (!any) throw std::invalid_argument("plot needs at least one finite data point");
  if (xmax == xmin) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax == ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }

  const double width = 640.0, height = 400.0;
  const double left = 70.0, right = 620.0, top = 50.0, bottom = 350.0;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
  auto py = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  out << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"28\" text-anchor=\"middle\" font-size=\"16\" "
         "font-family=\"sans-serif\">"
      << xml_escape(title) << "</text>\n";

  // Axes with range labels at both ends.
  out << "<line x1=\"" << left << "\" y1=\"" << bottom << "\" x2=\"" << right << "\" y2=\""
      << bottom << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << bottom
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << left << "\" y=\"" << bottom + 18
      << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << fmt4(xmin)
      << "</text>\n";
  out << "<text x=\"" << right << "\" y=\"" << bottom + 18
      << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << fmt4(xmax)
      << "</text>\n";
  out << "<text x=\"" << left - 8 << "\" y=\"" << bottom + 4
      << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt4(ymin)
      << "</text>\n";
  out << "<text x=\"" << left - 8 << "\" y=\"" << top + 4
      << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt4(ymax)
      << "</text>\n";
  out << "<text x=\"" << (left + right) / 2 << "\" y=\"" << bottom + 38
      << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">"
      << xml_escape(x_label) << "</text>\n";
  out << "<text x=\"18\" y=\"" << (top + bottom) / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
         "transform=\"rotate(-90 18 "
      << (top + bottom) / 2 << ")\">" << xml_escape(y_label) << "</text>\n";

  const size_t palette_n = sizeof(kPalette) / sizeof(kPalette[0]);
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = kPalette[si % palette_n];
    if (scatter) {
      for (size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        out << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i])
            << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    } else {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        out << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
      }
      out << "\"/>\n";
    }
    const double ly = top + 16.0 * static_cast<double>(si);
    out << "<rect x=\"" << right - 150 << "\" y=\"" << ly - 9
        << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
    out << "<text x=\"" << right - 136 << "\" y=\"" << ly
        << "\" font-size=\"11\" font-family=\"sans-serif\">" << xml_escape(s.name)
        << "</text>\n";
  }
  out << "</svg>\n";

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw std::runtime_error("cannot open for writing: " + path.string());
  file << out.str();
  file.flush();
  if (!file) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace gaot
