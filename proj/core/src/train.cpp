#include "gaot/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "gaot/ops.hpp"

namespace gaot {

// ---- learning-rate schedule ------------------------------------------------

double lr_at(int64_t epoch, const ScheduleConfig& cfg) {
  const int64_t total = cfg.total_epochs;
  if (epoch < 0 || epoch >= total)
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(total) + ")");
  const int64_t warm = std::llround(static_cast<double>(total) * cfg.warmup_frac);
  const int64_t cosine = std::llround(static_cast<double>(total) * cfg.cosine_frac);
  if (epoch < warm) {
    const double s = static_cast<double>(epoch) / static_cast<double>(warm);
    return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * s;
  }
  if (epoch < warm + cosine) {
    const double s = static_cast<double>(epoch - warm) / static_cast<double>(cosine);
    return cfg.lr_cos_end + (cfg.lr_peak - cfg.lr_cos_end) * 0.5 * (1.0 + std::cos(M_PI * s));
  }
  return cfg.lr_final;
}

// ---- optimizer -------------------------------------------------------------

AdamW::AdamW(NamedParams params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (auto& [name, p] : params_) {
    m_.emplace_back(p->numel(), 0.0);
    v_.emplace_back(p->numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    auto& [name, p] = params_[k];
    if (!p->grad) continue;  // parameter never touched a tape: gradient is zero
    auto& val = p->v();
    auto& grad = p->g();
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < val.size(); ++i) {
      const double g = grad[i];
      if (!std::isfinite(g))
        throw std::runtime_error("optimizer saw a non-finite gradient in parameter '" + name +
                                 "'");
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      val[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * val[i]);
    }
  }
}

// ---- training items --------------------------------------------------------

std::vector<TrainItem> training_items(const Dataset& ds, const std::vector<uint64_t>& idx,
                                      Stepping stepping) {
  std::vector<TrainItem> items;
  for (uint64_t i : idx) {
    const auto& s = ds.samples.at(i);
    if (s.t_count <= 1) {
      if (stepping == Stepping::Output) items.push_back({i, 0, 0});
      continue;
    }
    for (const auto& [a, b] : all2all_pairs(s.times)) {
      if (stepping == Stepping::Derivative && s.times[b] - s.times[a] <= 0.0) continue;
      items.push_back({i, a, b});
    }
  }
  return items;
}

// ---- batch gradient --------------------------------------------------------

namespace {

bool item_less(const TrainItem& a, const TrainItem& b) {
  if (a.sample != b.sample) return a.sample < b.sample;
  if (a.t_from != b.t_from) return a.t_from < b.t_from;
  return a.t_to < b.t_to;
}

uint64_t item_tag(const TrainItem& it) {
  return (it.sample << 24) ^ (static_cast<uint64_t>(it.t_from) << 12) ^
         static_cast<uint64_t>(it.t_to);
}

}  // namespace

double batch_gradient(GaotModel& model, const Dataset& ds,
                      const std::vector<const SampleGeometry*>& geos, std::vector<TrainItem> items,
                      uint64_t seed, bool training) {
  if (items.empty()) throw std::invalid_argument("batch_gradient: empty batch");
  std::sort(items.begin(), items.end(), item_less);

  NamedParams params;
  model.collect(params);
  std::vector<std::vector<double>> sums(params.size());
  for (size_t k = 0; k < params.size(); ++k) sums[k].assign(params[k].second->numel(), 0.0);

  const auto& norm = model.norm;
  const int64_t m = model.cfg.out_channels;
  double loss_sum = 0.0;
  for (const TrainItem& it : items) {
    const auto& s = ds.samples.at(it.sample);
    const SampleGeometry* g = geos.at(it.sample);
    if (!g) throw std::invalid_argument("batch_gradient: missing geometry for sample " +
                                        std::to_string(it.sample));
    const bool time_dep = s.t_count > 1;
    const double t = s.times.at(it.t_from);
    const double tau = s.times.at(it.t_to) - t;

    std::vector<double> input;
    if (time_dep)
      input.assign(s.snapshots.begin() + it.t_from * s.n * m,
                   s.snapshots.begin() + (it.t_from + 1) * s.n * m);
    else
      input = s.input_fields;

    std::vector<double> target(s.n * m);
    const double* from = s.snapshots.data() + it.t_from * s.n * m;
    const double* to = s.snapshots.data() + it.t_to * s.n * m;
    for (int64_t i = 0; i < s.n * m; ++i) {
      double raw = to[i];
      if (model.cfg.stepping == Stepping::Residual) raw = to[i] - from[i];
      if (model.cfg.stepping == Stepping::Derivative) raw = (to[i] - from[i]) / tau;
      const int64_t c = i % m;
      target[i] = (raw - norm.out_mean[c]) / norm.out_std[c];
    }

    for (auto& [name, p] : params) ad::zero_grad(*p);
    Rng item_rng(derive_seed(seed, "item", item_tag(it)));
    double value = 0.0;
    {
      ad::Tape tape;
      const ad::Tensor out = model.forward(*g, input, t, tau, item_rng, training);
      const ad::Tensor diff = ad::sub(out, ad::constant({s.n, m}, target));
      const ad::Tensor loss = ad::mean_all(ad::mul(diff, diff));
      value = loss.scalar();
      tape.backward(loss);
    }
    loss_sum += value;
    for (size_t k = 0; k < params.size(); ++k) {
      const auto& grad = params[k].second->g();
      auto& sum = sums[k];
      for (size_t i = 0; i < sum.size(); ++i) sum[i] += grad[i];
    }
  }

  const double inv = 1.0 / static_cast<double>(items.size());
  for (size_t k = 0; k < params.size(); ++k) {
    ad::zero_grad(*params[k].second);
    auto& grad = params[k].second->g();
    for (size_t i = 0; i < grad.size(); ++i) grad[i] = sums[k][i] * inv;
  }
  return loss_sum * inv;
}

// ---- training loop ---------------------------------------------------------

TrainResult train(GaotModel& model, const Dataset& ds,
                  const std::vector<const SampleGeometry*>& geos, const TrainConfig& cfg) {
  if (!model.norm.fitted)
    throw std::runtime_error("train requires fitted normalization statistics; call fit first");
  if (cfg.epochs < 0) throw std::invalid_argument("train: negative epoch count");
  if (cfg.batch < 1) throw std::invalid_argument("train: batch size must be positive");
  if (geos.size() != ds.samples.size())
    throw std::invalid_argument("train: geometry list must align with the dataset");

  std::vector<TrainItem> items = training_items(ds, ds.train_idx, model.cfg.stepping);
  if (items.empty() && cfg.epochs > 0)
    throw std::invalid_argument("train: the training split yields no items");

  ScheduleConfig schedule = cfg.schedule;
  schedule.total_epochs = cfg.epochs;

  std::ofstream log;
  if (!cfg.log_csv.empty()) {
    if (cfg.log_csv.has_parent_path()) std::filesystem::create_directories(cfg.log_csv.parent_path());
    log.open(cfg.log_csv, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open metrics log " + cfg.log_csv.string());
    log << "epoch,loss,lr,seconds\n" << std::flush;
  }
  if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

  NamedParams params;
  model.collect(params);
  AdamW opt(params, 0.9, 0.999, 1e-8, cfg.weight_decay);

  TrainResult result;
  result.items_per_epoch = static_cast<int64_t>(items.size());

  char buf[160];
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = lr_at(epoch, schedule);

    Rng shuf(derive_seed(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)));
    for (size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[shuf.below(i)]);
    const uint64_t drop_seed = derive_seed(cfg.seed, "dropout", static_cast<uint64_t>(epoch));

    double epoch_sum = 0.0;
    for (size_t start = 0; start < items.size(); start += cfg.batch) {
      const size_t stop = std::min(items.size(), start + cfg.batch);
      std::vector<TrainItem> batch(items.begin() + start, items.begin() + stop);
      const double loss = batch_gradient(model, ds, geos, std::move(batch), drop_seed, true);
      if (!std::isfinite(loss)) {
        const std::string last = result.last_checkpoint.empty()
                                     ? std::string("(none)")
                                     : result.last_checkpoint.string();
        throw std::runtime_error("training aborted: non-finite loss in epoch " +
                                 std::to_string(epoch) + "; last good checkpoint: " + last);
      }
      opt.step(lr);
      epoch_sum += loss * static_cast<double>(stop - start);
    }
    const double epoch_loss = epoch_sum / static_cast<double>(items.size());
    result.epoch_loss.push_back(epoch_loss);
    result.epoch_lr.push_back(lr);

    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log) {
      std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.3f\n", static_cast<long long>(epoch),
                    epoch_loss, lr, seconds);
      log << buf << std::flush;
    }

    if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_interval > 0 &&
        (epoch + 1) % cfg.checkpoint_interval == 0) {
      std::snprintf(buf, sizeof buf, "epoch_%06lld.ckpt", static_cast<long long>(epoch + 1));
      const auto path = cfg.checkpoint_dir / buf;
      model.save_checkpoint(path);
      result.last_checkpoint = path;
    }
  }

  if (!cfg.checkpoint_dir.empty()) {
    const auto path = cfg.checkpoint_dir / "final.ckpt";
    model.save_checkpoint(path);
    result.last_checkpoint = path;
  }
  return result;
}

}  // namespace gaot
