#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pmmn/dataset.hpp"
#include "pmmn/io.hpp"
#include "pmmn/model.hpp"
#include "pmmn/patterns.hpp"

namespace pmmn {

inline constexpr double kMapeFloor = 1.0;  // targets below this (speed units) are left out of MAPE

struct HorizonMetrics {
  std::size_t step = 0;  // 1-based horizon step
  double mae = 0.0;
  double mape = 0.0;  // percent
  double rmse = 0.0;
  std::size_t count = 0;

  std::size_t minutes() const { return step * kMinutesPerStep; }
};

struct MetricReport {
  std::vector<HorizonMetrics> horizons;

  const HorizonMetrics& at_minutes(std::size_t minutes) const {
    for (const auto& h : horizons) {
      if (h.minutes() == minutes) return h;
    }
    throw Error("metric report has no " + std::to_string(minutes) + "-minute horizon");
  }
};

/// Horizon steps reported by default: every 15 minutes up to the model
/// horizon (all steps when the horizon is shorter than 15 minutes).
inline std::vector<std::size_t> default_horizon_steps(std::size_t horizon) {
  std::vector<std::size_t> out;
  for (std::size_t s = 3; s <= horizon; s += 3) out.push_back(s);
  if (out.empty()) {
    for (std::size_t s = 1; s <= horizon; ++s) out.push_back(s);
  }
  return out;
}

/// Streaming MAE / MAPE / RMSE per horizon step.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::vector<std::size_t> steps) : steps_(std::move(steps)) {
    abs_.assign(steps_.size(), 0.0);
    sq_.assign(steps_.size(), 0.0);
    pct_.assign(steps_.size(), 0.0);
    n_.assign(steps_.size(), 0);
    n_pct_.assign(steps_.size(), 0);
  }

  const std::vector<std::size_t>& steps() const { return steps_; }

  /// `h` indexes steps(); adds one prediction/target pair.
  void add(std::size_t h, double pred, double truth) {
    const double e = pred - truth;
    abs_[h] += std::abs(e);
    sq_[h] += e * e;
    ++n_[h];
    if (std::abs(truth) >= kMapeFloor) {
      pct_[h] += std::abs(e) / std::abs(truth);
      ++n_pct_[h];
    }
  }

  /// Adds rows x horizon predictions and targets in speed units; entries with
  /// mask == 0 are skipped.
  void add(const Tensor& pred, const Tensor& truth, const Tensor& mask) {
    for (std::size_t h = 0; h < steps_.size(); ++h) {
      const std::size_t c = steps_[h] - 1;
      if (c >= pred.cols()) throw Error("metrics: horizon step beyond prediction length");
      for (std::size_t r = 0; r < pred.rows(); ++r) {
        if (mask(r, c) != 0.0) add(h, pred(r, c), truth(r, c));
      }
    }
  }

  MetricReport report() const {
    MetricReport rep;
    for (std::size_t h = 0; h < steps_.size(); ++h) {
      HorizonMetrics m;
      m.step = steps_[h];
      m.count = n_[h];
      if (n_[h] > 0) {
        m.mae = abs_[h] / static_cast<double>(n_[h]);
        m.rmse = std::sqrt(sq_[h] / static_cast<double>(n_[h]));
      }
      if (n_pct_[h] > 0) m.mape = 100.0 * pct_[h] / static_cast<double>(n_pct_[h]);
      rep.horizons.push_back(m);
    }
    return rep;
  }

 private:
  std::vector<std::size_t> steps_;
  std::vector<double> abs_, sq_, pct_;
  std::vector<std::size_t> n_, n_pct_;
};

namespace detail {

inline void check_steps(const std::vector<std::size_t>& steps, std::size_t horizon) {
  for (std::size_t s : steps) {
    if (s == 0 || s > horizon) {
      throw Error("requested horizon of " + std::to_string(s * kMinutesPerStep) +
                  " min is beyond the model horizon of " +
                  std::to_string(horizon * kMinutesPerStep) + " min");
    }
  }
}

/// Targets in speed units (rows x horizon) and mask for a chunk of windows.
inline std::pair<Tensor, Tensor> raw_targets(const SeriesDataset& ds,
                                             std::span<const Window> windows,
                                             std::size_t input_len, std::size_t horizon) {
  const std::size_t n = ds.nodes();
  Tensor y(windows.size() * n, horizon);
  Tensor mask(windows.size() * n, horizon);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const std::size_t t0 = windows[b].start + input_len;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t h = 0; h < horizon; ++h) {
        y(b * n + i, h) = ds.speed(i, t0 + h);
        mask(b * n + i, h) = ds.observed(i, t0 + h);
      }
    }
  }
  return {std::move(y), std::move(mask)};
}

}  // namespace detail

/// Scores the model on every window of `split`, in speed units, over
/// observed targets only.
inline MetricReport evaluate(ForecastModel& model, const SeriesDataset& ds, const PatternSet& bank,
                             Split split, std::vector<std::size_t> steps = {},
                             std::size_t batch = 64) {
  const auto& cfg = model.config();
  if (steps.empty()) steps = default_horizon_steps(cfg.horizon);
  detail::check_steps(steps, cfg.horizon);
  const auto windows = make_windows(ds, split, cfg.input_len, cfg.horizon);
  MetricAccumulator acc(steps);
  for (std::size_t b0 = 0; b0 < windows.size(); b0 += batch) {
    const auto chunk = std::span<const Window>(windows).subspan(b0, std::min(batch, windows.size() - b0));
    const Tensor pred = forecast(model, ds, bank, chunk, cfg.horizon, batch);
    const auto [y, mask] = detail::raw_targets(ds, chunk, cfg.input_len, cfg.horizon);
    acc.add(pred, y, mask);
  }
  return acc.report();
}

/// Historical-average baseline: the prediction for any future step is the
/// node's training time-of-day mean. Scored on the same windows as the model.
inline MetricReport historical_average(const SeriesDataset& ds, Split split, std::size_t input_len,
                                       std::size_t horizon, std::vector<std::size_t> steps = {}) {
  if (steps.empty()) steps = default_horizon_steps(horizon);
  detail::check_steps(steps, horizon);
  const auto profiles = compute_daily_profiles(ds);
  const auto windows = make_windows(ds, split, input_len, horizon);
  MetricAccumulator acc(steps);
  for (const auto& w : windows) {
    const std::size_t t0 = w.start + input_len;
    for (std::size_t h = 0; h < steps.size(); ++h) {
      const std::size_t t = t0 + steps[h] - 1;
      for (std::size_t i = 0; i < ds.nodes(); ++i) {
        if (ds.observed(i, t) == 0.0) continue;
        acc.add(h, profiles[i].speed[ds.slots[t]], ds.speed(i, t));
      }
    }
  }
  return acc.report();
}

/// `horizon_min,mae,mape,rmse,ha_mae,ha_mape,ha_rmse`. Without a model
/// report the model columns are left empty.
inline void write_report_csv(const std::string& path, const MetricReport* model,
                             const MetricReport& ha) {
  auto os = io::open_out(path);
  os << "horizon_min,mae,mape,rmse,ha_mae,ha_mape,ha_rmse\n";
  for (std::size_t h = 0; h < ha.horizons.size(); ++h) {
    const auto& b = ha.horizons[h];
    os << b.minutes() << ',';
    if (model) {
      const auto& m = model->horizons.at(h);
      os << io::fmt_double(m.mae) << ',' << io::fmt_double(m.mape) << ','
         << io::fmt_double(m.rmse);
    } else {
      os << ",,";
    }
    os << ',' << io::fmt_double(b.mae) << ',' << io::fmt_double(b.mape) << ','
       << io::fmt_double(b.rmse) << '\n';
  }
}

}  // namespace pmmn
