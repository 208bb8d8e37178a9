#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pmmn/dataset.hpp"
#include "pmmn/io.hpp"
#include "pmmn/model.hpp"
#include "pmmn/optim.hpp"
#include "pmmn/patterns.hpp"

namespace pmmn {

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch = 16;  // window origins per mini-batch
  double lr = 1e-3;
  std::size_t patience = 15;
  std::uint64_t seed = 42;
  // Mini-batches drawn per epoch after shuffling; 0 uses every training window.
  std::size_t batches_per_epoch = 0;
  // Validation windows scored per epoch (evenly strided); 0 uses all of them.
  std::size_t max_val_windows = 0;
  std::size_t first_epoch = 1;  // epoch number of the first epoch run (resume)
  bool record_timing = true;
  std::function<void(std::size_t epoch, double train_mae, double val_mae)> on_epoch;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mae = 0.0;  // mean mini-batch loss, normalised units
  double val_mae = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

/// Mean normalised MAE of the model over `windows`, eval mode.
inline double normalized_mae(ForecastModel& model, const SeriesDataset& ds, const PatternSet& bank,
                             std::span<const Window> windows, std::size_t batch = 64) {
  const auto& cfg = model.config();
  double sum = 0.0;
  double count = 0.0;
  for (std::size_t b0 = 0; b0 < windows.size(); b0 += batch) {
    const auto chunk = windows.subspan(b0, std::min(batch, windows.size() - b0));
    const auto in = build_model_input(ds, bank, cfg, chunk);
    const auto [y, mask] = build_targets(ds, chunk, cfg.input_len, cfg.horizon);
    GradTape tape;
    const Tensor& p = tape.value(model.forward(tape, in, Mode::Eval, cfg.horizon));
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (mask[i] == 0.0) continue;
      sum += std::abs(p[i] - y[i]);
      count += 1.0;
    }
  }
  return count > 0.0 ? sum / count : std::numeric_limits<double>::quiet_NaN();
}

/// Mini-batch Adam on the MAE loss with shuffled window origins, validation
/// tracking and early stopping. On return the model holds the parameters of
/// the best validation epoch (the last epoch when there is no validation data).
inline TrainResult train_loop(ForecastModel& model, const SeriesDataset& ds, const PatternSet& bank,
                              const TrainOptions& opt, std::vector<Window> train_windows = {},
                              std::vector<Window> val_windows = {}) {
  const auto& cfg = model.config();
  if (opt.batch == 0) throw Error("train: batch size must be positive");
  if (train_windows.empty()) train_windows = make_windows(ds, Split::Train, cfg.input_len, cfg.horizon);
  if (val_windows.empty()) val_windows = make_windows(ds, Split::Val, cfg.input_len, cfg.horizon);
  if (opt.max_val_windows > 0 && val_windows.size() > opt.max_val_windows) {
    std::vector<Window> sub;
    const double stride = static_cast<double>(val_windows.size()) / static_cast<double>(opt.max_val_windows);
    for (std::size_t i = 0; i < opt.max_val_windows; ++i) {
      sub.push_back(val_windows[static_cast<std::size_t>(static_cast<double>(i) * stride)]);
    }
    val_windows = std::move(sub);
  }

  TrainResult res;
  if (opt.epochs == 0) return res;
  if (train_windows.empty()) throw Error("train: the training split yields no windows");

  AdamOptions adam;
  adam.lr = opt.lr;
  std::mt19937_64 rng(opt.seed + opt.first_epoch);
  ParamStore best = model.params();
  std::size_t since_best = 0;

  for (std::size_t e = 0; e < opt.epochs; ++e) {
    const std::size_t epoch = opt.first_epoch + e;
    const auto t_start = std::chrono::steady_clock::now();
    std::shuffle(train_windows.begin(), train_windows.end(), rng);
    std::size_t nbatches = (train_windows.size() + opt.batch - 1) / opt.batch;
    if (opt.batches_per_epoch > 0) nbatches = std::min(nbatches, opt.batches_per_epoch);

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < nbatches; ++b) {
      const auto chunk = std::span<const Window>(train_windows)
                             .subspan(b * opt.batch, std::min(opt.batch, train_windows.size() - b * opt.batch));
      const auto in = build_model_input(ds, bank, cfg, chunk);
      const auto [y, mask] = build_targets(ds, chunk, cfg.input_len, cfg.horizon);
      double loss = 0.0;
      try {
        GradTape tape;
        Var pred = model.forward(tape, in, Mode::Train, cfg.horizon);
        Var l = tape.mae_loss(pred, y, mask);
        loss = tape.value(l)[0];
        tape.backward(l);
      } catch (const Error& err) {
        throw Error("train: diverged at epoch " + std::to_string(epoch) + " batch " +
                    std::to_string(b) + " (" + err.what() + ")");
      }
      if (!std::isfinite(loss)) {
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                    std::to_string(b));
      }
      adam_step(model.params(), adam);
      loss_sum += loss;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mae = loss_sum / static_cast<double>(nbatches);
    if (!val_windows.empty()) rec.val_mae = normalized_mae(model, ds, bank, val_windows);
    if (opt.record_timing) {
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    }
    res.history.push_back(rec);
    if (opt.on_epoch) opt.on_epoch(epoch, rec.train_mae, rec.val_mae);

    const double score = std::isfinite(rec.val_mae) ? rec.val_mae : rec.train_mae;
    if (val_windows.empty() || score < res.best_val) {
      res.best_val = score;
      res.best_epoch = epoch;
      best = model.params();
      since_best = 0;
    } else if (++since_best >= opt.patience) {
      res.stopped_early = true;
      break;
    }
  }
  model.params() = std::move(best);
  return res;
}

/// `epoch,train_mae,val_mae,seconds`.
inline void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history,
                              bool append = false) {
  std::ofstream os(path, append ? std::ios::app : std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  if (!append) os << "epoch,train_mae,val_mae,seconds\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << io::fmt_double(r.train_mae) << ','
       << (std::isfinite(r.val_mae) ? io::fmt_double(r.val_mae) : std::string("nan")) << ','
       << io::fmt_fixed(r.seconds, 3) << '\n';
  }
}

}  // namespace pmmn
