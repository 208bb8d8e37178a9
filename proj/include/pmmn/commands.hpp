#pragma once

#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pmmn/checkpoint.hpp"
#include "pmmn/config.hpp"
#include "pmmn/dataset.hpp"
#include "pmmn/graph.hpp"
#include "pmmn/metrics.hpp"
#include "pmmn/model.hpp"
#include "pmmn/patterns.hpp"
#include "pmmn/prepare.hpp"
#include "pmmn/synth.hpp"
#include "pmmn/train.hpp"

namespace pmmn {

namespace detail {

inline std::string out_path(const RunConfig& cfg, const std::string& file) {
  std::filesystem::create_directories(cfg.out_dir);
  return (std::filesystem::path(cfg.out_dir) / file).string();
}

inline std::string bank_path(const RunConfig& cfg) {
  return cfg.bank.empty() ? out_path(cfg, "patterns.pmpb") : cfg.bank;
}

inline std::string checkpoint_path(const RunConfig& cfg) {
  return cfg.checkpoint.empty() ? out_path(cfg, "model.pmmn") : cfg.checkpoint;
}

inline void require(const std::string& value, const char* key) {
  if (value.empty()) throw Error(std::string("missing required setting '") + key + "'");
}

inline SeriesDataset load_raw_dataset(const RunConfig& cfg) {
  require(cfg.data, "data");
  auto ds = load_dataset_csv(cfg.data, cfg.zero_is_missing);
  if (!cfg.node_file.empty() && load_node_ids(cfg.node_file) != ds.node_ids) {
    throw Error("node id file '" + cfg.node_file + "' does not match the dataset columns");
  }
  return ds;
}

inline Tensor load_support(const RunConfig& cfg, const SeriesDataset& ds) {
  require(cfg.distances, "distances");
  const auto g = build_adjacency(ds.node_ids, load_distances_csv(cfg.distances),
                                 cfg.adjacency_threshold);
  return normalize_adjacency(g.adjacency);
}

inline std::vector<std::size_t> horizon_steps(const RunConfig& cfg, std::size_t horizon) {
  if (cfg.horizons_min.empty()) return default_horizon_steps(horizon);
  std::vector<std::size_t> steps;
  for (std::size_t m : cfg.horizons_min) {
    if (m == 0 || m % kMinutesPerStep != 0) {
      throw Error("horizon " + std::to_string(m) + " min is not a positive multiple of " +
                  std::to_string(kMinutesPerStep) + " min");
    }
    steps.push_back(m / kMinutesPerStep);
  }
  return steps;
}

inline void check_bank(const Metadata& meta, const PatternSet& bank) {
  const auto it = meta.find("bank_hash");
  if (it == meta.end()) throw Error("checkpoint has no pattern bank hash");
  if (io::parse_hex64(it->second) != bank.hash()) {
    throw Error("pattern bank hash " + io::hex64(bank.hash()) +
                " does not match the checkpoint's " + it->second);
  }
}

/// Checkpoint, bank and prepared dataset for evaluate / forecast.
struct Loaded {
  Checkpoint ck;
  PatternSet bank;
  SeriesDataset ds;
};

inline Loaded load_trained(const RunConfig& cfg) {
  Loaded l{load_checkpoint(checkpoint_path(cfg)), load_pattern_bank(bank_path(cfg)), {}};
  check_bank(l.ck.meta, l.bank);
  l.ds = load_raw_dataset(cfg);
  prepare_dataset(l.ds);
  if (l.ds.nodes() != l.ck.model.nodes()) {
    throw Error("dataset has " + std::to_string(l.ds.nodes()) + " nodes, checkpoint expects " +
                std::to_string(l.ck.model.nodes()));
  }
  l.ds.mean = std::stod(l.ck.meta.at("z_mean"));
  l.ds.stddev = std::stod(l.ck.meta.at("z_std"));
  return l;
}

inline void print_report(std::ostream& log, const MetricReport* model, const MetricReport& ha) {
  log << std::left << std::setw(8) << "horizon";
  if (model) log << std::setw(10) << "MAE" << std::setw(10) << "MAPE%" << std::setw(10) << "RMSE";
  log << std::setw(10) << "HA_MAE" << std::setw(10) << "HA_MAPE%" << "HA_RMSE\n";
  for (std::size_t h = 0; h < ha.horizons.size(); ++h) {
    const auto& b = ha.horizons[h];
    log << std::setw(8) << (std::to_string(b.minutes()) + "min");
    if (model) {
      const auto& m = model->horizons[h];
      log << std::setw(10) << io::fmt_fixed(m.mae, 3) << std::setw(10) << io::fmt_fixed(m.mape, 2)
          << std::setw(10) << io::fmt_fixed(m.rmse, 3);
    }
    log << std::setw(10) << io::fmt_fixed(b.mae, 3) << std::setw(10) << io::fmt_fixed(b.mape, 2)
        << io::fmt_fixed(b.rmse, 3) << '\n';
  }
  log << std::right;
}

}  // namespace detail

struct ExtractResult {
  std::size_t raw_count = 0;
  PatternSet bank;
  double inertia = 0.0;
  std::string bank_path;
};

/// Builds the key bank from training-split daily profiles, writes it along
/// with `patterns.csv` and `similarity.csv` into the output directory.
inline ExtractResult cmd_extract_patterns(const RunConfig& cfg, std::ostream& log) {
  const auto ds = detail::load_raw_dataset(cfg);
  const auto profiles = compute_daily_profiles(ds);
  const auto raw = sample_windows(profiles, cfg.model.input_len);

  ExtractResult res;
  res.raw_count = raw.size();
  if (raw.size() == 1) {
    log << "warning: the training data has a single distinct pattern shape; writing a "
           "one-pattern bank\n";
    res.bank = PatternSet(Tensor(1, cfg.model.input_len, raw.front()));
  } else {
    auto km = cluster_patterns(raw, cfg.model.num_patterns, cfg.kmeans_iters, cfg.seed());
    res.inertia = km.inertia.empty() ? 0.0 : km.inertia.back();
    res.bank = std::move(km.patterns);
  }
  res.bank_path = detail::bank_path(cfg);
  save_pattern_bank(res.bank, res.bank_path);
  export_patterns_csv(res.bank, detail::out_path(cfg, "patterns.csv"));
  export_similarity_csv(similarity_histogram(raw, res.bank), detail::out_path(cfg, "similarity.csv"));
  log << "raw patterns: " << res.raw_count << "\nclustered patterns: " << res.bank.size()
      << "\ninertia: " << io::fmt_double(res.inertia) << "\nbank hash: " << io::hex64(res.bank.hash())
      << "\nbank: " << res.bank_path << '\n';
  return res;
}

struct TrainReport {
  TrainResult result;
  std::size_t epochs_done = 0;
  std::string checkpoint_path;
  std::string history_path;
};

/// Trains (or resumes) a model and writes the checkpoint and `history.csv`.
/// The model's pattern count is taken from the bank.
inline TrainReport cmd_train(const RunConfig& cfg, std::ostream& log) {
  auto ds = detail::load_raw_dataset(cfg);
  prepare_dataset(ds);
  const auto bank = load_pattern_bank(detail::bank_path(cfg));
  if (bank.length() != cfg.model.input_len) {
    throw Error("pattern bank length " + std::to_string(bank.length()) +
                " does not match input_len " + std::to_string(cfg.model.input_len));
  }

  ForecastModel model;
  std::size_t done = 0;
  if (!cfg.resume.empty()) {
    auto ck = load_checkpoint(cfg.resume);
    detail::check_bank(ck.meta, bank);
    if (ck.model.nodes() != ds.nodes()) throw Error("resumed checkpoint has a different node count");
    done = std::stoull(ck.meta.at("epochs_done"));
    model = std::move(ck.model);
  } else {
    ModelConfig mc = cfg.model;
    mc.num_patterns = bank.size();
    model = ForecastModel(mc, detail::load_support(cfg, ds));
  }

  TrainOptions opt = cfg.train;
  opt.first_epoch = done + 1;
  opt.on_epoch = [&log](std::size_t e, double tr, double va) {
    log << "epoch " << e << " train_mae " << io::fmt_fixed(tr, 5) << " val_mae "
        << io::fmt_fixed(va, 5) << '\n';
  };
  TrainReport rep;
  rep.result = train_loop(model, ds, bank, opt);
  rep.epochs_done = done + rep.result.history.size();
  rep.history_path = detail::out_path(cfg, "history.csv");
  write_history_csv(rep.history_path, rep.result.history,
                    !cfg.resume.empty() && std::filesystem::exists(rep.history_path));

  Metadata meta;
  meta["bank_hash"] = io::hex64(bank.hash());
  meta["epochs_done"] = std::to_string(rep.epochs_done);
  meta["best_epoch"] = std::to_string(rep.result.best_epoch);
  meta["z_mean"] = io::fmt_double(ds.mean);
  meta["z_std"] = io::fmt_double(ds.stddev);
  rep.checkpoint_path = detail::checkpoint_path(cfg);
  save_checkpoint(rep.checkpoint_path, model, meta);
  log << "checkpoint: " << rep.checkpoint_path << " (best epoch " << rep.result.best_epoch << ")\n";
  return rep;
}

struct EvalResult {
  std::optional<MetricReport> model;
  MetricReport ha;
  std::string report_path;
};

/// Scores a checkpoint (or only the historical average when `ha_only`) and
/// writes `report.csv`.
inline EvalResult cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
  const Split split = parse_split(cfg.split);
  EvalResult res;
  if (cfg.ha_only) {
    auto ds = detail::load_raw_dataset(cfg);
    prepare_dataset(ds);
    const auto steps = detail::horizon_steps(cfg, cfg.model.horizon);
    res.ha = historical_average(ds, split, cfg.model.input_len, cfg.model.horizon, steps);
  } else {
    auto l = detail::load_trained(cfg);
    const auto& mc = l.ck.model.config();
    const auto steps = detail::horizon_steps(cfg, mc.horizon);
    res.model = evaluate(l.ck.model, l.ds, l.bank, split, steps);
    res.ha = historical_average(l.ds, split, mc.input_len, mc.horizon, steps);
  }
  res.report_path = detail::out_path(cfg, "report.csv");
  write_report_csv(res.report_path, res.model ? &*res.model : nullptr, res.ha);
  detail::print_report(log, res.model ? &*res.model : nullptr, res.ha);
  return res;
}

/// Writes `forecast.csv` for the windows of the configured split.
inline std::string cmd_forecast(const RunConfig& cfg, std::ostream& log) {
  auto l = detail::load_trained(cfg);
  const auto& mc = l.ck.model.config();
  auto windows = make_windows(l.ds, parse_split(cfg.split), mc.input_len, mc.horizon);
  if (cfg.max_windows > 0 && windows.size() > cfg.max_windows) windows.resize(cfg.max_windows);
  const Tensor pred = forecast(l.ck.model, l.ds, l.bank, windows);
  const std::string path = detail::out_path(cfg, "forecast.csv");
  auto os = io::open_out(path);
  os << "node_id,origin_timestamp,horizon_min,y_pred,y_true\n";
  const std::size_t n = l.ds.nodes();
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const std::size_t origin = windows[b].start + mc.input_len - 1;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t h = 0; h < mc.horizon; ++h) {
        const std::size_t t = origin + 1 + h;
        os << l.ds.node_ids[i] << ',' << l.ds.timestamps[origin] << ','
           << (h + 1) * kMinutesPerStep << ',' << io::fmt_fixed(pred(b * n + i, h), 4) << ',';
        if (l.ds.observed(i, t) != 0.0) os << io::fmt_fixed(l.ds.speed(i, t), 4);
        os << '\n';
      }
    }
  }
  log << "forecast: " << path << " (" << windows.size() << " origins)\n";
  return path;
}

/// Writes `speeds.csv`, `distances.csv` and `nodes.txt` into the output directory.
inline SynthData cmd_synth(const RunConfig& cfg, std::ostream& log) {
  auto data = generate_synthetic(cfg.synth);
  std::filesystem::create_directories(cfg.out_dir);
  write_synthetic(data, cfg.out_dir);
  log << "synthetic " << cfg.synth.topology << ": " << cfg.synth.nodes << " nodes, "
      << cfg.synth.days << " days, " << data.events << " events -> " << cfg.out_dir << '\n';
  return data;
}

}  // namespace pmmn
