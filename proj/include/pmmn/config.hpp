#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pmmn/io.hpp"
#include "pmmn/model.hpp"
#include "pmmn/synth.hpp"
#include "pmmn/train.hpp"

namespace pmmn {

/// Everything a command needs. Populated from a flat `key = value` file and
/// then from command-line overrides, both through RunConfig::set.
struct RunConfig {
  // paths
  std::string data;
  std::string distances;
  std::string node_file;
  std::string bank;
  std::string checkpoint;
  std::string resume;
  std::string out_dir = ".";

  ModelConfig model;
  TrainOptions train;
  SynthConfig synth;

  // data handling
  bool zero_is_missing = true;
  double adjacency_threshold = 0.1;
  std::size_t kmeans_iters = 100;

  // evaluation / forecasting
  std::string split = "test";
  bool ha_only = false;
  std::vector<std::size_t> horizons_min;  // empty: every 15 minutes
  std::size_t max_windows = 0;            // forecast: 0 writes every window

  std::uint64_t seed() const { return model.seed; }

  /// Keys accepted by set(), for help text and flag registration.
  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k = {
        "data", "distances", "nodes", "bank", "checkpoint", "resume", "out_dir",
        "input_len", "horizon", "hidden", "layers", "k", "num_patterns", "heads", "embed_dim",
        "simple_mem", "seed", "epochs", "batch", "lr", "patience", "batches_per_epoch",
        "max_val_windows", "record_timing", "zero_is_missing", "adjacency_threshold",
        "kmeans_iters", "split", "ha_only", "horizons", "max_windows", "topology",
        "synth_nodes", "days", "regimes", "noise", "event_rate"};
    return k;
  }

  void set(const std::string& key, const std::string& value) {
    if (key == "data") data = value;
    else if (key == "distances") distances = value;
    else if (key == "nodes") node_file = value;
    else if (key == "bank") bank = value;
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "resume") resume = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "input_len") model.input_len = to_size(key, value);
    else if (key == "horizon") model.horizon = to_size(key, value);
    else if (key == "hidden") model.hidden = to_size(key, value);
    else if (key == "layers") model.layers = to_size(key, value);
    else if (key == "k") model.k = to_size(key, value);
    else if (key == "num_patterns") model.num_patterns = to_size(key, value);
    else if (key == "heads") model.heads = to_size(key, value);
    else if (key == "embed_dim") model.embed_dim = to_size(key, value);
    else if (key == "simple_mem") model.simple_mem = to_bool(key, value);
    else if (key == "seed") {
      model.seed = to_size(key, value);
      train.seed = model.seed;
      synth.seed = model.seed;
    }
    else if (key == "epochs") train.epochs = to_size(key, value);
    else if (key == "batch") train.batch = to_size(key, value);
    else if (key == "lr") train.lr = to_double(key, value);
    else if (key == "patience") train.patience = to_size(key, value);
    else if (key == "batches_per_epoch") train.batches_per_epoch = to_size(key, value);
    else if (key == "max_val_windows") train.max_val_windows = to_size(key, value);
    else if (key == "record_timing") train.record_timing = to_bool(key, value);
    else if (key == "zero_is_missing") zero_is_missing = to_bool(key, value);
    else if (key == "adjacency_threshold") adjacency_threshold = to_double(key, value);
    else if (key == "kmeans_iters") kmeans_iters = to_size(key, value);
    else if (key == "split") split = value;
    else if (key == "ha_only") ha_only = to_bool(key, value);
    else if (key == "horizons") {
      horizons_min.clear();
      for (const auto& f : io::split_csv(value)) {
        if (!io::trim(f).empty()) horizons_min.push_back(to_size(key, io::trim(f)));
      }
    }
    else if (key == "max_windows") max_windows = to_size(key, value);
    else if (key == "topology") synth.topology = value;
    else if (key == "synth_nodes") synth.nodes = to_size(key, value);
    else if (key == "days") synth.days = to_size(key, value);
    else if (key == "regimes") synth.regimes = to_size(key, value);
    else if (key == "noise") synth.noise = to_double(key, value);
    else if (key == "event_rate") synth.event_rate = to_double(key, value);
    else throw Error("config: unknown key '" + key + "'");
  }

  static std::size_t to_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw Error("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
    return out;
  }

  static double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end || !std::isfinite(out)) {
      throw Error("config: '" + key + "' expects a number, got '" + v + "'");
    }
    return out;
  }

  static bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw Error("config: '" + key + "' expects a boolean, got '" + v + "'");
  }
};

/// Parses `key = value` lines; `#` starts a comment, blank lines are ignored.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = io::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error("config: line " + std::to_string(lineno) + " is not of the form key = value");
    }
    auto key = io::trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw Error("config: line " + std::to_string(lineno) + " has an empty key");
    out.emplace_back(std::move(key), io::trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
  auto is = io::open_in(path);
  const std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  for (const auto& [k, v] : parse_config_text(text)) cfg.set(k, v);
}

}  // namespace pmmn
