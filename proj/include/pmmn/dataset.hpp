#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "pmmn/io.hpp"
#include "pmmn/tensor.hpp"

namespace pmmn {

inline constexpr std::size_t kSlotsPerDay = 288;  // 5-minute resolution
inline constexpr std::size_t kMinutesPerStep = 5;

enum class Split { Train, Val, Test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw Error("unknown split '" + s + "' (expected train, val or test)");
}

/// Node x time speed matrix with its observation mask, time-of-day slots,
/// contiguous train/val/test boundaries and z-score statistics.
struct SeriesDataset {
  std::vector<std::string> node_ids;
  std::vector<std::string> timestamps;
  std::vector<std::size_t> slots;  // time-of-day slot of every step
  Tensor speed;                    // nodes x steps, speed units
  Tensor observed;                 // 1 where the raw value was present
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  double mean = 0.0;
  double stddev = 1.0;

  std::size_t nodes() const { return speed.rows(); }
  std::size_t steps() const { return speed.cols(); }

  std::pair<std::size_t, std::size_t> range(Split s) const {
    switch (s) {
      case Split::Train: return {0, train_end};
      case Split::Val: return {train_end, val_end};
      case Split::Test: return {val_end, steps()};
    }
    return {0, 0};
  }
};

/// Contiguous 70/10/20 split of `steps` time steps.
inline std::pair<std::size_t, std::size_t> split_boundaries(std::size_t steps,
                                                            double train_frac = 0.7,
                                                            double val_frac = 0.1) {
  // The small slack keeps exact products such as 1000 * (0.7 + 0.1) from
  // flooring one step short.
  auto cut = [steps](double frac) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(steps) * frac + 1e-9));
  };
  const std::size_t train_end = cut(train_frac);
  const std::size_t val_end = cut(train_frac + val_frac);
  return {train_end, val_end};
}

/// Minute of day of an ISO-8601 timestamp `YYYY-MM-DD[T ]HH:MM[:SS...]`.
inline int minute_of_day(const std::string& ts) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  char sep = 0;
  if (std::sscanf(ts.c_str(), "%d-%d-%d%c%d:%d", &y, &mo, &d, &sep, &h, &mi) != 6 ||
      (sep != 'T' && sep != ' ')) {
    throw Error("invalid ISO-8601 timestamp '" + ts + "'");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y},
                                        std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59) {
    throw Error("invalid ISO-8601 timestamp '" + ts + "'");
  }
  return h * 60 + mi;
}

inline std::size_t slot_of(const std::string& ts) {
  return static_cast<std::size_t>(minute_of_day(ts)) / kMinutesPerStep % kSlotsPerDay;
}

inline bool is_missing_token(const std::string& s) {
  return s.empty() || s == "NaN" || s == "nan" || s == "NAN" || s == "NA" || s == "null";
}

/// Reads the dataset CSV: first column timestamp, one column per node (the
/// header row holds node ids). Empty cells and NaN tokens are missing; zeros
/// are missing too when `zero_is_missing` is set.
inline SeriesDataset load_dataset_csv(const std::string& path, bool zero_is_missing = true) {
  auto is = io::open_in(path);
  std::string line;
  if (!std::getline(is, line)) throw Error("dataset: empty file '" + path + "'");
  auto header = io::split_csv(line);
  if (header.size() < 2) throw Error("dataset: header needs a timestamp column and >= 1 node");
  std::vector<std::string> ids(header.begin() + 1, header.end());
  const std::size_t n = ids.size();

  std::vector<std::string> stamps;
  std::vector<double> values;  // step-major while reading
  std::vector<double> mask;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (io::trim(line).empty()) continue;
    auto f = io::split_csv(line);
    if (f.size() != n + 1) {
      throw Error("dataset: line " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                  " fields, expected " + std::to_string(n + 1));
    }
    stamps.push_back(f[0]);
    for (std::size_t i = 0; i < n; ++i) {
      double v = std::numeric_limits<double>::quiet_NaN();
      if (!is_missing_token(f[i + 1])) {
        try {
          v = std::stod(f[i + 1]);
        } catch (const std::exception&) {
          throw Error("dataset: non-numeric value '" + f[i + 1] + "' at line " +
                      std::to_string(lineno));
        }
      }
      const bool missing = !std::isfinite(v) || (zero_is_missing && v == 0.0);
      values.push_back(missing ? 0.0 : v);
      mask.push_back(missing ? 0.0 : 1.0);
    }
  }
  if (stamps.empty()) throw Error("dataset: no data rows in '" + path + "'");

  SeriesDataset ds;
  ds.node_ids = std::move(ids);
  const std::size_t steps = stamps.size();
  ds.speed = Tensor(n, steps);
  ds.observed = Tensor(n, steps);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      ds.speed(i, t) = values[t * n + i];
      ds.observed(i, t) = mask[t * n + i];
    }
  }
  ds.slots.reserve(steps);
  for (const auto& s : stamps) ds.slots.push_back(slot_of(s));
  ds.timestamps = std::move(stamps);
  std::tie(ds.train_end, ds.val_end) = split_boundaries(steps);
  return ds;
}

// ---- z-score ----------------------------------------------------------------

inline double zscore(double x, double mean, double stddev) { return (x - mean) / stddev; }
inline double unzscore(double z, double mean, double stddev) { return z * stddev + mean; }

inline Tensor zscore(const Tensor& x, double mean, double stddev) {
  if (!(stddev > 0.0)) throw Error("zscore: standard deviation must be positive");
  Tensor out = x;
  for (double& v : out.values()) v = zscore(v, mean, stddev);
  return out;
}

inline Tensor unzscore(const Tensor& z, double mean, double stddev) {
  if (!(stddev > 0.0)) throw Error("unzscore: standard deviation must be positive");
  Tensor out = z;
  for (double& v : out.values()) v = unzscore(v, mean, stddev);
  return out;
}

/// Mean and population standard deviation of the training split.
inline std::pair<double, double> training_stats(const SeriesDataset& ds) {
  const auto [b, e] = ds.range(Split::Train);
  double n = 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < ds.nodes(); ++i) {
    for (std::size_t t = b; t < e; ++t) {
      s += ds.speed(i, t);
      n += 1.0;
    }
  }
  if (n == 0.0) throw Error("zscore: empty training split");
  const double mean = s / n;
  double v = 0.0;
  for (std::size_t i = 0; i < ds.nodes(); ++i) {
    for (std::size_t t = b; t < e; ++t) v += (ds.speed(i, t) - mean) * (ds.speed(i, t) - mean);
  }
  const double sd = std::sqrt(v / n);
  if (!(sd > 0.0)) throw Error("zscore: training split has zero variance");
  return {mean, sd};
}

// ---- windowing --------------------------------------------------------------

/// Inputs cover [start, start + input_len), targets the following horizon steps.
struct Window {
  std::size_t start = 0;
};

/// All stride-1 windows lying entirely inside [begin, end).
inline std::vector<Window> make_windows(std::size_t begin, std::size_t end, std::size_t input_len,
                                        std::size_t horizon) {
  std::vector<Window> out;
  const std::size_t span = input_len + horizon;
  if (end < begin || end - begin < span) return out;
  for (std::size_t s = begin; s + span <= end; ++s) out.push_back({s});
  return out;
}

inline std::vector<Window> make_windows(const SeriesDataset& ds, Split split,
                                        std::size_t input_len, std::size_t horizon) {
  const auto [b, e] = ds.range(split);
  return make_windows(b, e, input_len, horizon);
}

}  // namespace pmmn
