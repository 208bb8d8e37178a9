#pragma once

#include <vector>

#include "pmmn/dataset.hpp"

namespace pmmn {

/// Replaces every missing entry with its node's training time-of-day average.
/// When that slot was never observed in training, the value is linearly
/// interpolated in time between the nearest observed neighbours (held
/// constant beyond the first/last observation).
inline void fill_missing(SeriesDataset& ds) {
  const auto [tb, te] = ds.range(Split::Train);
  const std::size_t steps = ds.steps();
  for (std::size_t i = 0; i < ds.nodes(); ++i) {
    std::vector<double> sum(kSlotsPerDay, 0.0);
    std::vector<std::size_t> cnt(kSlotsPerDay, 0);
    bool any = false;
    for (std::size_t t = 0; t < steps; ++t) {
      if (ds.observed(i, t) == 0.0) continue;
      any = true;
      if (t >= tb && t < te) {
        sum[ds.slots[t]] += ds.speed(i, t);
        ++cnt[ds.slots[t]];
      }
    }
    if (!any) {
      const std::string id = i < ds.node_ids.size() ? ds.node_ids[i] : std::to_string(i);
      throw Error("fill_missing: node '" + id + "' has no observations at all");
    }

    // nearest observed step before / after every t
    constexpr std::size_t none = static_cast<std::size_t>(-1);
    std::vector<std::size_t> prev(steps, none);
    std::vector<std::size_t> next(steps, none);
    std::size_t last = none;
    for (std::size_t t = 0; t < steps; ++t) {
      if (ds.observed(i, t) != 0.0) last = t;
      prev[t] = last;
    }
    last = none;
    for (std::size_t t = steps; t-- > 0;) {
      if (ds.observed(i, t) != 0.0) last = t;
      next[t] = last;
    }

    for (std::size_t t = 0; t < steps; ++t) {
      if (ds.observed(i, t) != 0.0) continue;
      const std::size_t s = ds.slots[t];
      if (cnt[s] > 0) {
        ds.speed(i, t) = sum[s] / static_cast<double>(cnt[s]);
        continue;
      }
      const std::size_t p = prev[t];
      const std::size_t q = next[t];
      if (p == none) {
        ds.speed(i, t) = ds.speed(i, q);
      } else if (q == none) {
        ds.speed(i, t) = ds.speed(i, p);
      } else {
        const double w = static_cast<double>(t - p) / static_cast<double>(q - p);
        ds.speed(i, t) = ds.speed(i, p) + (ds.speed(i, q) - ds.speed(i, p)) * w;
      }
    }
  }
}

/// Fills missing values and fixes the z-score statistics on the training split.
inline void prepare_dataset(SeriesDataset& ds) {
  fill_missing(ds);
  std::tie(ds.mean, ds.stddev) = training_stats(ds);
}

}  // namespace pmmn
