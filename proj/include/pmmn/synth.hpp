#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pmmn/dataset.hpp"
#include "pmmn/graph.hpp"
#include "pmmn/io.hpp"

namespace pmmn {

struct SynthConfig {
  std::string topology = "ring";  // ring | grid
  std::size_t nodes = 10;
  std::size_t days = 60;
  std::size_t regimes = 3;
  double noise = 1.0;        // std of additive Gaussian noise, speed units
  double event_rate = 0.02;  // congestion events per node per hour
  std::uint64_t seed = 42;
};

struct SynthData {
  std::vector<std::string> node_ids;
  std::vector<std::string> timestamps;
  Tensor speed;  // nodes x steps
  std::vector<DistanceEntry> distances;
  std::vector<std::size_t> day_regime;
  std::size_t events = 0;  // primary events (propagated copies not counted)
};

namespace detail {

struct Regime {
  double level;
  double am_depth, am_center, am_width;
  double pm_depth, pm_center, pm_width;
};

inline double bump(double minute, double center, double width) {
  const double z = (minute - center) / width;
  return std::exp(-0.5 * z * z);
}

inline std::string synth_timestamp(std::size_t step) {
  using namespace std::chrono;
  const sys_days day = sys_days{year{2024} / January / 1} + days{step / kSlotsPerDay};
  const year_month_day ymd{day};
  const std::size_t minute = (step % kSlotsPerDay) * kMinutesPerStep;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02zu:%02zu:00", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), minute / 60,
                minute % 60);
  return buf;
}

/// Directed downstream neighbours used for event propagation and 1-hop edges.
inline std::vector<std::vector<std::size_t>> synth_links(const SynthConfig& c, std::size_t& cols) {
  std::vector<std::vector<std::size_t>> out(c.nodes);
  cols = c.nodes;
  if (c.topology == "ring") {
    if (c.nodes > 1) {
      for (std::size_t i = 0; i < c.nodes; ++i) out[i].push_back((i + 1) % c.nodes);
    }
  } else if (c.topology == "grid") {
    cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(c.nodes))));
    for (std::size_t i = 0; i < c.nodes; ++i) {
      if ((i % cols) + 1 < cols && i + 1 < c.nodes) out[i].push_back(i + 1);
      if (i + cols < c.nodes) out[i].push_back(i + cols);
    }
  } else {
    throw Error("synth: unknown topology '" + c.topology + "' (expected ring or grid)");
  }
  return out;
}

}  // namespace detail

/// Daily profiles with a citywide regime drawn per day (level, rush-hour depth
/// and timing), a per-node phase shift along the topology, Gaussian noise and
/// abrupt congestion drops that spread downstream for a few hops, shallower
/// and later at each hop.
inline SynthData generate_synthetic(const SynthConfig& c) {
  if (c.nodes == 0 || c.days == 0 || c.regimes == 0) {
    throw Error("synth: nodes, days and regimes must be positive");
  }
  if (c.noise < 0.0 || c.event_rate < 0.0) throw Error("synth: noise and event_rate must be >= 0");
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  std::size_t cols = 0;
  const auto links = detail::synth_links(c, cols);

  std::vector<detail::Regime> regimes;
  for (std::size_t r = 0; r < c.regimes; ++r) {
    regimes.push_back({uni(55.0, 68.0), uni(10.0, 28.0), uni(420.0, 540.0), uni(40.0, 80.0),
                       uni(12.0, 30.0), uni(990.0, 1110.0), uni(50.0, 100.0)});
  }

  SynthData out;
  for (std::size_t i = 0; i < c.nodes; ++i) out.node_ids.push_back("n" + std::to_string(i));
  std::vector<double> phase(c.nodes), offset(c.nodes);
  for (std::size_t i = 0; i < c.nodes; ++i) {
    const std::size_t pos = c.topology == "grid" ? (i / cols + i % cols) : i;
    phase[i] = 10.0 * static_cast<double>(pos);  // minutes
    offset[i] = uni(-4.0, 4.0);
  }
  for (std::size_t d = 0; d < c.days; ++d) {
    out.day_regime.push_back(static_cast<std::size_t>(u01(rng) * static_cast<double>(c.regimes)) %
                             c.regimes);
  }

  const std::size_t steps = c.days * kSlotsPerDay;
  out.speed = Tensor(c.nodes, steps);
  for (std::size_t t = 0; t < steps; ++t) {
    const auto& rg = regimes[out.day_regime[t / kSlotsPerDay]];
    const double minute = static_cast<double>((t % kSlotsPerDay) * kMinutesPerStep);
    for (std::size_t i = 0; i < c.nodes; ++i) {
      const double m = minute - phase[i];
      out.speed(i, t) = rg.level + offset[i] - rg.am_depth * detail::bump(m, rg.am_center, rg.am_width) -
                        rg.pm_depth * detail::bump(m, rg.pm_center, rg.pm_width);
    }
  }

  // Congestion drops: full depth at onset, held for half the duration, then a
  // linear recovery. Overlapping drops take the deepest.
  Tensor drop(c.nodes, steps);
  auto apply = [&](std::size_t node, std::size_t start, std::size_t len, double depth) {
    const std::size_t hold = len / 2;
    for (std::size_t s = 0; s < len && start + s < steps; ++s) {
      double v = depth;
      if (s >= hold) v = depth * static_cast<double>(len - s) / static_cast<double>(len - hold + 1);
      drop(node, start + s) = std::max(drop(node, start + s), v);
    }
  };
  constexpr std::size_t kSpreadHops = 3;
  constexpr std::size_t kSpreadDelay = 3;  // steps per hop
  const double p_step = c.event_rate / (60.0 / static_cast<double>(kMinutesPerStep));
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < c.nodes; ++i) {
      if (p_step <= 0.0 || u01(rng) >= p_step) continue;
      const double depth = uni(25.0, 40.0);
      const auto len = static_cast<std::size_t>(uni(6.0, 19.0));  // 30-90 min
      apply(i, t, len, depth);
      std::vector<std::size_t> front = {i};
      std::vector<bool> hit(c.nodes, false);
      hit[i] = true;
      double d = depth;
      for (std::size_t hop = 1; hop <= kSpreadHops; ++hop) {
        d *= 0.75;
        std::vector<std::size_t> next;
        for (std::size_t a : front) {
          for (std::size_t j : links[a]) {
            if (hit[j]) continue;
            hit[j] = true;
            apply(j, t + hop * kSpreadDelay, len, d);
            next.push_back(j);
          }
        }
        front = std::move(next);
      }
      ++out.events;
    }
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t i = 0; i < c.nodes; ++i) {
    for (std::size_t t = 0; t < steps; ++t) {
      double v = out.speed(i, t) - drop(i, t);
      if (c.noise > 0.0) v += c.noise * gauss(rng);
      out.speed(i, t) = std::max(v, 3.0);
    }
  }

  for (std::size_t t = 0; t < steps; ++t) out.timestamps.push_back(detail::synth_timestamp(t));

  // One entry per ordered pair; the shortest hop count wins.
  std::set<std::pair<std::size_t, std::size_t>> seen;
  auto emit = [&](std::size_t a, std::size_t b, double d) {
    if (seen.insert({a, b}).second) out.distances.push_back({out.node_ids[a], out.node_ids[b], d});
  };
  std::vector<std::vector<double>> hop(c.nodes);
  for (std::size_t i = 0; i < c.nodes; ++i) {
    emit(i, i, 0.0);
    for (std::size_t j : links[i]) {
      const double d = uni(0.5, 2.0);
      hop[i].push_back(d);
      emit(i, j, d);
      emit(j, i, d);
    }
  }
  for (std::size_t i = 0; i < c.nodes; ++i) {
    for (std::size_t a = 0; a < links[i].size(); ++a) {
      const std::size_t j = links[i][a];
      for (std::size_t b = 0; b < links[j].size(); ++b) {
        const std::size_t k = links[j][b];
        if (k != i) emit(i, k, hop[i][a] + hop[j][b]);
      }
    }
  }
  return out;
}

/// In-memory dataset equivalent to writing the CSV and loading it back.
inline SeriesDataset to_dataset(const SynthData& s) {
  SeriesDataset ds;
  ds.node_ids = s.node_ids;
  ds.timestamps = s.timestamps;
  ds.speed = s.speed;
  for (double& v : ds.speed.values()) v = std::stod(io::fmt_fixed(v, 3));
  ds.observed = Tensor(s.speed.rows(), s.speed.cols(), 1.0);
  for (const auto& ts : s.timestamps) ds.slots.push_back(slot_of(ts));
  std::tie(ds.train_end, ds.val_end) = split_boundaries(ds.steps());
  return ds;
}

/// Writes `speeds.csv`, `distances.csv` and `nodes.txt` into `dir`.
inline void write_synthetic(const SynthData& s, const std::string& dir) {
  {
    auto os = io::open_out(dir + "/speeds.csv");
    os << "timestamp";
    for (const auto& id : s.node_ids) os << ',' << id;
    os << '\n';
    for (std::size_t t = 0; t < s.timestamps.size(); ++t) {
      os << s.timestamps[t];
      for (std::size_t i = 0; i < s.node_ids.size(); ++i) os << ',' << io::fmt_fixed(s.speed(i, t), 3);
      os << '\n';
    }
  }
  {
    auto os = io::open_out(dir + "/distances.csv");
    os << "from,to,dist\n";
    for (const auto& d : s.distances) os << d.from << ',' << d.to << ',' << io::fmt_double(d.dist) << '\n';
  }
  {
    auto os = io::open_out(dir + "/nodes.txt");
    for (const auto& id : s.node_ids) os << id << '\n';
  }
}

}  // namespace pmmn
