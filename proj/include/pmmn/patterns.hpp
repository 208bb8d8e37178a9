#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pmmn/dataset.hpp"
#include "pmmn/io.hpp"
#include "pmmn/tensor.hpp"

namespace pmmn {

/// Time-of-day average speed of one node over the training split.
struct DailyProfile {
  std::string node_id;
  std::vector<double> speed = std::vector<double>(kSlotsPerDay, 0.0);
  std::vector<std::size_t> count = std::vector<std::size_t>(kSlotsPerDay, 0);
};

/// Per-node time-of-day means of the observed training values. Slots with no
/// observation are linearly interpolated from the nearest filled slots,
/// wrapping around midnight.
inline std::vector<DailyProfile> compute_daily_profiles(const SeriesDataset& ds) {
  const auto [begin, end] = ds.range(Split::Train);
  std::vector<DailyProfile> out(ds.nodes());
  for (std::size_t i = 0; i < ds.nodes(); ++i) {
    DailyProfile& p = out[i];
    p.node_id = i < ds.node_ids.size() ? ds.node_ids[i] : std::to_string(i);
    std::vector<double> sum(kSlotsPerDay, 0.0);
    for (std::size_t t = begin; t < end; ++t) {
      if (ds.observed(i, t) == 0.0) continue;
      sum[ds.slots[t]] += ds.speed(i, t);
      ++p.count[ds.slots[t]];
    }
    std::vector<std::size_t> filled;
    for (std::size_t s = 0; s < kSlotsPerDay; ++s) {
      if (p.count[s] > 0) {
        p.speed[s] = sum[s] / static_cast<double>(p.count[s]);
        filled.push_back(s);
      }
    }
    if (filled.empty()) {
      throw Error("profiles: node '" + p.node_id + "' has no observations in the training split");
    }
    for (std::size_t s = 0; s < kSlotsPerDay; ++s) {
      if (p.count[s] > 0) continue;
      // previous and next filled slots, cyclically
      auto next_it = std::upper_bound(filled.begin(), filled.end(), s);
      const std::size_t next = next_it == filled.end() ? filled.front() : *next_it;
      const std::size_t prev = next_it == filled.begin() ? filled.back() : *(next_it - 1);
      const std::size_t dp = (s + kSlotsPerDay - prev) % kSlotsPerDay;
      const std::size_t dn = (next + kSlotsPerDay - s) % kSlotsPerDay;
      const double w = static_cast<double>(dp) / static_cast<double>(dp + dn);
      p.speed[s] = p.speed[prev] + (p.speed[next] - p.speed[prev]) * w;
    }
  }
  return out;
}

/// x - mean(x).
inline std::vector<double> normalize_zero_based(std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  if (out.empty()) return out;
  const double mean = std::accumulate(out.begin(), out.end(), 0.0) / static_cast<double>(out.size());
  for (double& v : out) v -= mean;
  return out;
}

/// Every cyclic stride-1 window of each profile, zero-based, with exact
/// duplicates removed (first occurrence kept, node-major order).
inline std::vector<std::vector<double>> sample_windows(const std::vector<DailyProfile>& profiles,
                                                       std::size_t length) {
  if (length == 0 || length > kSlotsPerDay) {
    throw Error("sample_windows: window length must be in [1, 288]");
  }
  std::vector<std::vector<double>> out;
  std::set<std::vector<double>> seen;
  std::vector<double> w(length);
  for (const auto& p : profiles) {
    for (std::size_t s = 0; s < kSlotsPerDay; ++s) {
      for (std::size_t t = 0; t < length; ++t) w[t] = p.speed[(s + t) % kSlotsPerDay];
      auto z = normalize_zero_based(w);
      if (seen.insert(z).second) out.push_back(std::move(z));
    }
  }
  return out;
}

// ---- pattern bank -----------------------------------------------------------

/// The key bank: zero-based representative patterns of a fixed length, one
/// row per pattern id.
class PatternSet {
 public:
  PatternSet() = default;
  explicit PatternSet(Tensor patterns) : patterns_(std::move(patterns)) { hash_ = compute_hash(); }

  std::size_t size() const { return patterns_.rows(); }
  std::size_t length() const { return patterns_.cols(); }
  std::span<const double> pattern(std::size_t id) const { return patterns_.row_span(id); }
  const Tensor& matrix() const { return patterns_; }
  std::uint64_t hash() const { return hash_; }

  std::uint64_t compute_hash() const {
    io::Fnv1a h;
    h.u64(patterns_.cols());
    h.u64(patterns_.rows());
    for (double v : patterns_.values()) h.f64(v);
    return h.digest();
  }

 private:
  Tensor patterns_;
  std::uint64_t hash_ = 0;
};

struct KMeansResult {
  PatternSet patterns;
  std::vector<std::size_t> assignment;
  std::vector<double> inertia;  // after each assignment step
  std::size_t iterations = 0;
};

/// Called after every assignment step with (iteration, centroids, assignment).
using KMeansObserver =
    std::function<void(std::size_t, const std::vector<std::vector<double>>&,
                       const std::vector<std::size_t>&)>;

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// Lloyd's K-means with k-means++ seeding under Euclidean distance. Stops at
/// an assignment fixpoint or after max_iter iterations; the returned
/// centroids are re-zero-based.
inline KMeansResult cluster_patterns(const std::vector<std::vector<double>>& raw,
                                     std::size_t clusters, std::size_t max_iter = 100,
                                     std::uint64_t seed = 42,
                                     const KMeansObserver& observer = nullptr) {
  if (clusters == 0) throw Error("cluster_patterns: need at least one cluster");
  if (raw.size() < clusters) {
    throw Error("cluster_patterns: only " + std::to_string(raw.size()) +
                " distinct raw patterns for " + std::to_string(clusters) +
                " clusters; use a smaller pattern count");
  }
  const std::size_t dim = raw.front().size();
  for (const auto& r : raw) {
    if (r.size() != dim) throw Error("cluster_patterns: patterns differ in length");
  }
  const std::size_t n = raw.size();
  std::mt19937_64 rng(seed);

  // k-means++ seeding
  std::vector<std::vector<double>> centroids;
  centroids.reserve(clusters);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  centroids.push_back(raw[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  while (centroids.size() < clusters) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], detail::sq_dist(raw[i], centroids.back()));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      double acc = 0.0;
      bool found = false;
      for (std::size_t i = 0; i < n && !found; ++i) {
        acc += d2[i];
        if (u < acc) {
          pick = i;
          found = true;
        }
      }
      if (!found) {
        // rounding left u past the last cumulative sum
        for (std::size_t i = n; i-- > 0;) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // every point already coincides with a centroid
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    centroids.push_back(raw[pick]);
  }

  KMeansResult res;
  std::vector<std::size_t> assign(n, 0);
  std::vector<std::size_t> prev;
  for (std::size_t it = 0; it < max_iter; ++it) {
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < clusters; ++c) {
        const double d = detail::sq_dist(raw[i], centroids[c]);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      assign[i] = arg;
      inertia += best;
    }
    res.inertia.push_back(inertia);
    res.iterations = it + 1;
    if (observer) observer(it, centroids, assign);
    if (assign == prev) break;
    prev = assign;

    // update step
    std::vector<std::vector<double>> sums(clusters, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(clusters, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      for (std::size_t t = 0; t < dim; ++t) sums[assign[i]][t] += raw[i][t];
    }
    for (std::size_t c = 0; c < clusters; ++c) {
      if (counts[c] == 0) continue;  // keeps its position; it cannot raise inertia
      for (std::size_t t = 0; t < dim; ++t) {
        centroids[c][t] = sums[c][t] / static_cast<double>(counts[c]);
      }
    }
  }

  Tensor bank(clusters, dim);
  for (std::size_t c = 0; c < clusters; ++c) {
    const auto z = normalize_zero_based(centroids[c]);
    std::copy(z.begin(), z.end(), bank.row_span(c).begin());
  }
  res.patterns = PatternSet(std::move(bank));
  res.assignment = std::move(assign);
  return res;
}

// ---- matching -----------------------------------------------------------------

struct Neighbor {
  std::size_t id = 0;
  double distance = 0.0;
};

/// k nearest patterns of a window (ascending distance, ties by id) and the
/// residual of the zero-based window against the nearest pattern.
struct MatchResult {
  std::vector<Neighbor> neighbors;
  std::vector<double> noise;
};

/// 1 - cos(a, b), clamped to [0, 2]; a zero vector has cosine 0 with anything.
inline double cosine_distance(std::span<const double> a, double norm_a, std::span<const double> b,
                              double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0) return 1.0;
  double dot = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) dot += a[t] * b[t];
  return std::clamp(1.0 - dot / (norm_a * norm_b), 0.0, 2.0);
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline MatchResult knn_match(std::span<const double> window, const PatternSet& bank, std::size_t k) {
  if (window.size() != bank.length()) {
    throw Error("knn_match: window length " + std::to_string(window.size()) +
                " does not match pattern length " + std::to_string(bank.length()));
  }
  if (k == 0 || k > bank.size()) {
    throw Error("knn_match: k=" + std::to_string(k) + " outside [1, " +
                std::to_string(bank.size()) + "]");
  }
  const auto x = normalize_zero_based(window);
  const double nx = l2_norm(x);
  std::vector<Neighbor> all(bank.size());
  for (std::size_t j = 0; j < bank.size(); ++j) {
    const auto p = bank.pattern(j);
    all[j] = {j, cosine_distance(x, nx, p, l2_norm(p))};
  }
  auto less = [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), less);
  all.resize(k);

  MatchResult m;
  m.neighbors = std::move(all);
  const auto best = bank.pattern(m.neighbors.front().id);
  m.noise.resize(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) m.noise[t] = x[t] - best[t];
  return m;
}

// ---- files --------------------------------------------------------------------

inline constexpr char kBankMagic[5] = {'P', 'M', 'P', 'B', '1'};

/// Binary bank: magic "PMPB1", u64 length, u64 count, u64 content hash, then
/// count*length little-endian doubles (row-major).
inline void save_pattern_bank(const PatternSet& bank, const std::string& path) {
  auto os = io::open_out(path, true);
  os.write(kBankMagic, sizeof kBankMagic);
  io::write_u64(os, bank.length());
  io::write_u64(os, bank.size());
  io::write_u64(os, bank.hash());
  for (double v : bank.matrix().values()) io::write_f64(os, v);
  if (!os) throw Error("pattern bank: write failed for '" + path + "'");
}

inline PatternSet load_pattern_bank(const std::string& path) {
  auto is = io::open_in(path, true);
  char magic[sizeof kBankMagic];
  io::read_exact(is, magic, sizeof magic);
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kBankMagic))) {
    throw Error("pattern bank: '" + path + "' is not a pattern bank file");
  }
  const auto length = io::read_u64(is);
  const auto count = io::read_u64(is);
  const auto hash = io::read_u64(is);
  if (length == 0 || count == 0 || length > kSlotsPerDay || count > (1u << 24)) {
    throw Error("pattern bank: implausible header in '" + path + "'");
  }
  Tensor m(count, length);
  for (double& v : m.values()) v = io::read_f64(is);
  PatternSet bank(std::move(m));
  if (bank.hash() != hash) throw Error("pattern bank: content hash mismatch in '" + path + "'");
  return bank;
}

/// `pattern_id,t0,...,t{T'-1}`.
inline void export_patterns_csv(const PatternSet& bank, const std::string& path) {
  auto os = io::open_out(path);
  os << "pattern_id";
  for (std::size_t t = 0; t < bank.length(); ++t) os << ",t" << t;
  os << '\n';
  for (std::size_t j = 0; j < bank.size(); ++j) {
    os << j;
    for (double v : bank.pattern(j)) os << ',' << io::fmt_double(v);
    os << '\n';
  }
}

struct SimilarityHistogram {
  std::vector<double> edges;  // bins + 1 edges over [-1, 1]
  std::vector<std::size_t> raw;
  std::vector<std::size_t> clustered;
};

/// Cosine-similarity distribution of one reference raw pattern against every
/// other raw pattern and against every clustered key.
inline SimilarityHistogram similarity_histogram(const std::vector<std::vector<double>>& raw,
                                                const PatternSet& bank, std::size_t reference = 0,
                                                std::size_t bins = 20) {
  if (raw.empty() || reference >= raw.size()) throw Error("similarity histogram: bad reference");
  SimilarityHistogram h;
  h.raw.assign(bins, 0);
  h.clustered.assign(bins, 0);
  for (std::size_t b = 0; b <= bins; ++b) {
    h.edges.push_back(-1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(bins));
  }
  const auto& ref = raw[reference];
  const double nr = l2_norm(ref);
  auto bin_of = [bins](double sim) {
    const auto b = static_cast<std::size_t>(std::floor((sim + 1.0) / 2.0 * static_cast<double>(bins)));
    return std::min(b, bins - 1);
  };
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (i == reference) continue;
    ++h.raw[bin_of(1.0 - cosine_distance(ref, nr, raw[i], l2_norm(raw[i])))];
  }
  for (std::size_t j = 0; j < bank.size(); ++j) {
    const auto p = bank.pattern(j);
    ++h.clustered[bin_of(1.0 - cosine_distance(ref, nr, p, l2_norm(p)))];
  }
  return h;
}

inline void export_similarity_csv(const SimilarityHistogram& h, const std::string& path) {
  auto os = io::open_out(path);
  std::size_t raw_total = 0;
  std::size_t cl_total = 0;
  for (auto c : h.raw) raw_total += c;
  for (auto c : h.clustered) cl_total += c;
  os << "bin_lo,bin_hi,raw_count,raw_fraction,clustered_count,clustered_fraction\n";
  for (std::size_t b = 0; b < h.raw.size(); ++b) {
    const double rf = raw_total ? static_cast<double>(h.raw[b]) / static_cast<double>(raw_total) : 0.0;
    const double cf =
        cl_total ? static_cast<double>(h.clustered[b]) / static_cast<double>(cl_total) : 0.0;
    os << io::fmt_double(h.edges[b]) << ',' << io::fmt_double(h.edges[b + 1]) << ',' << h.raw[b]
       << ',' << io::fmt_double(rf) << ',' << h.clustered[b] << ',' << io::fmt_double(cf) << '\n';
  }
}

}  // namespace pmmn
