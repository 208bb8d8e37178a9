#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pmmn/io.hpp"
#include "pmmn/tensor.hpp"

namespace pmmn {

struct DistanceEntry {
  std::string from;
  std::string to;
  double dist = 0.0;
};

/// Static weighted road graph. A(i, j) = exp(-dist_ij^2 / sigma^2), weights
/// under the sparsity threshold are zeroed and the diagonal is 1.
struct RoadGraph {
  std::vector<std::string> node_ids;
  std::vector<DistanceEntry> distances;
  double sigma = 0.0;
  double threshold = 0.1;
  Tensor adjacency;

  std::size_t size() const { return node_ids.size(); }
};

/// Population standard deviation of the finite distances.
inline double distance_stddev(const std::vector<DistanceEntry>& distances) {
  double n = 0.0;
  double mean = 0.0;
  for (const auto& d : distances) {
    if (!std::isfinite(d.dist)) continue;
    n += 1.0;
    mean += d.dist;
  }
  if (n == 0.0) return 0.0;
  mean /= n;
  double var = 0.0;
  for (const auto& d : distances) {
    if (std::isfinite(d.dist)) var += (d.dist - mean) * (d.dist - mean);
  }
  return std::sqrt(var / n);
}

inline RoadGraph build_adjacency(std::vector<std::string> node_ids,
                                 std::vector<DistanceEntry> distances, double threshold = 0.1,
                                 std::optional<double> sigma_override = std::nullopt) {
  if (node_ids.empty()) throw Error("graph: at least one node is required");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < node_ids.size(); ++i) {
    if (!index.emplace(node_ids[i], i).second) {
      throw Error("graph: duplicate node id '" + node_ids[i] + "'");
    }
  }
  for (const auto& d : distances) {
    if (d.dist < 0.0) throw Error("graph: negative distance " + d.from + "->" + d.to);
  }

  RoadGraph g;
  g.threshold = threshold;
  g.sigma = sigma_override.value_or(distance_stddev(distances));
  if (!(g.sigma > 0.0)) {
    throw Error(
        "graph: distance standard deviation is zero (all distances identical or none given); "
        "set an explicit sigma");
  }

  const std::size_t n = node_ids.size();
  g.adjacency = Tensor(n, n);
  for (const auto& d : distances) {
    auto fi = index.find(d.from);
    auto ti = index.find(d.to);
    if (fi == index.end() || ti == index.end()) {
      throw Error("graph: distance entry references unknown node " + d.from + "->" + d.to);
    }
    if (!std::isfinite(d.dist)) continue;
    const double w = std::exp(-(d.dist * d.dist) / (g.sigma * g.sigma));
    g.adjacency(fi->second, ti->second) = w < threshold ? 0.0 : w;
  }
  for (std::size_t i = 0; i < n; ++i) g.adjacency(i, i) = 1.0;
  g.node_ids = std::move(node_ids);
  g.distances = std::move(distances);
  return g;
}

/// Row-stochastic D^-1 A; all-zero rows stay zero.
inline Tensor normalize_adjacency(const Tensor& a) {
  Tensor out = a;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < a.cols(); ++c) {
      if (a(r, c) < 0.0) throw Error("normalize_adjacency: negative entry");
      s += a(r, c);
    }
    if (s == 0.0) continue;
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a(r, c) / s;
  }
  return out;
}

/// Reads `from,to,dist`. Empty or non-numeric distances are kept as NaN and
/// produce no edge.
inline std::vector<DistanceEntry> load_distances_csv(const std::string& path) {
  auto is = io::open_in(path);
  std::string line;
  if (!std::getline(is, line)) throw Error("distances: empty file '" + path + "'");
  const auto header = io::split_csv(line);
  if (header.size() < 3 || header[0] != "from" || header[1] != "to" || header[2] != "dist") {
    throw Error("distances: expected header 'from,to,dist' in '" + path + "'");
  }
  std::vector<DistanceEntry> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (io::trim(line).empty()) continue;
    const auto f = io::split_csv(line);
    if (f.size() < 3) {
      throw Error("distances: malformed row at line " + std::to_string(lineno));
    }
    double d = std::numeric_limits<double>::quiet_NaN();
    if (!f[2].empty()) {
      try {
        d = std::stod(f[2]);
      } catch (const std::exception&) {
        d = std::numeric_limits<double>::quiet_NaN();
      }
    }
    out.push_back({f[0], f[1], d});
  }
  return out;
}

inline std::vector<std::string> load_node_ids(const std::string& path) {
  auto is = io::open_in(path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(is, line)) {
    auto id = io::trim(line);
    if (!id.empty()) ids.push_back(std::move(id));
  }
  if (ids.empty()) throw Error("node ids: no ids in '" + path + "'");
  return ids;
}

/// Edge list of the non-zero adjacency entries: `from,to,weight`.
inline void export_adjacency_csv(const RoadGraph& g, const std::string& path) {
  auto os = io::open_out(path);
  os << "from,to,weight\n";
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (g.adjacency(i, j) != 0.0) {
        os << g.node_ids[i] << ',' << g.node_ids[j] << ',' << io::fmt_double(g.adjacency(i, j))
           << '\n';
      }
    }
  }
}

}  // namespace pmmn
