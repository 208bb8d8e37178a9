#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pmmn/params.hpp"
#include "pmmn/patterns.hpp"
#include "pmmn/tape.hpp"

namespace pmmn {

/// Matched pattern ids and memory-selection weights for a stack of rows
/// (one row per node per window).
struct MatchBatch {
  std::size_t k = 0;
  std::vector<std::size_t> ids;  // rows * k, nearest first
  Tensor weights;                // rows x k, softmax(-d) over each row
  std::size_t rows() const { return weights.rows(); }
};

/// softmax(-d_j) over the k matched distances.
inline std::vector<double> memory_weights(const std::vector<Neighbor>& neighbors) {
  std::vector<double> w;
  w.reserve(neighbors.size());
  for (const auto& n : neighbors) w.push_back(-n.distance);
  softmax_inplace(w);
  return w;
}

inline MatchBatch make_match_batch(const std::vector<MatchResult>& matches) {
  MatchBatch mb;
  if (matches.empty()) return mb;
  mb.k = matches.front().neighbors.size();
  mb.weights = Tensor(matches.size(), mb.k);
  mb.ids.reserve(matches.size() * mb.k);
  for (std::size_t r = 0; r < matches.size(); ++r) {
    if (matches[r].neighbors.size() != mb.k) throw Error("match batch: rows disagree on k");
    const auto w = memory_weights(matches[r].neighbors);
    for (std::size_t j = 0; j < mb.k; ++j) {
      mb.ids.push_back(matches[r].neighbors[j].id);
      mb.weights(r, j) = w[j];
    }
  }
  return mb;
}

/// Representative memory: row r = sum_j softmax(-d_j) * bank[id_j].
inline Var select_memory(GradTape& tape, Var bank, const MatchBatch& matches) {
  return tape.weighted_gather(bank, matches.ids, matches.weights);
}

/// Pattern-level attention C = softmax_rows(H M^T / sqrt(d_h)) per window block.
inline Var pattern_attention(GradTape& tape, Var hidden, Var memory, std::size_t nodes) {
  const double d = static_cast<double>(tape.value(hidden).cols());
  return tape.softmax_rows(tape.block_scores(hidden, memory, nodes, 1.0 / std::sqrt(d)));
}

/// Learned node affinity softmax_rows(relu(E1 E2^T)); row-stochastic.
inline Var adaptive_adjacency(GradTape& tape, Var src_emb, Var dst_emb) {
  return tape.softmax_rows(tape.relu(tape.matmul_nt(src_emb, dst_emb)));
}

/// The three node-axis supports. `adjacency` is the row-normalised road
/// graph; both are shared by every window in a batch.
struct Supports {
  Var adjacency;
  Var adaptive;
  std::size_t nodes = 0;
};

/// Head weights of one GCMem layer, already summed over heads.
struct HeadWeights {
  Var adj;
  Var adapt;
  Var attn;
};

/// Step-invariant part of the graph convolution for a fixed M^{l+1}:
/// M^{l+1} W_C and the two static-support terms (A M) W_A + (Ã M) W_Ã.
/// Heads combine linearly, so every W is the sum of its per-head matrices.
struct GraphConvPlan {
  Var attn_values;
  Var fixed;
  bool has_fixed = false;
};

inline GraphConvPlan plan_graph_conv(GradTape& tape, Var memory_next, const Supports& sup,
                                     const HeadWeights& w, bool simple) {
  GraphConvPlan plan;
  plan.attn_values = tape.matmul(memory_next, w.attn);
  if (!simple) {
    plan.fixed = tape.add(
        tape.matmul(tape.block_matmul(sup.adjacency, memory_next, sup.nodes), w.adj),
        tape.matmul(tape.block_matmul(sup.adaptive, memory_next, sup.nodes), w.adapt));
    plan.has_fixed = true;
  }
  return plan;
}

/// o = ReLU( C (M W_C) + fixed ).
inline Var apply_graph_conv(GradTape& tape, const GraphConvPlan& plan, Var attention,
                            std::size_t nodes) {
  Var out = tape.block_matmul(attention, plan.attn_values, nodes);
  if (plan.has_fixed) out = tape.add(out, plan.fixed);
  return tape.relu(out);
}

/// o = ReLU( sum_heads (A M) W_A + (Ã M) W_Ã + (C M) W_C ) with every support
/// acting on the node axis. In simple mode only the attention term is used.
inline Var graph_conv(GradTape& tape, Var memory_next, const Supports& sup, Var attention,
                      const HeadWeights& w, bool simple) {
  return apply_graph_conv(tape, plan_graph_conv(tape, memory_next, sup, w, simple), attention,
                          sup.nodes);
}

/// Parameter names of one GCMem layer under `prefix` (e.g. "enc.0").
struct GCMemLayer {
  std::string prefix;
  std::size_t heads = 1;
  bool simple = false;

  std::string weight(const char* kind, std::size_t head) const {
    return prefix + ".w_" + kind + "." + std::to_string(head);
  }
  std::string bn(const char* what) const { return prefix + ".bn." + what; }

  void add_params(ParamStore& store, std::size_t hidden, std::mt19937_64& rng) const {
    for (std::size_t h = 0; h < heads; ++h) {
      if (!simple) {
        store.add(weight("adj", h), xavier_uniform(hidden, hidden, rng));
        store.add(weight("adapt", h), xavier_uniform(hidden, hidden, rng));
      }
      store.add(weight("attn", h), xavier_uniform(hidden, hidden, rng));
    }
    store.add(bn("gamma"), Tensor(1, hidden, 1.0));
    store.add(bn("beta"), Tensor(1, hidden, 0.0));
    store.add_buffer(bn("mean"), Tensor(1, hidden, 0.0));
    store.add_buffer(bn("var"), Tensor(1, hidden, 1.0));
  }

  HeadWeights head_weights(GradTape& tape, ParamStore& store) const {
    auto summed = [&](const char* kind) {
      Var acc = tape.param(store, weight(kind, 0));
      for (std::size_t h = 1; h < heads; ++h) acc = tape.add(acc, tape.param(store, weight(kind, h)));
      return acc;
    };
    HeadWeights w;
    w.attn = summed("attn");
    if (!simple) {
      w.adj = summed("adj");
      w.adapt = summed("adapt");
    }
    return w;
  }
};

struct GCMemOutput {
  Var hidden;     // H^l = H^{l-1} + BN(o^l)
  Var output;     // o^l
  Var attention;  // C^l
};

/// One GCMem layer with a precomputed plan for M^{l+1}: C^l from
/// (H^{l-1}, M^l), o^l over the three supports, then the residual update with
/// batch normalisation.
inline GCMemOutput gcmem_step(GradTape& tape, ParamStore& store, const GCMemLayer& layer,
                              const GraphConvPlan& plan, Var hidden_prev, Var memory,
                              std::size_t nodes, Mode mode) {
  GCMemOutput r;
  r.attention = pattern_attention(tape, hidden_prev, memory, nodes);
  r.output = apply_graph_conv(tape, plan, r.attention, nodes);
  Var bn = tape.batchnorm(r.output, tape.param(store, layer.bn("gamma")),
                          tape.param(store, layer.bn("beta")), store.buffer(layer.bn("mean")),
                          store.buffer(layer.bn("var")), mode);
  r.hidden = tape.add(hidden_prev, bn);
  return r;
}

inline GCMemOutput gcmem_forward(GradTape& tape, ParamStore& store, const GCMemLayer& layer,
                                 Var hidden_prev, Var memory, Var memory_next,
                                 const Supports& sup, Mode mode) {
  const auto plan = plan_graph_conv(tape, memory_next, sup, layer.head_weights(tape, store),
                                    layer.simple);
  return gcmem_step(tape, store, layer, plan, hidden_prev, memory, sup.nodes, mode);
}

}  // namespace pmmn
