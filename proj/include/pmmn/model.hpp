#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pmmn/dataset.hpp"
#include "pmmn/gcmem.hpp"
#include "pmmn/gru.hpp"
#include "pmmn/params.hpp"
#include "pmmn/patterns.hpp"
#include "pmmn/tape.hpp"

namespace pmmn {

struct ModelConfig {
  std::size_t input_len = 18;  // T'
  std::size_t horizon = 18;    // T
  std::size_t hidden = 128;    // d_h
  std::size_t layers = 3;      // L
  std::size_t k = 3;
  std::size_t num_patterns = 1000;
  std::size_t heads = 4;
  std::size_t embed_dim = 10;  // width of the adaptive-adjacency node embeddings
  std::uint64_t seed = 42;
  bool simple_mem = false;

  void validate() const {
    if (input_len == 0 || input_len > kSlotsPerDay) throw Error("config: input_len must be in [1, 288]");
    if (horizon == 0) throw Error("config: horizon must be >= 1");
    if (hidden == 0) throw Error("config: hidden must be >= 1");
    if (layers == 0) throw Error("config: layers must be >= 1");
    if (heads == 0) throw Error("config: heads must be >= 1");
    if (embed_dim == 0) throw Error("config: embed_dim must be >= 1");
    if (k == 0) throw Error("config: k must be >= 1");
    if (num_patterns <= k) throw Error("config: num_patterns must exceed k");
  }

  std::map<std::string, std::string> to_kv() const {
    return {{"input_len", std::to_string(input_len)},
            {"horizon", std::to_string(horizon)},
            {"hidden", std::to_string(hidden)},
            {"layers", std::to_string(layers)},
            {"k", std::to_string(k)},
            {"num_patterns", std::to_string(num_patterns)},
            {"heads", std::to_string(heads)},
            {"embed_dim", std::to_string(embed_dim)},
            {"seed", std::to_string(seed)},
            {"simple_mem", simple_mem ? "1" : "0"}};
  }

  static ModelConfig from_kv(const std::map<std::string, std::string>& kv) {
    auto get = [&](const char* key) -> const std::string& {
      auto it = kv.find(key);
      if (it == kv.end()) throw Error(std::string("config: missing key '") + key + "'");
      return it->second;
    };
    ModelConfig c;
    c.input_len = std::stoull(get("input_len"));
    c.horizon = std::stoull(get("horizon"));
    c.hidden = std::stoull(get("hidden"));
    c.layers = std::stoull(get("layers"));
    c.k = std::stoull(get("k"));
    c.num_patterns = std::stoull(get("num_patterns"));
    c.heads = std::stoull(get("heads"));
    c.embed_dim = std::stoull(get("embed_dim"));
    c.seed = std::stoull(get("seed"));
    c.simple_mem = get("simple_mem") == "1";
    return c;
  }
};

/// Model inputs for a batch of windows. Rows are window-major: row
/// b * nodes + i is node i of window b.
struct ModelInput {
  std::size_t windows = 0;
  std::size_t nodes = 0;
  Tensor noise;                                 // rows x input_len, normalised units
  std::vector<std::vector<std::size_t>> slots;  // per window, time-of-day slot of each input step
  MatchBatch matches;
  Tensor last_value;  // rows x 1, last observed speed (normalised)

  std::size_t rows() const { return windows * nodes; }
};

/// Intermediate values exposed for inspection.
struct ForwardTrace {
  Tensor encoded;                  // H after the encoder
  Tensor adaptive;                 // Ã
  std::vector<Tensor> attention;   // every C^l computed, encoder then decoder
  std::vector<Tensor> alpha;       // decoder layer weights, one rows x L tensor per step
};

/// Encoder (time + noise embedding, L GCMem layers) and autoregressive
/// decoder (GRU, L GCMem layers, layer-level attention, projection).
class ForecastModel {
 public:
  ForecastModel() = default;

  /// `adjacency` is the row-normalised road-graph support (N x N).
  ForecastModel(ModelConfig cfg, const Tensor& adjacency) : cfg_(cfg) {
    cfg_.validate();
    if (adjacency.rows() != adjacency.cols() || adjacency.rows() == 0) {
      throw Error("model: adjacency must be a non-empty square matrix");
    }
    nodes_ = adjacency.rows();
    std::mt19937_64 rng(cfg_.seed);
    const std::size_t d = cfg_.hidden;
    store_.add("time_emb", xavier_uniform(kSlotsPerDay, d, rng));
    store_.add("noise_proj", xavier_uniform(cfg_.input_len, d, rng));
    for (std::size_t l = 0; l <= cfg_.layers; ++l) {
      store_.add(bank_name(l), xavier_uniform(cfg_.num_patterns, d, rng));
    }
    if (!cfg_.simple_mem) {
      store_.add("node_emb.src", xavier_uniform(nodes_, cfg_.embed_dim, rng));
      store_.add("node_emb.dst", xavier_uniform(nodes_, cfg_.embed_dim, rng));
    }
    for (std::size_t l = 0; l < cfg_.layers; ++l) encoder_layer(l).add_params(store_, d, rng);
    gru_.add_params(store_, 1, d, rng);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      decoder_layer(l).add_params(store_, d, rng);
      store_.add(energy_name(l), xavier_uniform(d, d, rng));
    }
    store_.add("proj", xavier_uniform(d, 1, rng));
    store_.add_buffer("graph.adj_norm", adjacency);
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t nodes() const { return nodes_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  static std::string bank_name(std::size_t l) { return "memory." + std::to_string(l); }
  static std::string energy_name(std::size_t l) { return "dec." + std::to_string(l) + ".w_energy"; }
  GCMemLayer encoder_layer(std::size_t l) const {
    return {"enc." + std::to_string(l), cfg_.heads, cfg_.simple_mem};
  }
  GCMemLayer decoder_layer(std::size_t l) const {
    return {"dec." + std::to_string(l), cfg_.heads, cfg_.simple_mem};
  }

  /// Everything the encoder and every decoder step share for one batch.
  struct Context {
    Supports supports;
    std::vector<Var> memory;  // M^l for l = 0..L, from the single set of matches
    std::vector<GraphConvPlan> enc_plans;
    std::vector<GraphConvPlan> dec_plans;
    std::vector<Var> energy_keys;  // M^l W^l
    Var proj;
    GruVars gru;
    Mode mode = Mode::Eval;
  };

  Context prepare(GradTape& tape, const ModelInput& in, Mode mode, ForwardTrace* trace = nullptr) {
    check_input(in);
    Context ctx;
    ctx.mode = mode;
    ctx.supports.nodes = nodes_;
    ctx.supports.adjacency = tape.constant(store_.buffer("graph.adj_norm"));
    if (!cfg_.simple_mem) {
      ctx.supports.adaptive = adaptive_adjacency(tape, tape.param(store_, "node_emb.src"),
                                                 tape.param(store_, "node_emb.dst"));
      if (trace) trace->adaptive = tape.value(ctx.supports.adaptive);
    }
    for (std::size_t l = 0; l <= cfg_.layers; ++l) {
      ctx.memory.push_back(select_memory(tape, tape.param(store_, bank_name(l)), in.matches));
    }
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const auto enc = encoder_layer(l);
      ctx.enc_plans.push_back(plan_graph_conv(tape, ctx.memory[l + 1], ctx.supports,
                                              enc.head_weights(tape, store_), cfg_.simple_mem));
      const auto dec = decoder_layer(l);
      ctx.dec_plans.push_back(plan_graph_conv(tape, ctx.memory[l + 1], ctx.supports,
                                              dec.head_weights(tape, store_), cfg_.simple_mem));
      ctx.energy_keys.push_back(tape.matmul(ctx.memory[l], tape.param(store_, energy_name(l))));
    }
    ctx.proj = tape.param(store_, "proj");
    ctx.gru = gru_.vars(tape, store_);
    return ctx;
  }

  /// h0 = sum of time-of-day embeddings over the input steps + noise W_n,
  /// followed by the encoder GCMem stack.
  Var encode(GradTape& tape, const ModelInput& in, const Context& ctx,
             ForwardTrace* trace = nullptr) {
    std::vector<std::vector<std::size_t>> rows(in.rows());
    for (std::size_t b = 0; b < in.windows; ++b) {
      for (std::size_t i = 0; i < in.nodes; ++i) rows[b * in.nodes + i] = in.slots[b];
    }
    Var h = tape.add(tape.gather_sum(tape.param(store_, "time_emb"), std::move(rows)),
                     tape.matmul(tape.constant(in.noise), tape.param(store_, "noise_proj")));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      auto r = gcmem_step(tape, store_, encoder_layer(l), ctx.enc_plans[l], h, ctx.memory[l],
                          nodes_, ctx.mode);
      if (trace) trace->attention.push_back(tape.value(r.attention));
      h = r.hidden;
    }
    if (trace) trace->encoded = tape.value(h);
    return h;
  }

  struct DecodeStep {
    Var prediction;  // rows x 1
    Var state;       // GRU state
  };

  /// One autoregressive step: GRU on the previous prediction, the decoder
  /// GCMem stack, layer energies e_l = h^{l-1} . (M^l W^l) / sqrt(d_h),
  /// alpha = softmax over layers, prediction = sum_l alpha_l o^l W_proj.
  DecodeStep decode_step(GradTape& tape, Var previous, Var state, const Context& ctx,
                         ForwardTrace* trace = nullptr) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden));
    DecodeStep out;
    out.state = gru_cell(tape, previous, state, ctx.gru);
    Var h = out.state;
    std::vector<Var> energies;
    std::vector<Var> projected;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      energies.push_back(tape.scale(tape.rowdot(h, ctx.energy_keys[l]), inv_sqrt_d));
      auto r = gcmem_step(tape, store_, decoder_layer(l), ctx.dec_plans[l], h, ctx.memory[l],
                          nodes_, ctx.mode);
      if (trace) trace->attention.push_back(tape.value(r.attention));
      projected.push_back(tape.matmul(r.output, ctx.proj));
      h = r.hidden;
    }
    Var alpha = tape.softmax_rows(tape.hconcat(energies));
    if (trace) trace->alpha.push_back(tape.value(alpha));
    out.prediction = tape.rowsum(tape.mul(alpha, tape.hconcat(projected)));
    return out;
  }

  /// Normalised predictions, rows x steps.
  Var forward(GradTape& tape, const ModelInput& in, Mode mode, std::size_t steps,
              ForwardTrace* trace = nullptr) {
    if (steps == 0) throw Error("forward: at least one step is required");
    const Context ctx = prepare(tape, in, mode, trace);
    Var state = encode(tape, in, ctx, trace);
    Var prev = tape.constant(in.last_value);
    std::vector<Var> preds;
    for (std::size_t s = 0; s < steps; ++s) {
      auto st = decode_step(tape, prev, state, ctx, trace);
      preds.push_back(st.prediction);
      prev = st.prediction;
      state = st.state;
    }
    return preds.size() == 1 ? preds.front() : tape.hconcat(preds);
  }

 private:
  void check_input(const ModelInput& in) const {
    if (in.nodes != nodes_) {
      throw Error("model: input has " + std::to_string(in.nodes) + " nodes, model expects " +
                  std::to_string(nodes_));
    }
    if (in.windows == 0) throw Error("model: empty batch");
    if (in.noise.rows() != in.rows() || in.noise.cols() != cfg_.input_len) {
      throw Error("model: noise block has shape " + in.noise.shape_string());
    }
    if (in.last_value.rows() != in.rows() || in.last_value.cols() != 1) {
      throw Error("model: last-value block has shape " + in.last_value.shape_string());
    }
    if (in.slots.size() != in.windows) throw Error("model: one slot list per window required");
    for (const auto& s : in.slots) {
      if (s.size() != cfg_.input_len) throw Error("model: slot list length must equal input_len");
      for (std::size_t v : s) {
        if (v >= kSlotsPerDay) throw Error("model: time-of-day slot out of range");
      }
    }
    if (in.matches.rows() != in.rows() || in.matches.k != cfg_.k) {
      throw Error("model: match batch does not cover every row with k matches");
    }
  }

  ModelConfig cfg_;
  std::size_t nodes_ = 0;
  ParamStore store_;
  GruParams gru_;
};

// ---- batch construction -------------------------------------------------------

/// Matches every node of every window against the bank (once per node per
/// window) and assembles the model inputs. `ds.speed` must already be filled.
inline ModelInput build_model_input(const SeriesDataset& ds, const PatternSet& bank,
                                    const ModelConfig& cfg, std::span<const Window> windows,
                                    std::vector<MatchResult>* matches_out = nullptr) {
  if (bank.length() != cfg.input_len) {
    throw Error("pattern bank length " + std::to_string(bank.length()) +
                " does not match input_len " + std::to_string(cfg.input_len));
  }
  ModelInput in;
  in.windows = windows.size();
  in.nodes = ds.nodes();
  in.noise = Tensor(in.rows(), cfg.input_len);
  in.last_value = Tensor(in.rows(), 1);
  std::vector<MatchResult> matches;
  matches.reserve(in.rows());
  std::vector<double> x(cfg.input_len);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const std::size_t s0 = windows[b].start;
    if (s0 + cfg.input_len > ds.steps()) throw Error("window extends beyond the series");
    std::vector<std::size_t> slots(cfg.input_len);
    for (std::size_t t = 0; t < cfg.input_len; ++t) slots[t] = ds.slots[s0 + t];
    in.slots.push_back(std::move(slots));
    for (std::size_t i = 0; i < ds.nodes(); ++i) {
      for (std::size_t t = 0; t < cfg.input_len; ++t) {
        x[t] = ds.speed(i, s0 + t);
        if (!std::isfinite(x[t])) throw Error("window contains a non-finite value");
      }
      auto m = knn_match(x, bank, cfg.k);
      const std::size_t r = b * ds.nodes() + i;
      for (std::size_t t = 0; t < cfg.input_len; ++t) in.noise(r, t) = m.noise[t] / ds.stddev;
      in.last_value(r, 0) = zscore(x.back(), ds.mean, ds.stddev);
      matches.push_back(std::move(m));
    }
  }
  in.matches = make_match_batch(matches);
  if (matches_out) *matches_out = std::move(matches);
  return in;
}

/// Normalised targets (rows x horizon) and their observation mask.
inline std::pair<Tensor, Tensor> build_targets(const SeriesDataset& ds,
                                               std::span<const Window> windows,
                                               std::size_t input_len, std::size_t horizon) {
  const std::size_t n = ds.nodes();
  Tensor y(windows.size() * n, horizon);
  Tensor mask(windows.size() * n, horizon);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const std::size_t t0 = windows[b].start + input_len;
    if (t0 + horizon > ds.steps()) throw Error("target window extends beyond the series");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t h = 0; h < horizon; ++h) {
        y(b * n + i, h) = zscore(ds.speed(i, t0 + h), ds.mean, ds.stddev);
        mask(b * n + i, h) = ds.observed(i, t0 + h);
      }
    }
  }
  return {std::move(y), std::move(mask)};
}

/// Forecasts in speed units for every window (rows = window-major node rows,
/// columns = horizon steps), in eval mode, batching `batch` windows at a time.
inline Tensor forecast(ForecastModel& model, const SeriesDataset& ds, const PatternSet& bank,
                       std::span<const Window> windows, std::size_t steps = 0,
                       std::size_t batch = 64) {
  if (steps == 0) steps = model.config().horizon;
  const std::size_t n = ds.nodes();
  Tensor out(windows.size() * n, steps);
  for (std::size_t b0 = 0; b0 < windows.size(); b0 += batch) {
    const auto chunk = windows.subspan(b0, std::min(batch, windows.size() - b0));
    const auto in = build_model_input(ds, bank, model.config(), chunk);
    GradTape tape;
    const Tensor& pred = tape.value(model.forward(tape, in, Mode::Eval, steps));
    for (std::size_t r = 0; r < pred.rows(); ++r) {
      for (std::size_t c = 0; c < steps; ++c) {
        out(b0 * n + r, c) = unzscore(pred(r, c), ds.mean, ds.stddev);
      }
    }
  }
  return out;
}

}  // namespace pmmn
