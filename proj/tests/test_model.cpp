#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "pmmn/checkpoint.hpp"
#include "pmmn/gradcheck.hpp"
#include "pmmn/graph.hpp"
#include "pmmn/model.hpp"

using namespace pmmn;

namespace {

ModelConfig small_config(std::size_t layers = 2) {
  ModelConfig c;
  c.input_len = 4;
  c.horizon = 3;
  c.hidden = 4;
  c.layers = layers;
  c.k = 2;
  c.num_patterns = 6;
  c.heads = 2;
  c.embed_dim = 3;
  c.seed = 11;
  return c;
}

Tensor random_adjacency(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor a(n, n);
  for (double& v : a.values()) v = u(rng) < 0.4 ? 0.0 : u(rng);
  return normalize_adjacency(a);
}

// Pushes batch-norm parameters and running statistics away from the identity
// so the eval path is exercised.
void perturb_batchnorm(ForecastModel& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  auto& s = m.params();
  for (auto& [name, p] : s.params()) {
    if (name.find(".bn.") != std::string::npos) {
      for (double& v : p.value.values()) v = name.ends_with("gamma") ? u(rng) : u(rng) - 1.0;
    }
  }
  for (auto& [name, t] : s.buffers()) {
    if (name.ends_with(".bn.mean")) for (double& v : t.values()) v = 0.3 * (u(rng) - 1.0);
    if (name.ends_with(".bn.var")) for (double& v : t.values()) v = u(rng);
  }
}

struct Batch {
  ModelInput in;
  std::vector<MatchResult> matches;
};

Batch random_batch(const ModelConfig& cfg, std::size_t nodes, std::size_t windows,
                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> slot(0, kSlotsPerDay - 1);
  Batch b;
  b.in.windows = windows;
  b.in.nodes = nodes;
  b.in.noise = Tensor(windows * nodes, cfg.input_len);
  for (double& v : b.in.noise.values()) v = 0.5 * u(rng);
  b.in.last_value = Tensor(windows * nodes, 1);
  for (double& v : b.in.last_value.values()) v = u(rng);
  for (std::size_t w = 0; w < windows; ++w) {
    const std::size_t s0 = slot(rng);
    std::vector<std::size_t> s;
    for (std::size_t t = 0; t < cfg.input_len; ++t) s.push_back((s0 + t) % kSlotsPerDay);
    b.in.slots.push_back(s);
  }
  std::vector<std::size_t> ids(cfg.num_patterns);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  for (std::size_t r = 0; r < windows * nodes; ++r) {
    std::shuffle(ids.begin(), ids.end(), rng);
    MatchResult m;
    double d = 0.0;
    for (std::size_t j = 0; j < cfg.k; ++j) {
      d += 0.3 * (u(rng) + 1.0);
      m.neighbors.push_back({ids[j], d});
    }
    b.matches.push_back(m);
  }
  b.in.matches = make_match_batch(b.matches);
  return b;
}

// Rows of window w as an oracle input.
oracle::Mat window_rows(const Tensor& t, std::size_t w, std::size_t n) {
  const auto all = oracle::to_mat(t);
  return oracle::Mat(all.begin() + w * n, all.begin() + (w + 1) * n);
}

oracle::Vec window_last(const Tensor& t, std::size_t w, std::size_t n) {
  oracle::Vec v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(t(w * n + i, 0));
  return v;
}

}  // namespace

TEST(ForecastModel, EvalForwardMatchesOracle) {
  for (bool simple : {false, true}) {
    std::mt19937_64 rng(simple ? 5 : 4);
    auto cfg = small_config();
    cfg.simple_mem = simple;
    const std::size_t n = 3;
    const Tensor adj = random_adjacency(n, rng);
    ForecastModel model(cfg, adj);
    perturb_batchnorm(model, rng);
    const auto batch = random_batch(cfg, n, 2, rng);

    GradTape tape;
    ForwardTrace trace;
    const Tensor pred = tape.value(model.forward(tape, batch.in, Mode::Eval, 5, &trace));
    ASSERT_EQ(pred.rows(), 6u);
    ASSERT_EQ(pred.cols(), 5u);
    EXPECT_EQ(trace.alpha.size(), 5u);

    for (std::size_t w = 0; w < 2; ++w) {
      const std::vector<MatchResult> m(batch.matches.begin() + w * n,
                                       batch.matches.begin() + (w + 1) * n);
      const auto rec = oracle::forward(model, oracle::to_mat(adj), m, window_rows(batch.in.noise, w, n),
                                       batch.in.slots[w], window_last(batch.in.last_value, w, n), 5);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t s = 0; s < 5; ++s) {
          EXPECT_NEAR(pred(w * n + i, s), rec.prediction[i][s], 1e-10) << "w" << w << " i" << i;
          for (std::size_t l = 0; l < cfg.layers; ++l) {
            EXPECT_NEAR(trace.alpha[s](w * n + i, l), rec.alpha[s][i][l], 1e-10);
          }
        }
        for (std::size_t j = 0; j < n; ++j) {
          EXPECT_NEAR(trace.attention[0](w * n + i, j), rec.attention[0][i][j], 1e-10);
        }
      }
      if (!simple) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(trace.adaptive(i, j), rec.adaptive[i][j], 1e-12);
        }
      }
    }
  }
}

TEST(ForecastModel, LayerWeightsFormADistribution) {
  std::mt19937_64 rng(7);
  const auto cfg = small_config(3);
  ForecastModel model(cfg, random_adjacency(4, rng));
  const auto batch = random_batch(cfg, 4, 3, rng);
  GradTape tape;
  ForwardTrace trace;
  model.forward(tape, batch.in, Mode::Eval, 4, &trace);
  for (const auto& a : trace.alpha) {
    ASSERT_EQ(a.cols(), 3u);
    for (std::size_t r = 0; r < a.rows(); ++r) {
      EXPECT_NEAR(a(r, 0) + a(r, 1) + a(r, 2), 1.0, 1e-12);
      for (std::size_t l = 0; l < 3; ++l) EXPECT_GT(a(r, l), 0.0);
    }
  }
}

TEST(ForecastModel, SingleLayerWeightIsOne) {
  std::mt19937_64 rng(8);
  const auto cfg = small_config(1);
  ForecastModel model(cfg, random_adjacency(3, rng));
  const auto batch = random_batch(cfg, 3, 2, rng);
  GradTape tape;
  ForwardTrace trace;
  model.forward(tape, batch.in, Mode::Eval, 3, &trace);
  for (const auto& a : trace.alpha) {
    for (double v : a.values()) EXPECT_DOUBLE_EQ(v, 1.0);
  }
}

TEST(ForecastModel, ZeroParametersGiveZeroForecast) {
  std::mt19937_64 rng(9);
  const auto cfg = small_config();
  ForecastModel model(cfg, random_adjacency(3, rng));
  for (auto& [_, p] : model.params().params()) p.value.fill(0.0);
  const auto batch = random_batch(cfg, 3, 2, rng);
  GradTape tape;
  const Tensor& pred = tape.value(model.forward(tape, batch.in, Mode::Eval, 4));
  for (double v : pred.values()) EXPECT_EQ(v, 0.0);
}

TEST(ForecastModel, ShorterRolloutIsAPrefix) {
  std::mt19937_64 rng(10);
  const auto cfg = small_config();
  ForecastModel model(cfg, random_adjacency(3, rng));
  perturb_batchnorm(model, rng);
  const auto batch = random_batch(cfg, 3, 2, rng);
  GradTape t1, t6;
  const Tensor one = t1.value(model.forward(t1, batch.in, Mode::Eval, 1));
  const Tensor six = t6.value(model.forward(t6, batch.in, Mode::Eval, 6));
  for (std::size_t r = 0; r < one.rows(); ++r) EXPECT_EQ(one(r, 0), six(r, 0));
}

TEST(ForecastModel, WindowsInABatchAreIndependent) {
  std::mt19937_64 rng(12);
  const auto cfg = small_config();
  ForecastModel model(cfg, random_adjacency(3, rng));
  perturb_batchnorm(model, rng);
  const auto batch = random_batch(cfg, 3, 3, rng);
  GradTape tape;
  const Tensor all = tape.value(model.forward(tape, batch.in, Mode::Eval, 3));
  for (std::size_t w = 0; w < 3; ++w) {
    ModelInput single;
    single.windows = 1;
    single.nodes = 3;
    single.noise = Tensor(3, cfg.input_len);
    single.last_value = Tensor(3, 1);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t t = 0; t < cfg.input_len; ++t) single.noise(i, t) = batch.in.noise(w * 3 + i, t);
      single.last_value(i, 0) = batch.in.last_value(w * 3 + i, 0);
    }
    single.slots = {batch.in.slots[w]};
    single.matches = make_match_batch(
        std::vector<MatchResult>(batch.matches.begin() + w * 3, batch.matches.begin() + (w + 1) * 3));
    GradTape t;
    const Tensor& one = t.value(model.forward(t, single, Mode::Eval, 3));
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t s = 0; s < 3; ++s) EXPECT_NEAR(one(i, s), all(w * 3 + i, s), 1e-13);
    }
  }
}

TEST(ForecastModel, SeedDeterminesInitialisation) {
  std::mt19937_64 rng(13);
  const Tensor adj = random_adjacency(3, rng);
  auto cfg = small_config();
  ForecastModel a(cfg, adj), b(cfg, adj);
  cfg.seed = 12;
  ForecastModel c(cfg, adj);
  bool differs = false;
  for (const auto& [name, p] : a.params().params()) {
    EXPECT_EQ(p.value, b.params().value(name)) << name;
    differs = differs || !(p.value == c.params().value(name));
  }
  EXPECT_TRUE(differs);
}

TEST(ForecastModel, ParameterLayout) {
  std::mt19937_64 rng(14);
  auto cfg = small_config();
  ForecastModel full(cfg, random_adjacency(3, rng));
  const auto& s = full.params();
  for (std::size_t l = 0; l <= cfg.layers; ++l) {
    EXPECT_EQ(s.value("memory." + std::to_string(l)).rows(), cfg.num_patterns);
  }
  EXPECT_FALSE(s.has("memory.3"));
  EXPECT_EQ(s.value("time_emb").rows(), kSlotsPerDay);
  EXPECT_EQ(s.value("noise_proj").rows(), cfg.input_len);
  EXPECT_TRUE(s.has("node_emb.src"));
  EXPECT_TRUE(s.has("enc.1.w_adapt.1"));
  cfg.simple_mem = true;
  ForecastModel simple(cfg, random_adjacency(3, rng));
  EXPECT_FALSE(simple.params().has("node_emb.src"));
  EXPECT_FALSE(simple.params().has("dec.0.w_adj.0"));
  EXPECT_LT(simple.params().parameter_count(), s.parameter_count());
}

TEST(ForecastModel, InputValidation) {
  std::mt19937_64 rng(15);
  const auto cfg = small_config();
  ForecastModel model(cfg, random_adjacency(3, rng));
  auto wrong_nodes = random_batch(cfg, 4, 1, rng);
  GradTape tape;
  EXPECT_THROW(model.forward(tape, wrong_nodes.in, Mode::Eval, 1), Error);
  auto batch = random_batch(cfg, 3, 1, rng);
  EXPECT_THROW(model.forward(tape, batch.in, Mode::Eval, 0), Error);
  batch.in.slots[0].pop_back();
  EXPECT_THROW(model.forward(tape, batch.in, Mode::Eval, 1), Error);
  EXPECT_THROW(ForecastModel(cfg, Tensor(2, 3)), Error);
  auto bad = cfg;
  bad.num_patterns = bad.k;
  EXPECT_THROW(ForecastModel(bad, Tensor::identity(2)), Error);
}

TEST(ForecastModel, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(16);
  auto cfg = small_config();
  cfg.hidden = 3;
  ForecastModel model(cfg, random_adjacency(3, rng));
  perturb_batchnorm(model, rng);
  const auto batch = random_batch(cfg, 3, 2, rng);
  Tensor weights(6, 3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : weights.values()) v = u(rng);
  GradCheckOptions opt;
  opt.per_param = 6;
  for (Mode mode : {Mode::Eval, Mode::Train}) {
    const auto buffers = model.params().buffers();
    const auto rep = grad_check(
        [&](GradTape& t) {
          // Train mode updates the running statistics; restore them so every
          // evaluation sees the same function.
          model.params().buffers() = buffers;
          return t.sum_all(t.mul(model.forward(t, batch.in, mode, 3), t.constant(weights)));
        },
        model.params(), opt);
    EXPECT_LT(rep.max_rel_error, 1e-5) << (mode == Mode::Train ? "train" : "eval");
    EXPECT_EQ(rep.per_param.size(), model.params().params().size());
  }
}

TEST(Checkpoint, RoundTripRestoresEverything) {
  std::mt19937_64 rng(17);
  const auto cfg = small_config();
  ForecastModel model(cfg, random_adjacency(3, rng));
  perturb_batchnorm(model, rng);
  for (auto& [_, p] : model.params().params()) {
    p.adam_m.fill(0.25);
    p.adam_v.fill(0.5);
    p.adam_step = 7;
  }
  const auto path = (std::filesystem::temp_directory_path() / "pmmn_model_ck.pmmn").string();
  save_checkpoint(path, model, {{"bank_hash", "123"}, {"note", "a b=c"}});
  auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.meta.at("bank_hash"), "123");
  EXPECT_EQ(ck.meta.at("note"), "a b=c");
  EXPECT_EQ(ck.model.config().to_kv(), cfg.to_kv());
  EXPECT_EQ(ck.model.nodes(), 3u);
  for (const auto& [name, p] : model.params().params()) {
    const auto& q = ck.model.params().param(name);
    EXPECT_EQ(p.value, q.value) << name;
    EXPECT_EQ(p.adam_m, q.adam_m);
    EXPECT_EQ(p.adam_v, q.adam_v);
    EXPECT_EQ(p.adam_step, q.adam_step);
  }
  for (const auto& [name, t] : model.params().buffers()) EXPECT_EQ(t, ck.model.params().buffer(name)) << name;

  const auto batch = random_batch(cfg, 3, 2, rng);
  GradTape t1, t2;
  EXPECT_EQ(t1.value(model.forward(t1, batch.in, Mode::Eval, 3)),
            t2.value(ck.model.forward(t2, batch.in, Mode::Eval, 3)));
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto bad = (dir / "pmmn_model_bad.pmmn").string();
  std::ofstream(bad) << "PMPB1 not a checkpoint";
  EXPECT_THROW(load_checkpoint(bad), Error);
  EXPECT_THROW(load_checkpoint((dir / "pmmn_missing.pmmn").string()), Error);

  std::mt19937_64 rng(18);
  ForecastModel model(small_config(), random_adjacency(3, rng));
  const auto good = (dir / "pmmn_model_trunc.pmmn").string();
  save_checkpoint(good, model, {});
  const auto size = std::filesystem::file_size(good);
  std::filesystem::resize_file(good, size / 2);
  EXPECT_THROW(load_checkpoint(good), Error);
}

TEST(BuildModelInput, NoiseAndLastValueFollowTheMatch) {
  SeriesDataset ds;
  ds.node_ids = {"a", "b"};
  const std::size_t steps = 40;
  ds.speed = Tensor(2, steps);
  ds.observed = Tensor(2, steps, 1.0);
  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(30.0, 70.0);
  for (double& v : ds.speed.values()) v = u(rng);
  for (std::size_t t = 0; t < steps; ++t) ds.slots.push_back((t + 100) % kSlotsPerDay);
  std::tie(ds.train_end, ds.val_end) = split_boundaries(steps);
  ds.mean = 50.0;
  ds.stddev = 8.0;

  Tensor p(6, 4);
  for (double& v : p.values()) v = u(rng) - 50.0;
  for (std::size_t j = 0; j < 6; ++j) {
    const double mean = (p(j, 0) + p(j, 1) + p(j, 2) + p(j, 3)) / 4.0;
    for (std::size_t t = 0; t < 4; ++t) p(j, t) -= mean;
  }
  const PatternSet bank(p);
  const auto cfg = small_config();
  const std::vector<Window> windows = {{3}, {20}};
  std::vector<MatchResult> matches;
  const auto in = build_model_input(ds, bank, cfg, windows, &matches);
  ASSERT_EQ(in.rows(), 4u);
  EXPECT_EQ(in.slots[1].front(), 120u);
  for (std::size_t w = 0; w < 2; ++w) {
    for (std::size_t i = 0; i < 2; ++i) {
      const std::size_t r = w * 2 + i, s0 = windows[w].start;
      const auto& m = matches[r];
      ASSERT_EQ(m.neighbors.size(), cfg.k);
      EXPECT_NEAR(in.last_value(r, 0), (ds.speed(i, s0 + 3) - 50.0) / 8.0, 1e-15);
      double mean = 0.0;
      for (std::size_t t = 0; t < 4; ++t) mean += ds.speed(i, s0 + t) / 4.0;
      for (std::size_t t = 0; t < 4; ++t) {
        const double zero_based = ds.speed(i, s0 + t) - mean;
        EXPECT_NEAR(in.noise(r, t) * 8.0 + bank.pattern(m.neighbors[0].id)[t], zero_based, 1e-12);
      }
    }
  }
  EXPECT_THROW(build_model_input(ds, PatternSet(Tensor(6, 5)), cfg, windows), Error);
}
