#pragma once

// Reference implementations written with plain loops over nested vectors.
// They share no code with the library beyond reading parameter values.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pmmn/model.hpp"
#include "pmmn/patterns.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Mat to_mat(const pmmn::Tensor& t) {
  Mat m(t.rows(), Vec(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t(r, c);
  }
  return m;
}

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, Vec(c, 0.0)); }

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out = zeros(a.size(), b.front().size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.front().size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      out[i][j] = s;
    }
  }
  return out;
}

inline Mat transpose(const Mat& a) {
  Mat t = zeros(a.front().size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) t[j][i] = a[i][j];
  }
  return t;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) out[i][j] += b[i][j];
  }
  return out;
}

inline Mat relu(Mat a) {
  for (auto& row : a) {
    for (double& v : row) v = v > 0.0 ? v : 0.0;
  }
  return a;
}

// Direct exp / sum without max subtraction; fine for the small values used.
inline Vec softmax(const Vec& v) {
  Vec out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += std::exp(v[i]);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v[i]) / s;
  return out;
}

inline Mat softmax_rows(const Mat& a) {
  Mat out;
  for (const auto& row : a) out.push_back(softmax(row));
  return out;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Representative memory of one node: softmax(-d) weighted sum of bank rows.
inline Vec select_memory(const Mat& bank, const std::vector<pmmn::Neighbor>& nb) {
  Vec neg;
  for (const auto& n : nb) neg.push_back(-n.distance);
  const Vec w = softmax(neg);
  Vec out(bank.front().size(), 0.0);
  for (std::size_t j = 0; j < nb.size(); ++j) {
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w[j] * bank[nb[j].id][c];
  }
  return out;
}

/// C_ij = softmax_j(h_i . m_j / sqrt(d)).
inline Mat attention(const Mat& h, const Mat& m) {
  const double d = static_cast<double>(h.front().size());
  Mat scores = zeros(h.size(), m.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    for (std::size_t j = 0; j < m.size(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < h[i].size(); ++c) s += h[i][c] * m[j][c];
      scores[i][j] = s / std::sqrt(d);
    }
  }
  return softmax_rows(scores);
}

/// ReLU( sum_heads (A M) Wa_h + (Ad M) Wd_h + (C M) Wc_h ), each head term
/// evaluated separately.
inline Mat graph_conv(const Mat& m_next, const Mat& a, const Mat& ad, const Mat& c,
                      const std::vector<Mat>& wa, const std::vector<Mat>& wd,
                      const std::vector<Mat>& wc, bool simple) {
  Mat acc = zeros(m_next.size(), m_next.front().size());
  for (std::size_t h = 0; h < wc.size(); ++h) {
    if (!simple) {
      acc = add(acc, matmul(matmul(a, m_next), wa[h]));
      acc = add(acc, matmul(matmul(ad, m_next), wd[h]));
    }
    acc = add(acc, matmul(matmul(c, m_next), wc[h]));
  }
  return relu(acc);
}

inline Mat batchnorm_eval(const Mat& x, const pmmn::ParamStore& s, const std::string& prefix) {
  const auto& g = s.value(prefix + ".bn.gamma");
  const auto& b = s.value(prefix + ".bn.beta");
  const auto& mu = s.buffer(prefix + ".bn.mean");
  const auto& var = s.buffer(prefix + ".bn.var");
  Mat out = x;
  for (auto& row : out) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      row[c] = g[c] * (row[c] - mu[c]) / std::sqrt(var[c] + 1e-5) + b[c];
    }
  }
  return out;
}

/// Layer energies, layer weights and the prediction of one decoder step for
/// one node: e_l = h^{l-1} . (M^l W^l) / sqrt(d), alpha = softmax(e),
/// y = sum_l alpha_l o^l W_proj.
struct DecoderReadout {
  Vec energy;
  Vec alpha;
  double prediction = 0.0;
};

inline DecoderReadout decoder_readout(const std::vector<Vec>& h_prev, const std::vector<Vec>& mem,
                                      const std::vector<Mat>& w, const std::vector<Vec>& o,
                                      const Mat& proj) {
  DecoderReadout r;
  const std::size_t d = h_prev.front().size();
  for (std::size_t l = 0; l < h_prev.size(); ++l) {
    double e = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      double key = 0.0;
      for (std::size_t k = 0; k < d; ++k) key += mem[l][k] * w[l][k][c];
      e += h_prev[l][c] * key;
    }
    r.energy.push_back(e / std::sqrt(static_cast<double>(d)));
  }
  r.alpha = softmax(r.energy);
  for (std::size_t l = 0; l < o.size(); ++l) {
    double p = 0.0;
    for (std::size_t c = 0; c < d; ++c) p += o[l][c] * proj[c][0];
    r.prediction += r.alpha[l] * p;
  }
  return r;
}

/// Everything the forward oracle records for one window.
struct ForwardRecord {
  Mat prediction;            // nodes x steps
  Mat adaptive;              // Ã
  std::vector<Mat> attention;
  std::vector<Mat> alpha;    // per step: nodes x L
};

/// Eval-mode forward pass of one window. `matches` holds one entry per node,
/// `noise` is nodes x T' (already normalised), `last` the first decoder input.
inline ForwardRecord forward(const pmmn::ForecastModel& model, const Mat& adj_norm,
                             const std::vector<pmmn::MatchResult>& matches, const Mat& noise,
                             const std::vector<std::size_t>& slots, const Vec& last,
                             std::size_t steps) {
  const auto& cfg = model.config();
  const auto& s = model.params();
  const std::size_t n = matches.size();
  const std::size_t d = cfg.hidden;
  const std::size_t L = cfg.layers;
  auto P = [&](const std::string& name) { return to_mat(s.value(name)); };
  ForwardRecord rec;

  Mat ad = zeros(n, n);
  if (!cfg.simple_mem) {
    ad = softmax_rows(relu(matmul(P("node_emb.src"), transpose(P("node_emb.dst")))));
    rec.adaptive = ad;
  }

  std::vector<Mat> mem;
  for (std::size_t l = 0; l <= L; ++l) {
    const Mat bank = P("memory." + std::to_string(l));
    Mat m;
    for (const auto& mr : matches) m.push_back(select_memory(bank, mr.neighbors));
    mem.push_back(m);
  }

  auto heads = [&](const std::string& prefix, const char* kind) {
    std::vector<Mat> w;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      w.push_back(P(prefix + ".w_" + kind + "." + std::to_string(h)));
    }
    return w;
  };
  struct LayerOut {
    Mat hidden;
    Mat output;
  };
  auto layer = [&](const std::string& prefix, const Mat& h, std::size_t l) {
    const Mat c = attention(h, mem[l]);
    rec.attention.push_back(c);
    const std::vector<Mat> none;
    const Mat o = graph_conv(mem[l + 1], adj_norm, ad, c,
                             cfg.simple_mem ? none : heads(prefix, "adj"),
                             cfg.simple_mem ? none : heads(prefix, "adapt"), heads(prefix, "attn"),
                             cfg.simple_mem);
    return LayerOut{add(h, batchnorm_eval(o, s, prefix)), o};
  };

  const Mat emb = P("time_emb");
  const Mat wn = P("noise_proj");
  Mat h = zeros(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      for (std::size_t slot : slots) h[i][c] += emb[slot][c];
      for (std::size_t t = 0; t < noise[i].size(); ++t) h[i][c] += noise[i][t] * wn[t][c];
    }
  }
  for (std::size_t l = 0; l < L; ++l) h = layer("enc." + std::to_string(l), h, l).hidden;

  const Mat proj = P("proj");
  auto g = [&](const char* what) { return P(std::string("gru.") + what); };
  const Mat wxz = g("wx_z"), wxr = g("wx_r"), wxn = g("wx_n");
  const Mat whz = g("wh_z"), whr = g("wh_r"), whn = g("wh_n");
  const Mat bz = g("b_z"), br = g("b_r"), bn = g("b_n");

  rec.prediction = zeros(n, steps);
  Vec prev = last;
  Mat state = h;
  for (std::size_t step = 0; step < steps; ++step) {
    for (std::size_t i = 0; i < n; ++i) {
      Vec z(d), r(d), cand(d), next(d);
      for (std::size_t c = 0; c < d; ++c) {
        double az = prev[i] * wxz[0][c] + bz[0][c];
        double ar = prev[i] * wxr[0][c] + br[0][c];
        for (std::size_t k = 0; k < d; ++k) {
          az += state[i][k] * whz[k][c];
          ar += state[i][k] * whr[k][c];
        }
        z[c] = sigmoid(az);
        r[c] = sigmoid(ar);
      }
      for (std::size_t c = 0; c < d; ++c) {
        double an = prev[i] * wxn[0][c] + bn[0][c];
        for (std::size_t k = 0; k < d; ++k) an += r[k] * state[i][k] * whn[k][c];
        cand[c] = std::tanh(an);
        next[c] = (1.0 - z[c]) * cand[c] + z[c] * state[i][c];
      }
      state[i] = next;
    }
    Mat hl = state;
    std::vector<Mat> h_before, outs;
    for (std::size_t l = 0; l < L; ++l) {
      h_before.push_back(hl);
      auto lo = layer("dec." + std::to_string(l), hl, l);
      outs.push_back(lo.output);
      hl = lo.hidden;
    }
    Mat alpha = zeros(n, L);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<Vec> hp, mm, oo;
      std::vector<Mat> ww;
      for (std::size_t l = 0; l < L; ++l) {
        hp.push_back(h_before[l][i]);
        mm.push_back(mem[l][i]);
        oo.push_back(outs[l][i]);
        ww.push_back(P("dec." + std::to_string(l) + ".w_energy"));
      }
      const auto ro = decoder_readout(hp, mm, ww, oo, proj);
      alpha[i] = ro.alpha;
      rec.prediction[i][step] = ro.prediction;
      prev[i] = ro.prediction;
    }
    rec.alpha.push_back(alpha);
  }
  return rec;
}

}  // namespace oracle
