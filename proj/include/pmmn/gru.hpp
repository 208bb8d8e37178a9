#pragma once

#include <random>
#include <string>

#include "pmmn/params.hpp"
#include "pmmn/tape.hpp"

namespace pmmn {

/// Parameters of a GRU cell (input width -> hidden width) recorded on a tape.
struct GruVars {
  Var wx_z, wx_r, wx_n;  // in x hidden
  Var wh_z, wh_r, wh_n;  // hidden x hidden
  Var b_z, b_r, b_n;     // 1 x hidden
};

/// Three-gate GRU with the reset gate applied to the previous state before
/// the candidate transform:
///   z  = sigmoid(x Wxz + h Whz + bz)
///   r  = sigmoid(x Wxr + h Whr + br)
///   n  = tanh(x Wxn + (r * h) Whn + bn)
///   h' = (1 - z) * n + z * h
inline Var gru_cell(GradTape& tape, Var x, Var h, const GruVars& p) {
  const Tensor& X = tape.value(x);
  const Tensor& H = tape.value(h);
  const Tensor& Wxz = tape.value(p.wx_z);
  const Tensor& Whz = tape.value(p.wh_z);
  if (X.rows() != H.rows() || Wxz.rows() != X.cols() || Whz.rows() != H.cols() ||
      Whz.cols() != H.cols() || Wxz.cols() != H.cols()) {
    throw Error("gru_cell: parameter shapes inconsistent with input " + X.shape_string() +
                " and state " + H.shape_string());
  }
  Var z = tape.sigmoid(
      tape.add_row(tape.add(tape.matmul(x, p.wx_z), tape.matmul(h, p.wh_z)), p.b_z));
  Var r = tape.sigmoid(
      tape.add_row(tape.add(tape.matmul(x, p.wx_r), tape.matmul(h, p.wh_r)), p.b_r));
  Var n = tape.tanh(
      tape.add_row(tape.add(tape.matmul(x, p.wx_n), tape.matmul(tape.mul(r, h), p.wh_n)), p.b_n));
  // (1 - z) n + z h  ==  n + z (h - n)
  return tape.add(n, tape.mul(z, tape.sub(h, n)));
}

/// Named GRU parameters in a ParamStore.
struct GruParams {
  std::string prefix = "gru";

  std::string name(const char* what) const { return prefix + "." + what; }

  void add_params(ParamStore& store, std::size_t in, std::size_t hidden,
                  std::mt19937_64& rng) const {
    for (const char* g : {"wx_z", "wx_r", "wx_n"}) store.add(name(g), xavier_uniform(in, hidden, rng));
    for (const char* g : {"wh_z", "wh_r", "wh_n"}) {
      store.add(name(g), xavier_uniform(hidden, hidden, rng));
    }
    for (const char* g : {"b_z", "b_r", "b_n"}) store.add(name(g), Tensor(1, hidden, 0.0));
  }

  GruVars vars(GradTape& tape, ParamStore& store) const {
    return {tape.param(store, name("wx_z")), tape.param(store, name("wx_r")),
            tape.param(store, name("wx_n")), tape.param(store, name("wh_z")),
            tape.param(store, name("wh_r")), tape.param(store, name("wh_n")),
            tape.param(store, name("b_z")),  tape.param(store, name("b_r")),
            tape.param(store, name("b_n"))};
  }
};

}  // namespace pmmn
