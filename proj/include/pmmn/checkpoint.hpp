#pragma once

#include <map>
#include <sstream>
#include <string>

#include "pmmn/io.hpp"
#include "pmmn/model.hpp"

namespace pmmn {

inline constexpr char kCheckpointMagic[5] = {'P', 'M', 'M', 'N', '1'};

/// Free-form metadata stored next to the model (pattern hash, z-score
/// statistics, epoch counters, node ids).
using Metadata = std::map<std::string, std::string>;

struct Checkpoint {
  ForecastModel model;
  Metadata meta;
};

namespace detail {

inline std::string encode_kv(const Metadata& kv) {
  std::string s;
  for (const auto& [k, v] : kv) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw Error("checkpoint: metadata key/value contains a reserved character");
    }
    s += k + "=" + v + "\n";
  }
  return s;
}

inline Metadata decode_kv(const std::string& text) {
  Metadata kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("checkpoint: malformed metadata line");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline void write_tensor(std::ostream& os, const Tensor& t) {
  io::write_u64(os, t.rows());
  io::write_u64(os, t.cols());
  for (double v : t.values()) io::write_f64(os, v);
}

inline Tensor read_tensor(std::istream& is) {
  const auto rows = io::read_u64(is);
  const auto cols = io::read_u64(is);
  if (rows > (1u << 26) || cols > (1u << 26) || rows * cols > (1ull << 30)) {
    throw Error("checkpoint: implausible tensor shape");
  }
  Tensor t(rows, cols);
  for (double& v : t.values()) v = io::read_f64(is);
  return t;
}

}  // namespace detail

/// Layout: magic "PMMN1"; metadata text (model config merged with `meta`);
/// u64 parameter count, then per parameter name, value tensor, Adam step,
/// first and second moments; u64 buffer count, then per buffer name and
/// tensor. Tensors are u64 rows, u64 cols and little-endian doubles.
inline void save_checkpoint(const std::string& path, const ForecastModel& model,
                            const Metadata& meta) {
  Metadata all = meta;
  for (const auto& [k, v] : model.config().to_kv()) all[k] = v;
  all["nodes"] = std::to_string(model.nodes());

  auto os = io::open_out(path, true);
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  io::write_string(os, detail::encode_kv(all));
  const auto& params = model.params().params();
  io::write_u64(os, params.size());
  for (const auto& [name, p] : params) {
    io::write_string(os, name);
    detail::write_tensor(os, p.value);
    io::write_u64(os, p.adam_step);
    detail::write_tensor(os, p.adam_m);
    detail::write_tensor(os, p.adam_v);
  }
  const auto& buffers = model.params().buffers();
  io::write_u64(os, buffers.size());
  for (const auto& [name, t] : buffers) {
    io::write_string(os, name);
    detail::write_tensor(os, t);
  }
  if (!os) throw Error("checkpoint: write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  auto is = io::open_in(path, true);
  char magic[sizeof kCheckpointMagic];
  io::read_exact(is, magic, sizeof magic);
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kCheckpointMagic))) {
    throw Error("checkpoint: '" + path + "' is not a PMMN1 checkpoint");
  }
  Checkpoint ck;
  ck.meta = detail::decode_kv(io::read_string(is));
  const auto cfg = ModelConfig::from_kv(ck.meta);

  std::map<std::string, Parameter> params;
  const auto np = io::read_u64(is);
  for (std::uint64_t i = 0; i < np; ++i) {
    auto name = io::read_string(is);
    Parameter p;
    p.value = detail::read_tensor(is);
    p.adam_step = io::read_u64(is);
    p.adam_m = detail::read_tensor(is);
    p.adam_v = detail::read_tensor(is);
    p.grad = Tensor(p.value.rows(), p.value.cols());
    params.emplace(std::move(name), std::move(p));
  }
  std::map<std::string, Tensor> buffers;
  const auto nb = io::read_u64(is);
  for (std::uint64_t i = 0; i < nb; ++i) {
    auto name = io::read_string(is);
    buffers.emplace(std::move(name), detail::read_tensor(is));
  }
  auto adj = buffers.find("graph.adj_norm");
  if (adj == buffers.end()) throw Error("checkpoint: missing graph support");

  ck.model = ForecastModel(cfg, adj->second);
  auto& store = ck.model.params();
  if (store.params().size() != params.size() || store.buffers().size() != buffers.size()) {
    throw Error("checkpoint: parameter set does not match the stored configuration");
  }
  for (auto& [name, p] : params) {
    if (!store.has(name)) throw Error("checkpoint: unexpected parameter '" + name + "'");
    Parameter& dst = store.param(name);
    if (!dst.value.same_shape(p.value) || !dst.value.same_shape(p.adam_m) ||
        !dst.value.same_shape(p.adam_v)) {
      throw Error("checkpoint: shape mismatch for parameter '" + name + "'");
    }
    dst = std::move(p);
  }
  for (auto& [name, t] : buffers) {
    if (!store.has_buffer(name) || !store.buffer(name).same_shape(t)) {
      throw Error("checkpoint: unexpected buffer '" + name + "'");
    }
    store.buffer(name) = std::move(t);
  }
  return ck;
}

}  // namespace pmmn
