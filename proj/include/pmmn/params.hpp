#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "pmmn/tensor.hpp"

namespace pmmn {

/// A learnable tensor with its gradient accumulator and Adam moments.
struct Parameter {
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;
  std::uint64_t adam_step = 0;
};

/// Named learnable parameters plus named non-learnable state buffers
/// (batch-norm running statistics). Names are unique across both maps.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init) {
    if (params_.count(name) || buffers_.count(name)) {
      throw Error("param store: duplicate name '" + name + "'");
    }
    Parameter p;
    p.grad = Tensor(init.rows(), init.cols());
    p.adam_m = Tensor(init.rows(), init.cols());
    p.adam_v = Tensor(init.rows(), init.cols());
    p.value = std::move(init);
    return params_.emplace(name, std::move(p)).first->second;
  }

  Tensor& add_buffer(const std::string& name, Tensor init) {
    if (params_.count(name) || buffers_.count(name)) {
      throw Error("param store: duplicate name '" + name + "'");
    }
    return buffers_.emplace(name, std::move(init)).first->second;
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }
  bool has_buffer(const std::string& name) const { return buffers_.count(name) > 0; }

  Parameter& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("param store: unknown parameter '" + name + "'");
    return it->second;
  }
  const Parameter& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("param store: unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& value(const std::string& name) { return param(name).value; }
  const Tensor& value(const std::string& name) const { return param(name).value; }

  Tensor& buffer(const std::string& name) {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) throw Error("param store: unknown buffer '" + name + "'");
    return it->second;
  }
  const Tensor& buffer(const std::string& name) const {
    auto it = buffers_.find(name);
    if (it == buffers_.end()) throw Error("param store: unknown buffer '" + name + "'");
    return it->second;
  }

  std::map<std::string, Parameter>& params() { return params_; }
  const std::map<std::string, Parameter>& params() const { return params_; }
  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  void zero_grad() {
    for (auto& [_, p] : params_) p.grad.fill(0.0);
    grads_ready_ = false;
  }

  // Set by GradTape::backward, cleared by the optimizer.
  bool grads_ready() const { return grads_ready_; }
  void mark_grads_ready() { grads_ready_ = true; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
  }

 private:
  std::map<std::string, Parameter> params_;
  std::map<std::string, Tensor> buffers_;
  bool grads_ready_ = false;
};

/// Xavier/Glorot uniform initialisation: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
inline Tensor xavier_uniform(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace pmmn
