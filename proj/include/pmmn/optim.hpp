#pragma once

#include <cmath>

#include "pmmn/params.hpp"

namespace pmmn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam update over every parameter in the store, followed by
/// zeroing the gradients.
inline void adam_step(ParamStore& store, const AdamOptions& opt = {}) {
  if (!store.grads_ready()) throw Error("adam_step: gradients not populated (run backward first)");
  for (auto& [name, p] : store.params()) {
    ++p.adam_step;
    const double t = static_cast<double>(p.adam_step);
    const double c1 = 1.0 - std::pow(opt.beta1, t);
    const double c2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.adam_m[i] = opt.beta1 * p.adam_m[i] + (1.0 - opt.beta1) * g;
      p.adam_v[i] = opt.beta2 * p.adam_v[i] + (1.0 - opt.beta2) * g * g;
      const double mhat = p.adam_m[i] / c1;
      const double vhat = p.adam_v[i] / c2;
      p.value[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
    }
  }
  store.zero_grad();
}

}  // namespace pmmn
