#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pmmn/tape.hpp"

namespace pmmn {

struct GradCheckOptions {
  double eps = 1e-5;
  // Coordinates sampled per parameter tensor (all of them if the tensor is smaller).
  std::size_t per_param = 8;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::map<std::string, double> per_param;  // max relative error per parameter
};

/// Compares tape gradients of a scalar forward against central differences
/// (f(x+eps) - f(x-eps)) / 2eps. The error of a coordinate is
/// |g_tape - g_fd| / max(1, |g_fd|). `f` must be deterministic and must not
/// mutate the store (freeze batch norm to Mode::Eval).
inline GradCheckReport grad_check(const std::function<Var(GradTape&)>& f, ParamStore& store,
                                  const GradCheckOptions& opt = {}) {
  auto eval = [&]() {
    GradTape tape;
    const double v = tape.value(f(tape))[0];
    if (!std::isfinite(v)) throw Error("grad_check: forward produced a non-finite value");
    return v;
  };

  store.zero_grad();
  {
    GradTape tape;
    Var loss = f(tape);
    if (!std::isfinite(tape.value(loss)[0])) {
      throw Error("grad_check: forward produced a non-finite value");
    }
    tape.backward(loss);
  }

  GradCheckReport report;
  std::mt19937_64 rng(opt.seed);
  for (auto& [name, p] : store.params()) {
    std::vector<std::size_t> idx(p.value.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), opt.per_param));
    double worst = 0.0;
    for (std::size_t i : idx) {
      const double saved = p.value[i];
      p.value[i] = saved + opt.eps;
      const double fp = eval();
      p.value[i] = saved - opt.eps;
      const double fm = eval();
      p.value[i] = saved;
      const double fd = (fp - fm) / (2.0 * opt.eps);
      const double err = std::abs(p.grad[i] - fd) / std::max(1.0, std::abs(fd));
      worst = std::max(worst, err);
      ++report.coordinates;
    }
    report.per_param[name] = worst;
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  store.zero_grad();
  return report;
}

}  // namespace pmmn
