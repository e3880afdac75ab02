#pragma once

#include <cmath>
#include <string>

#include "dvae/errors.hpp"
#include "dvae/nets/network.hpp"

namespace dvae::train {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moments for one parameter set. Gradients passed to step() are descent
// directions (gradients of a loss); entries whose gradient is exactly zero
// keep their value while their moments still decay.
template <typename T>
struct AdamState {
  nets::Gradients<T> m, v;
  long long t = 0;

  explicit AdamState(const nets::ParameterSet<T>& p = {}) : m(nets::zero_gradients(p)), v(nets::zero_gradients(p)) {}
};

template <typename T>
void optimizer_step(nets::ParameterSet<T>& params, const nets::Gradients<T>& grads, AdamState<T>& state, double lr,
                    const AdamOptions& opt = {}, const std::string& what = "parameters") {
  if (grads.size() != params.tensors.size() || state.m.size() != params.tensors.size()) {
    throw DimensionError("gradient / optimizer state does not match " + what);
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != params.tensors[i].values.size()) {
      throw DimensionError("gradient shape mismatch for " + params.tensors[i].name);
    }
    if (!grads[i].allFinite()) {
      throw NumericError("non-finite gradient for " + what + " tensor " + params.tensors[i].name);
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& p = params.tensors[i].values;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (Eigen::Index k = 0; k < g.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = opt.beta1 * static_cast<double>(m[k]) + (1 - opt.beta1) * gk;
      const double vk = opt.beta2 * static_cast<double>(v[k]) + (1 - opt.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      if (gk == 0.0 || lr == 0.0) continue;
      p[k] -= static_cast<T>(lr * (mk / c1) / (std::sqrt(vk / c2) + opt.epsilon));
    }
  }
}

}  // namespace dvae::train
