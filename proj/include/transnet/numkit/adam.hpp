#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "transnet/numkit/tensor.hpp"

namespace transnet::numkit {

// Ordered name -> tensor list. Order is the serialization order.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  explicit AdamState(double learning_rate = 0.001) : lr(learning_rate) {}
};

// Bias-corrected Adam update; every parameter must carry a gradient buffer.
// Gradients are cleared afterwards.
inline void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k].has_grad()) throw ContractError("adam_step: parameter " + std::to_string(k) + " has no gradient");
    if (state.m[k].size() != params[k].size()) throw ContractError("adam_step: moment buffer shape mismatch");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].data();
    auto g = params[k].grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      w[i] -= state.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
    params[k].zero_grad();
  }
}

}  // namespace transnet::numkit
