#pragma once

// Central finite-difference gradient oracle. Independent of the tape: it only
// evaluates the forward function with perturbed leaf values.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "transnet/numkit/tensor.hpp"

namespace testsupport {

using transnet::numkit::Tape;
using transnet::numkit::Tensor;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

// Relative error with a floor on the denominator so near-zero gradients are
// compared absolutely.
inline double rel_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `loss` must rebuild the forward pass from `params` on every call.
inline GradCheckResult gradcheck(std::vector<Tensor> params, const std::function<Tensor()>& loss,
                                 double h = 1e-5) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    Tensor l = loss();
    tape.backward(l);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    analytic.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                       : std::vector<double>(p.size(), 0.0));
  }
  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss().item();
      data[i] = saved - h;
      const double down = loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = rel_error(analytic[k][i], numeric);
      if (err > result.max_rel_error) result = {err, k, i};
    }
  }
  for (auto& p : params) p.zero_grad();
  return result;
}

}  // namespace testsupport
