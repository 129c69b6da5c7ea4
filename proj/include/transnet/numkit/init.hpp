#pragma once

#include <cmath>
#include <random>

#include "transnet/numkit/tensor.hpp"

namespace transnet::numkit {

// Glorot-uniform weight matrix [out, in], as a trainable leaf.
template <class Rng>
Tensor glorot(std::size_t out, std::size_t in, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  return Tensor::uniform({out, in}, -a, a, rng, true);
}

inline Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

inline Tensor ones_param(std::size_t n) { return Tensor({n}, std::vector<double>(n, 1.0), true); }

}  // namespace transnet::numkit
