#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "transnet/numkit/adam.hpp"
#include "transnet/numkit/init.hpp"
#include "transnet/numkit/tensor.hpp"

namespace transnet::numkit {

// Largest head count <= requested that divides the width.
inline std::size_t fit_heads(std::size_t width, std::size_t requested) {
  if (width == 0 || requested == 0) throw ContractError("attention needs a positive width and head count");
  std::size_t h = std::min(requested, width);
  while (width % h != 0) --h;
  return h;
}

// Scaled dot-product self-attention over the rows of x[n, w]. No positional
// terms: permuting the rows of x permutes the output rows the same way.
struct MultiHeadAttention {
  std::size_t heads = 1;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;

  template <class Rng>
  static MultiHeadAttention init(std::size_t width, std::size_t heads, Rng& rng) {
    MultiHeadAttention a;
    a.heads = fit_heads(width, heads);
    a.wq = glorot(width, width, rng);
    a.bq = zeros_param({width});
    a.wk = glorot(width, width, rng);
    a.bk = zeros_param({width});
    a.wv = glorot(width, width, rng);
    a.bv = zeros_param({width});
    a.wo = glorot(width, width, rng);
    a.bo = zeros_param({width});
    return a;
  }

  std::size_t width() const { return wq.rows(); }

  void append_to(NamedTensors& out, const std::string& prefix) const {
    for (auto [n, t] : {std::pair{"wq", wq}, std::pair{"bq", bq}, std::pair{"wk", wk}, std::pair{"bk", bk},
                        std::pair{"wv", wv}, std::pair{"bv", bv}, std::pair{"wo", wo}, std::pair{"bo", bo}})
      out.emplace_back(prefix + n, t);
  }

  Tensor forward(const Tensor& x) const {
    if (x.rank() != 2 || x.cols() != width()) {
      throw ShapeError("attention: input " + shape_str(x.shape()) + " for width " + std::to_string(width()));
    }
    const std::size_t dh = width() / heads;
    const Tensor q = linear(x, wq, bq), k = linear(x, wk, bk), v = linear(x, wv, bv);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> outs;
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor qh = slice_cols(q, h * dh, dh), kh = slice_cols(k, h * dh, dh), vh = slice_cols(v, h * dh, dh);
      Tensor att = softmax(scale(matmul(qh, transpose(kh)), inv));
      outs.push_back(matmul(att, vh));
    }
    return linear(heads == 1 ? outs.front() : concat(outs), wo, bo);
  }
};

}  // namespace transnet::numkit
