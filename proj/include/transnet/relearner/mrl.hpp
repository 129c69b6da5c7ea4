#pragma once

#include <span>
#include <string>
#include <vector>

#include "transnet/kgdata/episode.hpp"
#include "transnet/numkit/adam.hpp"
#include "transnet/numkit/attention.hpp"
#include "transnet/numkit/init.hpp"
#include "transnet/numkit/tensor.hpp"

namespace transnet::relearner {

namespace nk = numkit;
using kgdata::EntityPair;
using nk::Tensor;

// Pre-LN transformer encoder layer: x + MHA(LN(x)), then + FF(LN(.)).
struct EncoderBlock {
  Tensor ln1_g, ln1_b;
  nk::MultiHeadAttention attn;
  Tensor ln2_g, ln2_b, ff1, ff1_b, ff2, ff2_b;

  template <class Rng>
  static EncoderBlock init(std::size_t width, std::size_t heads, std::size_t ff_width, Rng& rng) {
    EncoderBlock b;
    b.ln1_g = nk::ones_param(width);
    b.ln1_b = nk::zeros_param({width});
    b.attn = nk::MultiHeadAttention::init(width, heads, rng);
    b.ln2_g = nk::ones_param(width);
    b.ln2_b = nk::zeros_param({width});
    b.ff1 = nk::glorot(ff_width, width, rng);
    b.ff1_b = nk::zeros_param({ff_width});
    b.ff2 = nk::glorot(width, ff_width, rng);
    b.ff2_b = nk::zeros_param({width});
    return b;
  }

  void append_to(nk::NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + "ln1-g", ln1_g);
    out.emplace_back(prefix + "ln1-b", ln1_b);
    attn.append_to(out, prefix + "attn-");
    out.emplace_back(prefix + "ln2-g", ln2_g);
    out.emplace_back(prefix + "ln2-b", ln2_b);
    out.emplace_back(prefix + "ff1", ff1);
    out.emplace_back(prefix + "ff1-b", ff1_b);
    out.emplace_back(prefix + "ff2", ff2);
    out.emplace_back(prefix + "ff2-b", ff2_b);
  }

  Tensor forward(const Tensor& x) const {
    Tensor h = nk::add(x, attn.forward(nk::layer_norm(x, ln1_g, ln1_b)));
    Tensor f = nk::linear(nk::relu(nk::linear(nk::layer_norm(h, ln2_g, ln2_b), ff1, ff1_b)), ff2, ff2_b);
    return nk::add(h, f);
  }
};

struct MrlParams {
  std::size_t dim = 0;
  std::vector<EncoderBlock> blocks;
  // token MLP 3d -> d -> d
  Tensor out1, out1_b, out2, out2_b;
  // R' = tanh(W sum_j a_j R_j)
  Tensor transfer;
  // merged = M [R ; R'] + m
  Tensor merge, merge_b;

  template <class Rng>
  static MrlParams init(std::size_t d, Rng& rng, std::size_t layers = 1, std::size_t heads = 4) {
    MrlParams p;
    p.dim = d;
    const std::size_t w = 3 * d;
    for (std::size_t l = 0; l < layers; ++l) p.blocks.push_back(EncoderBlock::init(w, heads, 4 * w, rng));
    p.out1 = nk::glorot(d, w, rng);
    p.out1_b = nk::zeros_param({d});
    p.out2 = nk::glorot(d, d, rng);
    p.out2_b = nk::zeros_param({d});
    p.transfer = nk::glorot(d, d, rng);
    // [I | 0]: merge(R, 0) = R at initialization
    std::vector<double> m(d * 2 * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) m[i * 2 * d + i] = 1.0;
    p.merge = Tensor::matrix(d, 2 * d, std::move(m), true);
    p.merge_b = nk::zeros_param({d});
    return p;
  }

  void append_to(nk::NamedTensors& out, const std::string& prefix) const {
    for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].append_to(out, prefix + "block" + std::to_string(l) + "-");
    out.emplace_back(prefix + "out1", out1);
    out.emplace_back(prefix + "out1-b", out1_b);
    out.emplace_back(prefix + "out2", out2);
    out.emplace_back(prefix + "out2-b", out2_b);
    out.emplace_back(prefix + "transfer", transfer);
    out.emplace_back(prefix + "merge", merge);
    out.emplace_back(prefix + "merge-b", merge_b);
  }
};

// x_i = h_i ; R_r ; t_i, one row per support pair.
inline Tensor support_encoding(const Tensor& entities, const Tensor& relations, std::span<const EntityPair> support,
                               std::size_t relation) {
  if (support.empty()) throw ContractError("support_encoding: empty support set");
  std::vector<std::size_t> heads, tails, rels(support.size(), relation);
  for (const auto& p : support) {
    heads.push_back(p.head);
    tails.push_back(p.tail);
  }
  return nk::concat({nk::gather(entities, heads), nk::gather(relations, rels), nk::gather(entities, tails)});
}

// R = mean over tokens of MLP(transformer(x_1..x_K)).
inline Tensor mrl_forward(const Tensor& x, const MrlParams& p) {
  if (x.rank() != 2 || x.rows() == 0) throw ContractError("mrl_forward: needs at least one support encoding");
  if (x.cols() != 3 * p.dim) {
    throw ShapeError("mrl_forward: encodings of width " + std::to_string(x.cols()) + ", expected " +
                     std::to_string(3 * p.dim));
  }
  Tensor h = x;
  for (const auto& b : p.blocks) h = b.forward(h);
  Tensor y = nk::linear(nk::relu(nk::linear(h, p.out1, p.out1_b)), p.out2, p.out2_b);
  return nk::mean(y, 0);
}

// With no neighbors (transfer disabled) the result is the zero vector.
inline Tensor transfer_aggregate(const Tensor& alpha, const std::vector<Tensor>& neighbors, const MrlParams& p) {
  if (neighbors.empty()) {
    if (alpha.size() != 0) {
      throw ContractError("transfer_aggregate: weights given for an empty neighbor set");
    }
    return Tensor::zeros({p.dim});
  }
  if (alpha.rank() != 1 || alpha.size() != neighbors.size()) {
    throw ContractError("transfer_aggregate: " + std::to_string(alpha.size()) + " weights for " +
                        std::to_string(neighbors.size()) + " neighbors");
  }
  const std::size_t n = neighbors.size();
  Tensor mix = nk::reshape(nk::matmul(nk::reshape(alpha, {1, n}), nk::stack(neighbors)), {p.dim});
  return nk::tanh(nk::linear(mix, p.transfer));
}

inline Tensor merge(const Tensor& r, const Tensor& r_prime, const MrlParams& p) {
  if (r.rank() != 1 || r_prime.rank() != 1 || r.size() != p.dim || r_prime.size() != p.dim) {
    throw ContractError("merge: expected two width-" + std::to_string(p.dim) + " vectors, got " +
                        nk::shape_str(r.shape()) + " and " + nk::shape_str(r_prime.shape()));
  }
  return nk::linear(nk::concat({r, r_prime}), p.merge, p.merge_b);
}

}  // namespace transnet::relearner
