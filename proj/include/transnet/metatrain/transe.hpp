#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "transnet/kgdata/graph.hpp"
#include "transnet/numkit/tensor.hpp"

namespace transnet::metatrain {

namespace nk = numkit;
using nk::Tensor;

struct TranseTables {
  Tensor entities;   // [entities, d]
  Tensor relations;  // [relations, d]
  std::vector<double> epoch_loss;
};

namespace detail {

inline void normalize_rows(std::vector<double>& v, std::size_t d) {
  for (std::size_t r = 0; r * d < v.size(); ++r) {
    double n = 0.0;
    for (std::size_t c = 0; c < d; ++c) n += v[r * d + c] * v[r * d + c];
    n = std::sqrt(n);
    if (n > 0.0)
      for (std::size_t c = 0; c < d; ++c) v[r * d + c] /= n;
  }
}

}  // namespace detail

// Uniform(-6/sqrt(d), 6/sqrt(d)) rows, relations normalized once.
template <class Rng>
TranseTables transe_init(std::size_t num_entities, std::size_t num_relations, std::size_t d, Rng& rng) {
  const double a = 6.0 / std::sqrt(static_cast<double>(d));
  TranseTables t;
  t.entities = Tensor::uniform({num_entities, d}, -a, a, rng);
  t.relations = Tensor::uniform({num_relations, d}, -a, a, rng);
  std::vector<double> r(t.relations.values());
  detail::normalize_rows(r, d);
  t.relations = Tensor({num_relations, d}, std::move(r));
  return t;
}

// Plain TransE with score ||h + r - t||^2, `negatives` uniformly corrupted
// heads or tails per triple, hinge at `margin`, SGD. Each negative carries
// weight 1/negatives; a single negative makes the epoch loss too noisy to
// track. Entity rows are renormalized at the start of every epoch.
template <class Rng>
TranseTables pretrain_transe(const kgdata::KnowledgeGraph& graph, std::size_t num_relations, std::size_t d,
                             std::size_t epochs, double margin, double lr, Rng& rng,
                             std::size_t negatives = 8) {
  const std::size_t n_ent = graph.num_entities();
  TranseTables t = transe_init(n_ent, num_relations, d, rng);
  if (epochs == 0 || graph.size() == 0 || n_ent < 2 || negatives == 0) return t;
  const double w = 1.0 / static_cast<double>(negatives), step = lr * w;
  std::vector<double> e(t.entities.values()), r(t.relations.values());
  std::vector<std::size_t> order(graph.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::uniform_int_distribution<std::size_t> any(0, n_ent - 1);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> dp(d), dn(d);

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    detail::normalize_rows(e, d);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (auto i : order) {
      const auto& tr = graph.triple(i);
      for (std::size_t k = 0; k < negatives; ++k) {
        std::size_t nh = tr.head, nt = tr.tail;
        (coin(rng) ? nh : nt) = any(rng);
        double sp = 0.0, sn = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          dp[c] = e[tr.head * d + c] + r[tr.relation * d + c] - e[tr.tail * d + c];
          dn[c] = e[nh * d + c] + r[tr.relation * d + c] - e[nt * d + c];
          sp += dp[c] * dp[c];
          sn += dn[c] * dn[c];
        }
        const double loss = margin + sp - sn;
        if (loss <= 0.0) continue;
        total += w * loss;
        for (std::size_t c = 0; c < d; ++c) {
          const double gp = 2.0 * step * dp[c], gn = 2.0 * step * dn[c];
          e[tr.head * d + c] -= gp;
          e[tr.tail * d + c] += gp;
          r[tr.relation * d + c] -= gp - gn;
          e[nh * d + c] += gn;
          e[nt * d + c] -= gn;
        }
      }
    }
    t.epoch_loss.push_back(total);
  }
  t.entities = Tensor({n_ent, d}, std::move(e));
  t.relations = Tensor({num_relations, d}, std::move(r));
  return t;
}

}  // namespace transnet::metatrain
