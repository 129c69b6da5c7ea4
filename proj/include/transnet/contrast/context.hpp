#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "transnet/kgdata/graph.hpp"
#include "transnet/numkit/adam.hpp"
#include "transnet/numkit/attention.hpp"
#include "transnet/numkit/init.hpp"
#include "transnet/numkit/tensor.hpp"

namespace transnet::contrast {

namespace nk = numkit;
using kgdata::KnowledgeGraph;
using kgdata::Triple;
using nk::Tensor;

// (relation, entity) neighbor tuples of a triple, aligned by index.
struct Context {
  std::vector<std::size_t> relations;
  std::vector<std::size_t> entities;

  std::size_t size() const { return relations.size(); }
  bool empty() const { return relations.empty(); }
  bool operator==(const Context&) const = default;
};

// Outgoing (r', t') tuples of h and of t, deduplicated, without the triple
// itself; a uniform random subset of `cap` when larger (cap 0 keeps all).
template <class Rng>
Context gather_context(const KnowledgeGraph& graph, const Triple& triple, std::size_t cap, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> tuples;
  for (auto e : {triple.head, triple.tail}) {
    if (e >= graph.num_entities()) continue;
    for (auto i : graph.outgoing(e)) {
      const auto& t = graph.triple(i);
      if (t == triple) continue;
      tuples.emplace_back(t.relation, t.tail);
    }
  }
  std::sort(tuples.begin(), tuples.end());
  tuples.erase(std::unique(tuples.begin(), tuples.end()), tuples.end());
  if (cap != 0 && tuples.size() > cap) {
    std::vector<std::pair<std::size_t, std::size_t>> kept;
    std::sample(tuples.begin(), tuples.end(), std::back_inserter(kept), cap, rng);
    tuples = std::move(kept);
  }
  Context c;
  for (auto [r, e] : tuples) {
    c.relations.push_back(r);
    c.entities.push_back(e);
  }
  return c;
}

// Each tuple is corrupted with probability 1/2 by redrawing its relation or
// its entity (chosen evenly) to a different uniform value. If no tuple was
// touched, one is forced so the result always differs.
template <class Rng>
Context corrupt_context(const Context& ctx, std::size_t num_entities, std::size_t num_relations, Rng& rng) {
  if (ctx.empty()) throw ContractError("corrupt_context: empty context");
  if (num_entities < 2 && num_relations < 2) throw ContractError("corrupt_context: nothing to redraw from");
  Context out = ctx;
  std::bernoulli_distribution coin(0.5);
  auto redraw = [&](std::size_t i) {
    bool use_relation = coin(rng);
    if (num_relations < 2) use_relation = false;
    if (num_entities < 2) use_relation = true;
    auto& slot = use_relation ? out.relations[i] : out.entities[i];
    const std::size_t n = use_relation ? num_relations : num_entities;
    std::uniform_int_distribution<std::size_t> pick(0, n - 2);
    const std::size_t v = pick(rng);
    slot = v >= slot ? v + 1 : v;  // uniform over the other n-1 values
  };
  bool touched = false;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (coin(rng)) {
      redraw(i);
      touched = true;
    }
  if (!touched) {
    std::uniform_int_distribution<std::size_t> any(0, out.size() - 1);
    redraw(any(rng));
  }
  return out;
}

// Self-attention over tuple tokens re_i = r_i ; e_i, then attention pooling
// with a learned query.
struct ContextEncoder {
  nk::MultiHeadAttention attn;
  Tensor query;

  template <class Rng>
  static ContextEncoder init(std::size_t d, std::size_t heads, Rng& rng) {
    ContextEncoder e;
    e.attn = nk::MultiHeadAttention::init(2 * d, heads, rng);
    const double a = 1.0 / std::sqrt(static_cast<double>(2 * d));
    e.query = Tensor::uniform({2 * d}, -a, a, rng, true);
    return e;
  }
  void append_to(nk::NamedTensors& out, const std::string& prefix) const {
    attn.append_to(out, prefix + "attn-");
    out.emplace_back(prefix + "query", query);
  }
};

struct ContextEmbedding {
  Tensor c;      // [2d]
  Tensor alpha;  // [n], pooling weights
};

inline Tensor context_tokens(const Context& ctx, const Tensor& entities, const Tensor& relations) {
  return nk::concat({nk::gather(relations, ctx.relations), nk::gather(entities, ctx.entities)});
}

inline ContextEmbedding encode_context(const Context& ctx, const Tensor& entities, const Tensor& relations,
                                       const ContextEncoder& enc) {
  if (ctx.empty()) throw ContractError("encode_context: empty context (skip the contrastive term)");
  const Tensor x = context_tokens(ctx, entities, relations);
  const std::size_t n = x.rows(), w = x.cols();
  if (w != enc.query.size()) throw ShapeError("encode_context: token width does not match the encoder");
  Tensor o = nk::add(x, enc.attn.forward(x));
  Tensor logits = nk::reshape(nk::linear(o, nk::reshape(enc.query, {1, w})), {n});
  Tensor alpha = nk::softmax(nk::scale(logits, 1.0 / std::sqrt(static_cast<double>(w))));
  Tensor c = nk::reshape(nk::matmul(nk::reshape(alpha, {1, n}), x), {w});
  return {c, alpha};
}

// -log softmax_0 over [sim(a, c_true), sim(a, c_false_1..N)] / tau, cosine sim.
inline Tensor contrastive_loss(const Tensor& anchor, const Tensor& true_c, const std::vector<Tensor>& false_cs,
                               double tau) {
  if (!(tau > 0.0)) throw ContractError("contrastive_loss: temperature must be positive, got " + std::to_string(tau));
  if (false_cs.empty()) throw ContractError("contrastive_loss: needs at least one false context");
  std::vector<Tensor> sims{nk::cosine(anchor, true_c)};
  for (const auto& f : false_cs) sims.push_back(nk::cosine(anchor, f));
  Tensor lsm = nk::log_softmax(nk::scale(nk::stack(sims), 1.0 / tau));
  return nk::scale(nk::sum(nk::slice_cols(lsm, 0, 1)), -1.0);
}

inline Tensor combined_objective(const Tensor& task_loss, const std::optional<Tensor>& contrast_loss, double lambda) {
  if (!contrast_loss) return task_loss;
  return nk::add(task_loss, nk::scale(*contrast_loss, lambda));
}

}  // namespace transnet::contrast
