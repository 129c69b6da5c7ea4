#pragma once

#include <algorithm>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "transnet/kgdata/graph.hpp"
#include "transnet/numkit/adam.hpp"
#include "transnet/numkit/init.hpp"
#include "transnet/numkit/tensor.hpp"

namespace transnet::taskgraph {

namespace nk = numkit;
using kgdata::KnowledgeGraph;
using kgdata::Triple;
using nk::Tensor;

// Line graph over a set of triple occurrences. The first `roots` edges are the
// ones a task is represented by; the rest are context reached from them.
struct EdgeGraph {
  std::vector<std::size_t> relations;
  std::vector<std::vector<std::size_t>> neighbors;
  std::size_t roots = 0;

  std::size_t size() const { return relations.size(); }
};

// Whole-graph line graph with every edge a root.
inline EdgeGraph full_edge_graph(std::span<const Triple> triples, std::size_t num_entities) {
  EdgeGraph g;
  for (const auto& t : triples) g.relations.push_back(t.relation);
  g.neighbors = kgdata::build_edge_neighbors(triples, num_entities);
  g.roots = triples.size();
  return g;
}

// Support edges placed into the background graph, expanded `depth` hops over
// shared endpoints. Edges closer than `depth` get their neighbor lists; the
// outermost ring gets none, since its deeper states never reach the roots.
// With fanout 0 the root states equal a whole-graph computation; otherwise each
// expansion keeps a random `fanout`-subset of the neighbors.
template <class Rng>
EdgeGraph support_ball(const KnowledgeGraph& background, std::span<const Triple> support, std::size_t depth,
                       std::size_t fanout, Rng& rng) {
  EdgeGraph g;
  std::vector<Triple> edges(support.begin(), support.end());
  std::unordered_map<std::size_t, std::size_t> local_of_bg;
  std::unordered_map<std::size_t, std::vector<std::size_t>> support_at;
  for (std::size_t i = 0; i < support.size(); ++i) {
    support_at[support[i].head].push_back(i);
    if (support[i].tail != support[i].head) support_at[support[i].tail].push_back(i);
  }
  std::vector<long long> bg_index(support.size(), -1);

  g.roots = support.size();
  g.neighbors.resize(support.size());
  std::vector<std::size_t> frontier(support.size());
  for (std::size_t i = 0; i < frontier.size(); ++i) frontier[i] = i;

  // candidates are encoded as bg index (>= 0) or ~local support id (< 0)
  for (std::size_t hop = 0; hop < depth && !frontier.empty(); ++hop) {
    std::vector<std::size_t> next;
    for (auto x : frontier) {
      const Triple t = edges[x];
      std::vector<long long> cand;
      for (auto e : {t.head, t.tail}) {
        if (e < background.num_entities())
          for (auto bi : background.incident(e))
            if (static_cast<long long>(bi) != bg_index[x]) cand.push_back(static_cast<long long>(bi));
        if (auto it = support_at.find(e); it != support_at.end())
          for (auto s : it->second)
            if (s != x) cand.push_back(~static_cast<long long>(s));
        if (t.head == t.tail) break;
      }
      std::sort(cand.begin(), cand.end());
      cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
      if (fanout != 0 && cand.size() > fanout) {
        std::vector<long long> kept;
        std::sample(cand.begin(), cand.end(), std::back_inserter(kept), fanout, rng);
        cand = std::move(kept);
      }
      std::vector<std::size_t> nb;
      for (auto c : cand) {
        std::size_t local;
        if (c < 0) {
          local = static_cast<std::size_t>(~c);
        } else if (auto it = local_of_bg.find(static_cast<std::size_t>(c)); it != local_of_bg.end()) {
          local = it->second;
        } else {
          local = edges.size();
          local_of_bg.emplace(static_cast<std::size_t>(c), local);
          edges.push_back(background.triple(static_cast<std::size_t>(c)));
          bg_index.push_back(c);
          g.neighbors.emplace_back();
          next.push_back(local);
        }
        nb.push_back(local);
      }
      std::sort(nb.begin(), nb.end());
      g.neighbors[x] = std::move(nb);
    }
    frontier = std::move(next);
  }
  for (const auto& e : edges) g.relations.push_back(e.relation);
  return g;
}

// Message A(s, s') = A_self s + A_nbr s' + a over the concatenation [s ; s'];
// update U(s, m) = tanh(U [s ; m] + u).
struct MpParams {
  Tensor msg_self, msg_nbr, msg_bias, upd, upd_bias;

  template <class Rng>
  static MpParams init(std::size_t d, Rng& rng) {
    return {nk::glorot(d, d, rng), nk::glorot(d, d, rng), nk::zeros_param({d}), nk::glorot(d, 2 * d, rng),
            nk::zeros_param({d})};
  }
  void append_to(nk::NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + "msg-self", msg_self);
    out.emplace_back(prefix + "msg-nbr", msg_nbr);
    out.emplace_back(prefix + "msg-bias", msg_bias);
    out.emplace_back(prefix + "upd", upd);
    out.emplace_back(prefix + "upd-bias", upd_bias);
  }
};

// States for every edge at depths 0..M. Summing A over the neighbors splits
// into deg(e) * (A_self s_e + a) + A_nbr * sum of neighbor states.
inline std::vector<Tensor> relational_mp_forward(const EdgeGraph& g, const Tensor& relation_table,
                                                 const MpParams& p, std::size_t depth) {
  for (auto r : g.relations) {
    if (r >= relation_table.rows()) {
      throw ContractError("relational_mp_forward: relation " + std::to_string(r) + " has no embedding row");
    }
  }
  std::vector<double> deg(g.size());
  for (std::size_t e = 0; e < g.size(); ++e) deg[e] = static_cast<double>(g.neighbors[e].size());
  const Tensor degree = Tensor::vector(deg);

  std::vector<Tensor> states;
  states.push_back(nk::gather(relation_table, g.relations));
  for (std::size_t m = 0; m < depth; ++m) {
    const Tensor& s = states.back();
    Tensor self = nk::scale_rows(nk::linear(s, p.msg_self, p.msg_bias), degree);
    Tensor msg = nk::add(self, nk::linear(nk::segment_sum(s, g.neighbors), p.msg_nbr));
    states.push_back(nk::tanh(nk::linear(nk::concat({s, msg}), p.upd, p.upd_bias)));
  }
  return states;
}

struct TaskRepr {
  std::size_t relation = 0;
  // layers[m] holds the depth-m states of the task's own edges, one row each.
  std::vector<Tensor> layers;
  // Mean over depths and edges.
  Tensor pooled;

  std::size_t depth() const { return layers.size() - 1; }
  std::size_t edges() const { return layers.front().rows(); }
  std::size_t dim() const { return layers.front().cols(); }
};

inline TaskRepr task_repr_from_states(std::size_t relation, const std::vector<Tensor>& states, std::size_t roots) {
  if (roots == 0) throw ContractError("task representation needs at least one edge");
  std::vector<std::size_t> ids(roots);
  for (std::size_t i = 0; i < roots; ++i) ids[i] = i;
  TaskRepr t;
  t.relation = relation;
  Tensor acc;
  for (std::size_t m = 0; m < states.size(); ++m) {
    t.layers.push_back(nk::gather(states[m], ids));
    Tensor s = nk::sum(t.layers.back(), 0);
    acc = m == 0 ? s : nk::add(acc, s);
  }
  t.pooled = nk::scale(acc, 1.0 / static_cast<double>(roots * states.size()));
  return t;
}

template <class Rng>
TaskRepr build_task_repr(const KnowledgeGraph& background, std::size_t relation, std::span<const Triple> support,
                         const Tensor& relation_table, const MpParams& p, std::size_t depth, std::size_t fanout,
                         Rng& rng) {
  const EdgeGraph g = support_ball(background, support, depth, fanout, rng);
  return task_repr_from_states(relation, relational_mp_forward(g, relation_table, p, depth), g.roots);
}

// W = V^T V, so f^T W f' = (V f) . (V f').
struct SimilarityHead {
  Tensor v;

  template <class Rng>
  static SimilarityHead init(std::size_t d, Rng& rng) {
    return {nk::glorot(d, d, rng)};
  }
  Tensor w() const { return nk::matmul(nk::transpose(v), v); }
  void append_to(nk::NamedTensors& out, const std::string& prefix) const { out.emplace_back(prefix + "v", v); }
};

// (1/nn') sum_m sum_e sum_e' f_m(e)^T W f_m(e'). The double sum factors into
// a dot product of per-depth sums.
inline Tensor kernel_preactivation(const TaskRepr& a, const TaskRepr& b, const SimilarityHead& head) {
  if (a.layers.size() != b.layers.size()) throw ContractError("task_kernel: depth mismatch");
  if (a.dim() != b.dim() || a.dim() != head.v.cols()) throw ContractError("task_kernel: state width mismatch");
  Tensor acc;
  for (std::size_t m = 0; m < a.layers.size(); ++m) {
    Tensor x = nk::sum(nk::linear(a.layers[m], head.v), 0);
    Tensor y = nk::sum(nk::linear(b.layers[m], head.v), 0);
    Tensor d = nk::dot(x, y);
    acc = m == 0 ? d : nk::add(acc, d);
  }
  return nk::scale(acc, 1.0 / static_cast<double>(a.edges() * b.edges()));
}

inline Tensor task_kernel(const TaskRepr& a, const TaskRepr& b, const SimilarityHead& head) {
  return nk::sigmoid(kernel_preactivation(a, b, head));
}

// Attention over a pool of other tasks using the bilinear form on pooled
// summaries; returns weights summing to one.
inline Tensor pooled_attention(const Tensor& target, const std::vector<Tensor>& pool, const SimilarityHead& head) {
  if (pool.empty()) throw ContractError("task_attention: empty task pool");
  const std::size_t d = target.size();
  Tensor q = nk::reshape(nk::linear(target, head.v), {1, d});
  Tensor keys = nk::linear(nk::stack(pool), head.v);
  return nk::softmax(nk::reshape(nk::linear(keys, q), {pool.size()}));
}

inline Tensor task_attention(const TaskRepr& target, const std::vector<const TaskRepr*>& pool,
                             const SimilarityHead& head) {
  std::vector<Tensor> pooled;
  for (const auto* t : pool) {
    if (t->relation == target.relation) throw ContractError("task_attention: pool contains the target task");
    pooled.push_back(t->pooled);
  }
  return pooled_attention(target.pooled, pooled, head);
}

}  // namespace transnet::taskgraph
