#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "transnet/kgdata/graph.hpp"

namespace transnet::taskgraph {

using kgdata::EdgeNeighborIndex;
using kgdata::KnowledgeGraph;
using kgdata::Triple;

// labels[m][e] is the depth-m WL label of triple occurrence e. Label ids are
// dense per depth and assigned in first-seen order, so they are reproducible.
struct WlLabels {
  std::vector<std::vector<std::size_t>> labels;

  std::size_t depth() const { return labels.empty() ? 0 : labels.size() - 1; }
  std::size_t at(std::size_t m, std::size_t edge) const { return labels.at(m).at(edge); }
  std::size_t distinct(std::size_t m) const {
    const auto& l = labels.at(m);
    return l.empty() ? 0 : *std::max_element(l.begin(), l.end()) + 1;
  }
};

inline WlLabels wl_edge_labels(std::span<const Triple> triples, const EdgeNeighborIndex& neighbors, std::size_t depth) {
  if (neighbors.size() != triples.size()) throw ContractError("wl_edge_labels: neighbor index does not match triples");
  WlLabels out;
  out.labels.resize(depth + 1);

  // depth 0: relation type, relabeled densely
  {
    std::map<std::size_t, std::size_t> canon;
    auto& l0 = out.labels[0];
    l0.reserve(triples.size());
    for (const auto& t : triples) l0.push_back(canon.try_emplace(t.relation, canon.size()).first->second);
  }
  for (std::size_t m = 1; m <= depth; ++m) {
    const auto& prev = out.labels[m - 1];
    std::map<std::pair<std::size_t, std::vector<std::size_t>>, std::size_t> canon;
    auto& cur = out.labels[m];
    cur.reserve(triples.size());
    for (std::size_t e = 0; e < triples.size(); ++e) {
      std::vector<std::size_t> multiset;
      multiset.reserve(neighbors[e].size());
      for (auto n : neighbors[e]) multiset.push_back(prev[n]);
      std::sort(multiset.begin(), multiset.end());
      auto key = std::make_pair(prev[e], std::move(multiset));
      cur.push_back(canon.try_emplace(std::move(key), canon.size()).first->second);
    }
  }
  return out;
}

inline WlLabels wl_edge_labels(const KnowledgeGraph& graph, std::size_t depth) {
  return wl_edge_labels(graph.triples(), graph.edge_neighbors(), depth);
}

// (1/nn') sum_m sum_{e in S} sum_{e' in S'} [label_m(e) == label_m(e')].
// Counting labels per depth keeps this O((n + n') M) instead of the triple loop.
inline double wl_set_kernel(std::span<const std::size_t> s, std::span<const std::size_t> s2, const WlLabels& labels,
                            std::size_t depth) {
  if (s.empty() || s2.empty()) throw ContractError("wl_set_kernel: both edge sets must be non-empty");
  if (depth > labels.depth()) throw ContractError("wl_set_kernel: labels computed only to depth " +
                                                  std::to_string(labels.depth()));
  double total = 0.0;
  for (std::size_t m = 0; m <= depth; ++m) {
    std::map<std::size_t, std::size_t> count;
    for (auto e : s) ++count[labels.at(m, e)];
    std::size_t matches = 0;
    for (auto e : s2)
      if (auto it = count.find(labels.at(m, e)); it != count.end()) matches += it->second;
    total += static_cast<double>(matches);
  }
  return total / (static_cast<double>(s.size()) * static_cast<double>(s2.size()));
}

}  // namespace transnet::taskgraph
