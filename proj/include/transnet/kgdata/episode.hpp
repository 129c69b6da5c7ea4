#pragma once

#include <algorithm>
#include <random>
#include <utility>
#include <vector>

#include "transnet/kgdata/dataset.hpp"

namespace transnet::kgdata {

using Rng = std::mt19937_64;

struct EntityPair {
  std::size_t head = 0;
  std::size_t tail = 0;

  auto operator<=>(const EntityPair&) const = default;
};

// One few-shot task instance for a target relation.
struct Episode {
  std::size_t relation = 0;
  std::vector<EntityPair> support;
  std::vector<EntityPair> query;
  // One corrupted tail per support / query pair, aligned by index.
  std::vector<std::size_t> support_negatives;
  std::vector<std::size_t> query_negatives;
  std::vector<std::size_t> candidates;
};

// Uniform draw from the candidate list excluding tails that would form a
// known triple (h, r, t').
inline std::size_t sample_negative(const DatasetBundle& bundle, std::size_t relation, std::size_t head,
                                   const std::vector<std::size_t>& candidates, Rng& rng) {
  if (candidates.empty()) throw EpisodeError("empty candidate list for relation " + std::to_string(relation));
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  for (int attempt = 0; attempt < 32; ++attempt) {
    const auto t = candidates[pick(rng)];
    if (!bundle.is_known({head, relation, t})) return t;
  }
  std::vector<std::size_t> valid;
  for (auto t : candidates)
    if (!bundle.is_known({head, relation, t})) valid.push_back(t);
  if (valid.empty()) {
    throw EpisodeError("no valid negative for head " + bundle.entities.name(head) + " under relation " +
                       bundle.relations.name(relation));
  }
  std::uniform_int_distribution<std::size_t> pick_valid(0, valid.size() - 1);
  return valid[pick_valid(rng)];
}

// Draws K support pairs and up to `query_size` query pairs (0 = all remaining)
// from a shuffled copy of the relation's task triples.
inline Episode sample_episode(const DatasetBundle& bundle, std::size_t relation, std::size_t shots, Rng& rng,
                              std::size_t query_size = 10) {
  const auto& triples = bundle.task_triples(relation);
  if (shots == 0) throw EpisodeError("episodes need at least one support pair");
  if (triples.size() < shots + 1) {
    throw EpisodeError("relation " + bundle.relations.name(relation) + " has " + std::to_string(triples.size()) +
                       " triples; needs at least " + std::to_string(shots + 1));
  }
  std::vector<std::size_t> order(triples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);

  Episode ep;
  ep.relation = relation;
  ep.candidates = bundle.candidates_of(relation);
  const std::size_t available = triples.size() - shots;
  const std::size_t nq = query_size == 0 ? available : std::min(query_size, available);
  for (std::size_t i = 0; i < shots; ++i) ep.support.push_back({triples[order[i]].head, triples[order[i]].tail});
  for (std::size_t i = 0; i < nq; ++i) ep.query.push_back({triples[order[shots + i]].head, triples[order[shots + i]].tail});
  for (const auto& p : ep.support) ep.support_negatives.push_back(sample_negative(bundle, relation, p.head, ep.candidates, rng));
  for (const auto& p : ep.query) ep.query_negatives.push_back(sample_negative(bundle, relation, p.head, ep.candidates, rng));
  return ep;
}

// Evaluation split of a relation: the first K triples in sorted order support,
// the rest are queries. Support negatives come from `rng`.
inline Episode evaluation_episode(const DatasetBundle& bundle, std::size_t relation, std::size_t shots, Rng& rng) {
  auto triples = bundle.task_triples(relation);
  if (triples.size() < shots + 1) {
    throw EpisodeError("relation " + bundle.relations.name(relation) + " has too few triples for " +
                       std::to_string(shots) + "-shot evaluation");
  }
  std::sort(triples.begin(), triples.end());
  Episode ep;
  ep.relation = relation;
  ep.candidates = bundle.candidates_of(relation);
  for (std::size_t i = 0; i < triples.size(); ++i) {
    (i < shots ? ep.support : ep.query).push_back({triples[i].head, triples[i].tail});
  }
  for (const auto& p : ep.support) ep.support_negatives.push_back(sample_negative(bundle, relation, p.head, ep.candidates, rng));
  return ep;
}

}  // namespace transnet::kgdata
