#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "transnet/numkit/errors.hpp"

namespace transnet::kgdata {

struct Triple {
  std::size_t head = 0;
  std::size_t relation = 0;
  std::size_t tail = 0;

  auto operator<=>(const Triple&) const = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    std::size_t h = t.head * 0x9E3779B97F4A7C15ULL;
    h ^= t.relation + 0x7F4A7C159E3779B9ULL + (h << 6) + (h >> 2);
    h ^= t.tail + 0x94D049BB133111EBULL + (h << 6) + (h >> 2);
    return h;
  }
};

using TripleSet = std::unordered_set<Triple, TripleHash>;

// Name <-> dense id mapping; ids are assigned in insertion order.
class Vocabulary {
 public:
  std::size_t intern(const std::string& name) {
    auto [it, inserted] = ids_.try_emplace(name, names_.size());
    if (inserted) names_.push_back(name);
    return it->second;
  }
  std::optional<std::size_t> find(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t id(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end()) throw FormatError("unknown name '" + name + "'");
    return it->second;
  }
  const std::string& name(std::size_t id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const Vocabulary& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> ids_;
};

// N(e) for every triple occurrence: the other occurrences sharing at least one
// endpoint, each listed once, in ascending order.
using EdgeNeighborIndex = std::vector<std::vector<std::size_t>>;

inline EdgeNeighborIndex build_edge_neighbors(std::span<const Triple> triples, std::size_t num_entities) {
  std::vector<std::vector<std::size_t>> incident(num_entities);
  for (std::size_t i = 0; i < triples.size(); ++i) {
    const auto& t = triples[i];
    if (t.head >= num_entities || t.tail >= num_entities) throw FormatError("triple endpoint out of range");
    incident[t.head].push_back(i);
    if (t.tail != t.head) incident[t.tail].push_back(i);
  }
  EdgeNeighborIndex out(triples.size());
  for (std::size_t i = 0; i < triples.size(); ++i) {
    auto& n = out[i];
    for (std::size_t j : incident[triples[i].head])
      if (j != i) n.push_back(j);
    if (triples[i].tail != triples[i].head)
      for (std::size_t j : incident[triples[i].tail])
        if (j != i) n.push_back(j);
    std::sort(n.begin(), n.end());
    n.erase(std::unique(n.begin(), n.end()), n.end());
  }
  return out;
}

// Triple store with per-entity incidence lists. Immutable after construction.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  KnowledgeGraph(std::size_t num_entities, std::vector<Triple> triples)
      : num_entities_(num_entities), triples_(std::move(triples)), incident_(num_entities), outgoing_(num_entities) {
    for (std::size_t i = 0; i < triples_.size(); ++i) {
      const auto& t = triples_[i];
      if (t.head >= num_entities_ || t.tail >= num_entities_) throw FormatError("triple endpoint out of range");
      incident_[t.head].push_back(i);
      if (t.tail != t.head) incident_[t.tail].push_back(i);
      outgoing_[t.head].push_back(i);
      members_.insert(t);
    }
  }

  std::size_t num_entities() const { return num_entities_; }
  const std::vector<Triple>& triples() const { return triples_; }
  std::size_t size() const { return triples_.size(); }
  const Triple& triple(std::size_t i) const { return triples_.at(i); }

  // Triple indices touching the entity (as head or tail).
  std::span<const std::size_t> incident(std::size_t entity) const { return incident_.at(entity); }
  // Triple indices with the entity as head.
  std::span<const std::size_t> outgoing(std::size_t entity) const { return outgoing_.at(entity); }
  bool contains(const Triple& t) const { return members_.contains(t); }

  const EdgeNeighborIndex& edge_neighbors() const {
    if (!neighbors_) neighbors_ = build_edge_neighbors(triples_, num_entities_);
    return *neighbors_;
  }

 private:
  std::size_t num_entities_ = 0;
  std::vector<Triple> triples_;
  std::vector<std::vector<std::size_t>> incident_;
  std::vector<std::vector<std::size_t>> outgoing_;
  TripleSet members_;
  mutable std::optional<EdgeNeighborIndex> neighbors_;
};

}  // namespace transnet::kgdata
