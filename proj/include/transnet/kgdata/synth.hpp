#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "transnet/kgdata/dataset.hpp"
#include "transnet/kgdata/episode.hpp"

namespace transnet::kgdata {

// Generator for compositional few-shot bundles. Entities live at latent points
// and every relation maps a head to the nearest tail-type entity of
// (head + translation). Task relations in one group share a latent
// translation (up to jitter), head/tail types and a core of head entities, so
// knowledge transfers within a group and not across groups. Each group also
// owns `signature_relations` background relations attached to its core heads,
// so related tasks look alike in their surrounding graph structure.
struct SynthSpec {
  std::size_t entities = 200;
  std::size_t relations = 12;  // task relations
  std::size_t triples_per_relation = 60;
  std::size_t groups = 3;
  double overlap = 0.7;  // fraction of head entities shared inside a group
  std::size_t entity_types = 2;
  std::size_t background_relations = 10;
  std::size_t signature_relations = 1;  // per group
  std::size_t latent_dim = 3;
  double translation_scale = 0.35;
  double relation_jitter = 0.05;
  double tail_noise = 0.05;  // probability of a uniformly random tail
  std::size_t valid_per_group = 1;
  std::size_t test_per_group = 1;
};

namespace detail {

inline std::string padded(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

}  // namespace detail

inline void validate(const SynthSpec& s) {
  auto fail = [](const std::string& m) { throw SpecError("synthetic spec: " + m); };
  if (s.entity_types == 0 || s.entities < 2 * s.entity_types) fail("need at least two entities per type");
  if (s.groups == 0 || s.relations < s.groups) fail("need at least one relation per group");
  if (s.overlap < 0.0 || s.overlap > 1.0) fail("overlap must lie in [0,1]");
  if (s.tail_noise < 0.0 || s.tail_noise > 1.0) fail("tail_noise must lie in [0,1]");
  if (s.latent_dim == 0) fail("latent_dim must be positive");
  const std::size_t per_type = s.entities / s.entity_types;
  if (s.triples_per_relation > per_type) {
    fail("triples per relation (" + std::to_string(s.triples_per_relation) + ") exceeds the " +
         std::to_string(per_type) + " head entities available per type");
  }
  if (s.triples_per_relation < 2) fail("triples per relation must be at least 2");
  const std::size_t smallest_group = s.relations / s.groups;
  if (smallest_group <= s.valid_per_group + s.test_per_group) {
    fail("each group needs more relations than valid_per_group + test_per_group");
  }
}

inline DatasetBundle synth_generate(const SynthSpec& spec, Rng& rng) {
  validate(spec);
  const std::size_t L = spec.latent_dim;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  DatasetBundle b;
  for (std::size_t e = 0; e < spec.entities; ++e) b.entities.intern(detail::padded("ent", e, 4));

  std::vector<double> z(spec.entities * L);
  for (auto& v : z) v = unit(rng);
  std::vector<std::size_t> perm(spec.entities);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> by_type(spec.entity_types);
  for (std::size_t i = 0; i < perm.size(); ++i) by_type[i % spec.entity_types].push_back(perm[i]);
  for (auto& t : by_type) std::sort(t.begin(), t.end());

  auto random_translation = [&](double scale) {
    std::vector<double> v(L);
    for (auto& x : v) x = scale * normal(rng);
    return v;
  };
  auto nearest_tail = [&](std::size_t h, const std::vector<double>& v, const std::vector<std::size_t>& pool) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = pool.front();
    for (auto e : pool) {
      if (e == h) continue;
      double d = 0.0;
      for (std::size_t k = 0; k < L; ++k) {
        const double diff = z[h * L + k] + v[k] - z[e * L + k];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        arg = e;
      }
    }
    return arg;
  };
  std::uniform_int_distribution<std::size_t> type_pick(0, spec.entity_types - 1);

  std::vector<Triple> background;
  for (std::size_t r = 0; r < spec.background_relations; ++r) {
    const auto rid = b.relations.intern(detail::padded("bg", r, 2));
    const auto ht = type_pick(rng), tt = type_pick(rng);
    const auto v = random_translation(spec.translation_scale);
    for (auto h : by_type[ht]) background.push_back({h, rid, nearest_tail(h, v, by_type[tt])});
  }

  const std::size_t n = spec.triples_per_relation;
  const auto core_size = static_cast<std::size_t>(std::ceil(spec.overlap * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> group_ht(spec.groups), group_tt(spec.groups);
  std::vector<std::vector<double>> group_v(spec.groups);
  std::vector<std::vector<std::size_t>> group_core(spec.groups);
  for (std::size_t g = 0; g < spec.groups; ++g) {
    group_ht[g] = type_pick(rng);
    group_tt[g] = type_pick(rng);
    group_v[g] = random_translation(spec.translation_scale);
    auto pool = by_type[group_ht[g]];
    std::shuffle(pool.begin(), pool.end(), rng);
    group_core[g].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(core_size));
  }

  for (std::size_t g = 0; g < spec.groups; ++g)
    for (std::size_t k = 0; k < spec.signature_relations; ++k) {
      const auto rid = b.relations.intern("sig" + std::to_string(g) + "_" + std::to_string(k));
      const auto tt = type_pick(rng);
      const auto v = random_translation(spec.translation_scale);
      auto core = group_core[g];
      std::sort(core.begin(), core.end());
      for (auto h : core) background.push_back({h, rid, nearest_tail(h, v, by_type[tt])});
    }

  std::vector<std::vector<std::size_t>> members(spec.groups);
  for (std::size_t r = 0; r < spec.relations; ++r) members[r % spec.groups].push_back(r);

  std::bernoulli_distribution noisy(spec.tail_noise);
  for (std::size_t r = 0; r < spec.relations; ++r) {
    const std::size_t g = r % spec.groups;
    const auto rid = b.relations.intern(detail::padded("task", r, 2));
    b.groups[rid] = g;
    auto v = group_v[g];
    for (auto& x : v) x += spec.relation_jitter * normal(rng);

    std::vector<std::size_t> heads = group_core[g];
    auto sorted_core = group_core[g];
    std::sort(sorted_core.begin(), sorted_core.end());
    std::vector<std::size_t> rest;
    for (auto e : by_type[group_ht[g]])
      if (!std::binary_search(sorted_core.begin(), sorted_core.end(), e)) rest.push_back(e);
    std::shuffle(rest.begin(), rest.end(), rng);
    heads.insert(heads.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n - core_size));

    const auto& tails = by_type[group_tt[g]];
    std::uniform_int_distribution<std::size_t> any_tail(0, tails.size() - 1);
    std::vector<Triple> list;
    for (auto h : heads) {
      std::size_t t = nearest_tail(h, v, tails);
      if (noisy(rng)) {
        do t = tails[any_tail(rng)];
        while (t == h);
      }
      list.push_back({h, rid, t});
    }
    std::sort(list.begin(), list.end());

    const std::size_t pos = static_cast<std::size_t>(
        std::find(members[g].begin(), members[g].end(), r) - members[g].begin());
    const std::size_t size = members[g].size();
    if (pos >= size - spec.test_per_group) b.test_tasks[rid] = std::move(list);
    else if (pos >= size - spec.test_per_group - spec.valid_per_group) b.valid_tasks[rid] = std::move(list);
    else b.train_tasks[rid] = std::move(list);
    b.candidates[rid] = tails;
  }

  b.background = KnowledgeGraph(spec.entities, std::move(background));
  for (const auto& t : b.background.triples()) b.known.insert(t);
  for (auto* m : {&b.train_tasks, &b.valid_tasks, &b.test_tasks})
    for (const auto& [_, v] : *m)
      for (const auto& t : v) b.known.insert(t);
  return b;
}

inline DatasetBundle synth_generate(const SynthSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return synth_generate(spec, rng);
}

}  // namespace transnet::kgdata
