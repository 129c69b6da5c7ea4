#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "transnet/evalkit/ranking.hpp"
#include "transnet/metatrain/model.hpp"

namespace transnet::evalkit {

namespace nk = numkit;
namespace mt = metatrain;
using kgdata::DatasetBundle;
using kgdata::Split;
using nk::Tensor;

// Scores (h, r, c) for every candidate c of one adapted relation. Candidate
// projections are computed once.
class RelationScorer {
 public:
  RelationScorer(const mt::Model& m, const mt::Adapted& a, std::vector<std::size_t> candidates)
      : model_(&m), adapted_(&a), candidates_(std::move(candidates)) {
    if (candidates_.empty()) throw EvaluationError("relation has no candidate entities");
    tails_ = scorer::project(nk::gather(m.entities, candidates_), a.entity_projection(m, candidates_), a.relation_proj,
                             m.bank);
    for (std::size_t i = 0; i < candidates_.size(); ++i) index_[candidates_[i]] = i;
  }

  const std::vector<std::size_t>& candidates() const { return candidates_; }

  std::optional<std::size_t> index_of(std::size_t entity) const {
    auto it = index_.find(entity);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<double> scores(std::size_t head) const {
    const std::vector<std::size_t> h{head};
    Tensor hh = scorer::project(nk::gather(model_->entities, h), adapted_->entity_projection(*model_, h),
                                adapted_->relation_proj, model_->bank);
    const std::size_t d = hh.cols();
    std::vector<double> base(d), out(candidates_.size());
    for (std::size_t c = 0; c < d; ++c) base[c] = hh.at(c) + adapted_->relation.at(c);
    const auto& t = tails_.values();
    for (std::size_t i = 0; i < candidates_.size(); ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = base[c] - t[i * d + c];
        s += diff * diff;
      }
      out[i] = s;
    }
    return out;
  }

 private:
  const mt::Model* model_;
  const mt::Adapted* adapted_;
  std::vector<std::size_t> candidates_;
  Tensor tails_;
  std::map<std::size_t, std::size_t> index_;
};

// Filtered protocol unless `raw`: other candidates forming a known triple
// (h, r, c) are dropped before ranking.
inline RankResult rank_query(const RelationScorer& scorer, const Triple& query, const kgdata::TripleSet& known,
                             bool raw = false) {
  const auto truth = scorer.index_of(query.tail);
  if (!truth) throw EvaluationError("true tail is not among the candidates of relation " + std::to_string(query.relation));
  const auto scores = scorer.scores(query.head);
  std::vector<char> removed(scores.size(), 0);
  if (!raw) {
    const auto& cands = scorer.candidates();
    for (std::size_t i = 0; i < cands.size(); ++i)
      removed[i] = i != *truth && known.contains({query.head, query.relation, cands[i]});
  }
  RankResult r = tie_rank(scores, *truth, removed);
  r.query = query;
  return r;
}

struct MetricsReport {
  std::string split;
  Metrics overall;
  std::map<std::string, Metrics> per_relation;
  RandomBaseline baseline;
  std::vector<RankResult> results;
};

struct EvalOptions {
  bool raw = false;
  bool transfer = false;
  std::size_t workers = 1;  // relations evaluated concurrently; results do not depend on it
};

namespace detail {

inline std::mt19937_64 eval_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{seed, stream, std::uint64_t{0x65766131}};
  return std::mt19937_64(seq);
}

// Runs f(i) for i < n on up to `workers` threads. The first exception wins.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F f) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

// Support sets are the first K triples of each relation in sorted order; every
// other triple is a query. Each relation draws from its own rng stream, so the
// report does not depend on evaluation order. Metrics are averaged per query.
inline MetricsReport evaluate_split(const mt::Model& m, const DatasetBundle& bundle, Split split,
                                    const mt::TrainConfig& cfg, const EvalOptions& opt = {}) {
  const auto rels = bundle.task_relations(split);
  if (rels.empty()) throw EvaluationError(std::string("split '") + kgdata::split_name(split) + "' has no relations");

  std::vector<mt::TaskSummary> pool;
  if (opt.transfer) {
    const auto train = bundle.task_relations(Split::train);
    std::vector<std::optional<mt::TaskSummary>> got(train.size());
    detail::parallel_for(train.size(), opt.workers, [&](std::size_t i) {
      auto rng = detail::eval_rng(cfg.seed, train[i] + 1);
      const auto ep = kgdata::evaluation_episode(bundle, train[i], cfg.shots, rng);
      got[i] = mt::summarize(m, bundle, ep, cfg, true, rng);
    });
    for (auto& g : got) pool.push_back(std::move(*g));
  }

  std::vector<std::vector<RankResult>> per(rels.size());
  detail::parallel_for(rels.size(), opt.workers, [&](std::size_t i) {
    const auto rel = rels[i];
    auto rng = detail::eval_rng(cfg.seed, rel + 1);
    const auto ep = kgdata::evaluation_episode(bundle, rel, cfg.shots, rng);
    const auto s = mt::summarize(m, bundle, ep, cfg, opt.transfer, rng);
    const Tensor merged = mt::merged_relation(m, s, opt.transfer ? &pool : nullptr);
    const mt::Adapted a = mt::adapt(m, ep, s, merged, cfg);
    RelationScorer scorer(m, a, ep.candidates);
    for (const auto& q : ep.query) per[i].push_back(rank_query(scorer, {q.head, rel, q.tail}, bundle.known, opt.raw));
  });

  MetricsReport report;
  report.split = kgdata::split_name(split);
  for (std::size_t i = 0; i < rels.size(); ++i) {
    report.per_relation[bundle.relations.name(rels[i])] = aggregate(per[i]);
    report.results.insert(report.results.end(), per[i].begin(), per[i].end());
  }
  report.overall = aggregate(report.results);
  report.baseline = random_baseline(report.results);
  return report;
}

}  // namespace transnet::evalkit
