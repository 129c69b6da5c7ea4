#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "transnet/kgdata/graph.hpp"
#include "transnet/numkit/errors.hpp"

namespace transnet::evalkit {

using kgdata::Triple;

struct RankResult {
  Triple query;
  std::size_t rank = 0;        // 1-based
  std::size_t candidates = 0;  // after filtering
};

struct Metrics {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits5 = 0.0;
  double hits10 = 0.0;
  std::size_t queries = 0;
};

// Lower score is better. Candidates flagged in `removed` do not compete. The
// true entry sits at the mean position of its tie group, rounded up:
// rank = better + ceil((tied + 1) / 2), `tied` counting the truth itself.
inline RankResult tie_rank(std::span<const double> scores, std::size_t truth, std::span<const char> removed = {}) {
  if (truth >= scores.size()) throw EvaluationError("true candidate index out of range");
  if (!removed.empty() && removed.size() != scores.size()) throw ContractError("tie_rank: mask size mismatch");
  const double s = scores[truth];
  std::size_t better = 0, tied = 1, kept = 1;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (j == truth || (!removed.empty() && removed[j])) continue;
    ++kept;
    if (scores[j] < s) ++better;
    else if (scores[j] == s) ++tied;
  }
  RankResult r;
  r.rank = better + (tied + 2) / 2;
  r.candidates = kept;
  return r;
}

inline Metrics aggregate(std::span<const RankResult> results) {
  if (results.empty()) throw ContractError("aggregate: no ranking results");
  Metrics m;
  for (const auto& r : results) {
    m.mrr += 1.0 / static_cast<double>(r.rank);
    m.hits1 += r.rank <= 1;
    m.hits5 += r.rank <= 5;
    m.hits10 += r.rank <= 10;
  }
  const double n = static_cast<double>(results.size());
  m.mrr /= n;
  m.hits1 /= n;
  m.hits5 /= n;
  m.hits10 /= n;
  m.queries = results.size();
  return m;
}

// E[1/rank] and its standard error when every query's rank is uniform over
// its filtered candidate count: per query H_n / n, variance (sum 1/k^2)/n - (H_n/n)^2.
struct RandomBaseline {
  double mrr = 0.0;
  double sigma = 0.0;
};

inline RandomBaseline random_baseline(std::span<const RankResult> results) {
  if (results.empty()) throw ContractError("random_baseline: no ranking results");
  RandomBaseline b;
  double var = 0.0;
  for (const auto& r : results) {
    double h = 0.0, h2 = 0.0;
    for (std::size_t k = 1; k <= r.candidates; ++k) {
      h += 1.0 / static_cast<double>(k);
      h2 += 1.0 / static_cast<double>(k * k);
    }
    const double n = static_cast<double>(r.candidates), mean = h / n;
    b.mrr += mean;
    var += h2 / n - mean * mean;
  }
  const double q = static_cast<double>(results.size());
  b.mrr /= q;
  b.sigma = std::sqrt(var) / q;
  return b;
}

}  // namespace transnet::evalkit
