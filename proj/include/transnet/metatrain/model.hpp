#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "transnet/contrast/context.hpp"
#include "transnet/kgdata/episode.hpp"
#include "transnet/metatrain/config.hpp"
#include "transnet/metatrain/transe.hpp"
#include "transnet/numkit/adam.hpp"
#include "transnet/numkit/checkpoint.hpp"
#include "transnet/relearner/mrl.hpp"
#include "transnet/scorer/skiptransd.hpp"
#include "transnet/taskgraph/encoder.hpp"

namespace transnet::metatrain {

using kgdata::DatasetBundle;
using kgdata::Episode;
using kgdata::Triple;

struct Model {
  std::size_t dim = 0;
  Tensor entities;   // [entities, d]
  Tensor relations;  // [relations, d]
  scorer::ProjectionBank bank;
  relearner::MrlParams mrl;
  taskgraph::MpParams mp;
  taskgraph::SimilarityHead sim;
  Tensor scale_w;  // step-size weights over task statistics, [6d + 1]
  contrast::ContextEncoder context;

  nk::NamedTensors named() const {
    nk::NamedTensors out{{"entities", entities}, {"relations", relations}};
    bank.append_to(out, "bank-");
    mrl.append_to(out, "mrl-");
    mp.append_to(out, "mp-");
    sim.append_to(out, "sim-");
    out.emplace_back("scale-w", scale_w);
    context.append_to(out, "ctx-");
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named()) out.push_back(t);
    return out;
  }

  // Copies values from `saved` by name; shapes must match.
  void load(const nk::NamedTensors& saved) {
    for (auto& [name, t] : named()) {
      const Tensor* s = nk::find_tensor(saved, name);
      if (s == nullptr) throw FormatError("checkpoint lacks tensor '" + name + "'");
      if (s->shape() != t.shape()) {
        throw FormatError("checkpoint tensor '" + name + "' has shape " + nk::shape_str(s->shape()) + ", model expects " +
                          nk::shape_str(t.shape()));
      }
      std::copy(s->values().begin(), s->values().end(), t.data().begin());
    }
  }
};

namespace detail {

inline Tensor table_from(const kgdata::EmbeddingMatrix& m, std::size_t rows, std::size_t d, std::mt19937_64& rng) {
  const double a = 6.0 / std::sqrt(static_cast<double>(d));
  std::uniform_real_distribution<double> u(-a, a);
  std::vector<double> v(rows * d);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) v[r * d + c] = r < m.rows ? m.values[r * d + c] : u(rng);
  return Tensor({rows, d}, std::move(v), true);
}

// Dense copy of table rows, no tape involvement.
inline Tensor rows_of(const Tensor& table, std::span<const std::size_t> ids, bool requires_grad) {
  const std::size_t d = table.cols();
  std::vector<double> v(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows()) throw ContractError("row id " + std::to_string(ids[i]) + " out of range");
    std::copy_n(table.values().begin() + ids[i] * d, d, v.begin() + i * d);
  }
  return Tensor({ids.size(), d}, std::move(v), requires_grad);
}

inline std::vector<double> grad_or_zero(const Tensor& t) {
  if (t.has_grad()) return {t.grad().begin(), t.grad().end()};
  return std::vector<double>(t.size(), 0.0);
}

inline bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace detail

// Embeddings come from the bundle's pretrained vectors when present, else
// from TransE on the background graph. Projection vectors start as copies of
// the embeddings. `transe_loss` receives the per-epoch pretraining losses.
inline Model init_model(const DatasetBundle& bundle, const TrainConfig& cfg, std::mt19937_64& rng,
                        std::vector<double>* transe_loss = nullptr) {
  cfg.validate();
  const std::size_t d = cfg.dim, n_ent = bundle.entities.size(), n_rel = bundle.relations.size();
  Model m;
  m.dim = d;
  if (bundle.entity_vectors && bundle.relation_vectors) {
    for (const auto* v : {&*bundle.entity_vectors, &*bundle.relation_vectors})
      if (v->dim != d) {
        throw UsageError("pretrained vectors have dimension " + std::to_string(v->dim) + " but dim is " +
                         std::to_string(d));
      }
    m.entities = detail::table_from(*bundle.entity_vectors, n_ent, d, rng);
    m.relations = detail::table_from(*bundle.relation_vectors, n_rel, d, rng);
  } else {
    auto t = pretrain_transe(bundle.background, n_rel, d, cfg.transe_epochs, cfg.margin, cfg.transe_lr, rng);
    if (transe_loss) *transe_loss = t.epoch_loss;
    if (t.entities.rows() < n_ent) {  // entities outside the background graph
      kgdata::EmbeddingMatrix partial{t.entities.rows(), d, t.entities.values()};
      m.entities = detail::table_from(partial, n_ent, d, rng);
    } else {
      m.entities = t.entities.clone(true);
    }
    m.relations = t.relations.clone(true);
    // TransE never saw relations without background triples (the task
    // relations); they start from zero rather than from noise.
    std::vector<char> seen(n_rel, 0);
    for (const auto& tr : bundle.background.triples()) seen[tr.relation] = 1;
    for (std::size_t r = 0; r < n_rel; ++r)
      if (!seen[r] && cfg.transe_epochs > 0)
        for (std::size_t c = 0; c < d; ++c) m.relations.data()[r * d + c] = 0.0;
  }
  m.bank = scorer::ProjectionBank::init(n_ent, n_rel, d, rng);
  m.bank.entity_proj = m.entities.clone(true);
  m.bank.relation_proj = m.relations.clone(true);
  m.mrl = relearner::MrlParams::init(d, rng, cfg.mrl_layers, cfg.heads);
  m.mp = taskgraph::MpParams::init(d, rng);
  m.sim = taskgraph::SimilarityHead::init(d, rng);
  m.scale_w = nk::zeros_param({6 * d + 1});
  m.context = contrast::ContextEncoder::init(d, cfg.heads, rng);
  return m;
}

// psi = mean_k x_k ; var_k x_k ; K  (population variance, per coordinate)
inline Tensor task_stats(const Tensor& x) {
  if (x.rank() != 2 || x.rows() == 0) throw ContractError("task_stats: needs a non-empty [K, w] support encoding");
  Tensor mu = nk::mean(x, 0);
  Tensor centered = nk::add_row(x, nk::scale(mu, -1.0));
  Tensor var = nk::mean(nk::mul(centered, centered), 0);
  return nk::concat({mu, var, Tensor::vector({static_cast<double>(x.rows())})});
}

inline Tensor adaptive_scale(const Tensor& stats, const Tensor& w) {
  if (stats.size() != w.size()) {
    throw ContractError("adaptive_scale: " + std::to_string(stats.size()) + " statistics vs " +
                        std::to_string(w.size()) + " weights");
  }
  return nk::sigmoid(nk::dot(w, stats));
}

inline bool warmup_schedule(std::size_t step, const TrainConfig& cfg) { return step >= cfg.warmup_steps; }

// Relation-specific parameters after (or without) the inner step. Entity
// projections of the support entities carry a delta; everything else reads
// the shared table through the trailing zero row.
struct Adapted {
  Tensor relation;       // R_T
  Tensor relation_proj;  // r_p
  std::optional<Tensor> alpha;
  std::vector<std::size_t> entities;  // sorted
  std::optional<Tensor> proj_delta;   // [entities + 1, d]
  double support_loss = std::numeric_limits<double>::quiet_NaN();  // before the step

  Tensor entity_projection(const Model& m, std::span<const std::size_t> ids) const {
    Tensor base = nk::gather(m.bank.entity_proj, ids);
    if (!proj_delta) return base;
    std::vector<std::size_t> local(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      auto it = std::lower_bound(entities.begin(), entities.end(), ids[i]);
      local[i] = it != entities.end() && *it == ids[i] ? static_cast<std::size_t>(it - entities.begin()) : entities.size();
    }
    return nk::add(base, nk::gather(*proj_delta, local));
  }
};

struct PairBatch {
  std::vector<std::size_t> heads, tails, negatives;
};

inline PairBatch support_pairs(const Episode& ep) {
  PairBatch b;
  for (const auto& p : ep.support) {
    b.heads.push_back(p.head);
    b.tails.push_back(p.tail);
  }
  b.negatives = ep.support_negatives;
  return b;
}

inline PairBatch query_pairs(const Episode& ep) {
  PairBatch b;
  for (const auto& p : ep.query) {
    b.heads.push_back(p.head);
    b.tails.push_back(p.tail);
  }
  b.negatives = ep.query_negatives;
  return b;
}

inline std::vector<Triple> support_triples(const Episode& ep) {
  std::vector<Triple> out;
  for (const auto& p : ep.support) out.push_back({p.head, ep.relation, p.tail});
  return out;
}

// sum_i max(0, s(h_i, t_i) + gamma - s(h_i, n_i)) under the adapted state.
inline Tensor ranking_loss(const Model& m, const PairBatch& b, const Adapted& a, double gamma) {
  if (b.negatives.size() != b.heads.size()) throw ContractError("ranking_loss: one negative per pair required");
  Tensor h = nk::gather(m.entities, b.heads), hp = a.entity_projection(m, b.heads);
  Tensor pos = scorer::score(h, hp, nk::gather(m.entities, b.tails), a.entity_projection(m, b.tails), a.relation,
                             a.relation_proj, m.bank);
  Tensor neg = scorer::score(h, hp, nk::gather(m.entities, b.negatives), a.entity_projection(m, b.negatives),
                             a.relation, a.relation_proj, m.bank);
  return scorer::margin_loss(pos, neg, gamma);
}

inline Adapted unadapted(const Model& m, const Tensor& relation, std::size_t relation_id) {
  Adapted a;
  a.relation = relation;
  a.relation_proj = nk::row(m.bank.relation_proj, relation_id);
  return a;
}

// One first-order gradient step on the support loss:
//   R_T = R - eta * alpha * dL/dR,  same for r_p and the support entities'
//   projection vectors, with alpha = sigmoid(w . psi(support)).
// The gradient is taken on detached copies under its own tape and enters the
// outer graph as a constant; alpha stays differentiable.
inline Adapted inner_adapt(const Model& m, const Episode& ep, const Tensor& relation, const Tensor& support_x,
                           const TrainConfig& cfg) {
  const PairBatch sb = support_pairs(ep);
  Adapted a;
  a.entities = sb.heads;
  a.entities.insert(a.entities.end(), sb.tails.begin(), sb.tails.end());
  a.entities.insert(a.entities.end(), sb.negatives.begin(), sb.negatives.end());
  std::sort(a.entities.begin(), a.entities.end());
  a.entities.erase(std::unique(a.entities.begin(), a.entities.end()), a.entities.end());
  auto local = [&](const std::vector<std::size_t>& ids) {
    std::vector<std::size_t> out;
    for (auto id : ids)
      out.push_back(static_cast<std::size_t>(std::lower_bound(a.entities.begin(), a.entities.end(), id) - a.entities.begin()));
    return out;
  };
  const std::size_t rel = ep.relation, d = m.dim, u = a.entities.size();
  const std::vector<std::size_t> rel_id{rel};

  std::vector<double> g_r, g_rp, g_p;
  {
    nk::Tape inner;
    Tensor r_d = relation.clone(true);
    Tensor rp_d = detail::rows_of(m.bank.relation_proj, rel_id, true);
    Tensor p_d = detail::rows_of(m.bank.entity_proj, a.entities, true);
    Tensor e_d = detail::rows_of(m.entities, a.entities, false);
    scorer::ProjectionBank bank_d;
    bank_d.w1 = m.bank.w1.clone();
    bank_d.b1 = m.bank.b1.clone();
    bank_d.w2 = m.bank.w2.clone();
    bank_d.b2 = m.bank.b2.clone();
    Tensor rp_vec = nk::reshape(rp_d, {d});
    const auto lh = local(sb.heads), lt = local(sb.tails), ln = local(sb.negatives);
    Tensor h = nk::gather(e_d, lh), hp = nk::gather(p_d, lh);
    Tensor pos = scorer::score(h, hp, nk::gather(e_d, lt), nk::gather(p_d, lt), r_d, rp_vec, bank_d);
    Tensor neg = scorer::score(h, hp, nk::gather(e_d, ln), nk::gather(p_d, ln), r_d, rp_vec, bank_d);
    Tensor loss = scorer::margin_loss(pos, neg, cfg.margin);
    a.support_loss = loss.item();
    nk::backward(loss);
    g_r = detail::grad_or_zero(r_d);
    g_rp = detail::grad_or_zero(rp_d);
    g_p = detail::grad_or_zero(p_d);
  }
  if (!std::isfinite(a.support_loss) || !detail::all_finite(g_r) || !detail::all_finite(g_rp) ||
      !detail::all_finite(g_p)) {
    throw NumericError("inner step: non-finite support gradient for relation " + std::to_string(rel));
  }
  g_p.resize((u + 1) * d, 0.0);

  Tensor alpha = adaptive_scale(task_stats(support_x), m.scale_w);
  Tensor step = nk::scale(alpha, -cfg.inner_lr);
  a.alpha = alpha;
  a.relation = nk::add(relation, nk::scale_by(Tensor::vector(std::move(g_r)), step));
  a.relation_proj = nk::add(nk::row(m.bank.relation_proj, rel), nk::scale_by(Tensor::vector(std::move(g_rp)), step));
  a.proj_delta = nk::scale_by(Tensor({u + 1, d}, std::move(g_p)), step);
  return a;
}

// Per-episode pieces shared by training and evaluation.
struct TaskSummary {
  std::size_t relation = 0;
  Tensor support_x;                // [K, 3d]
  Tensor base;                     // R from the support set alone
  std::optional<Tensor> pooled;    // task-graph summary, when transfer is on
};

template <class Rng>
TaskSummary summarize(const Model& m, const DatasetBundle& bundle, const Episode& ep, const TrainConfig& cfg,
                      bool with_graph, Rng& rng) {
  TaskSummary s;
  s.relation = ep.relation;
  s.support_x = relearner::support_encoding(m.entities, m.relations, ep.support, ep.relation);
  s.base = relearner::mrl_forward(s.support_x, m.mrl);
  if (with_graph) {
    const auto sup = support_triples(ep);
    s.pooled = taskgraph::build_task_repr(bundle.background, ep.relation, sup, m.relations, m.mp, cfg.wl_depth,
                                          cfg.mp_fanout, rng)
                   .pooled;
  }
  return s;
}

// merge(R, R'), R' attending over pool members of other relations; with no
// pool (transfer off) or no eligible member R' is zero.
inline Tensor merged_relation(const Model& m, const TaskSummary& self, const std::vector<TaskSummary>* pool) {
  std::vector<Tensor> keys, values;
  if (pool && self.pooled) {
    for (const auto& s : *pool) {
      if (s.relation == self.relation || !s.pooled) continue;
      keys.push_back(*s.pooled);
      values.push_back(s.base);
    }
  }
  Tensor r_prime = keys.empty() ? relearner::transfer_aggregate(Tensor::zeros({0}), {}, m.mrl)
                                : relearner::transfer_aggregate(taskgraph::pooled_attention(*self.pooled, keys, m.sim),
                                                                values, m.mrl);
  return relearner::merge(self.base, r_prime, m.mrl);
}

inline Adapted adapt(const Model& m, const Episode& ep, const TaskSummary& s, const Tensor& merged,
                     const TrainConfig& cfg) {
  if (!cfg.meta) return unadapted(m, merged, ep.relation);
  return inner_adapt(m, ep, merged, s.support_x, cfg);
}

// Sum over support triples of the contrastive loss; nullopt when no support
// triple has any context.
template <class Rng>
std::optional<Tensor> contrastive_term(const Model& m, const DatasetBundle& bundle, const Episode& ep,
                                       const TrainConfig& cfg, Rng& rng) {
  std::optional<Tensor> total;
  const std::size_t n_ent = m.entities.rows(), n_rel = m.relations.rows();
  for (const auto& p : ep.support) {
    const auto ctx = contrast::gather_context(bundle.background, {p.head, ep.relation, p.tail}, cfg.context_cap, rng);
    if (ctx.empty()) continue;
    Tensor c = contrast::encode_context(ctx, m.entities, m.relations, m.context).c;
    std::vector<Tensor> falses;
    for (std::size_t k = 0; k < cfg.false_contexts; ++k)
      falses.push_back(
          contrast::encode_context(contrast::corrupt_context(ctx, n_ent, n_rel, rng), m.entities, m.relations, m.context)
              .c);
    Tensor anchor = nk::concat({nk::row(m.entities, p.head), nk::row(m.entities, p.tail)});
    Tensor l = contrast::contrastive_loss(anchor, c, falses, cfg.tau);
    total = total ? nk::add(*total, l) : l;
  }
  return total;
}

template <class Rng>
std::vector<Episode> sample_batch(const DatasetBundle& bundle, const TrainConfig& cfg, Rng& rng) {
  const auto rels = bundle.task_relations(kgdata::Split::train);
  if (rels.empty()) throw EpisodeError("no training relations");
  std::uniform_int_distribution<std::size_t> pick(0, rels.size() - 1);
  std::vector<Episode> out;
  for (std::size_t i = 0; i < cfg.batch; ++i) out.push_back(kgdata::sample_episode(bundle, rels[pick(rng)], cfg.shots, rng, cfg.query_size));
  return out;
}

struct StepStats {
  double loss = 0.0;
  double query_loss = 0.0;
  double contrast_loss = 0.0;
  double alpha_mean = std::numeric_limits<double>::quiet_NaN();
  std::size_t episodes = 0;
  std::size_t dropped = 0;
  bool transfer = false;
  bool updated = false;
  std::vector<std::string> warnings;
};

// One outer update: sum over the batch of L_Q(adapted) + lambda * L_c, then a
// single Adam step. Episodes with non-finite numbers are dropped with a warning.
template <class Rng>
StepStats outer_step(Model& m, nk::AdamState& adam, const DatasetBundle& bundle, const std::vector<Episode>& batch,
                     const TrainConfig& cfg, bool transfer, Rng& rng) {
  if (batch.empty()) throw ContractError("outer_step: empty batch");
  StepStats st;
  st.transfer = transfer;
  nk::Tape tape;
  auto drop = [&](const Episode& ep, const std::exception& e) {
    ++st.dropped;
    st.warnings.push_back("dropped episode for relation " + bundle.relations.name(ep.relation) + ": " + e.what());
  };

  std::vector<std::optional<TaskSummary>> summaries(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    try {
      summaries[i] = summarize(m, bundle, batch[i], cfg, transfer, rng);
    } catch (const NumericError& e) {
      drop(batch[i], e);
    }
  }
  std::vector<TaskSummary> pool;
  if (transfer) {
    if (cfg.transfer_pool == "all") {
      for (auto rel : bundle.task_relations(kgdata::Split::train)) {
        const auto ep = kgdata::sample_episode(bundle, rel, cfg.shots, rng, 1);
        pool.push_back(summarize(m, bundle, ep, cfg, true, rng));
      }
    } else {
      for (const auto& s : summaries)
        if (s) pool.push_back(*s);
    }
  }

  std::optional<Tensor> total;
  double alpha_sum = 0.0;
  std::size_t alpha_n = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!summaries[i]) continue;
    const auto& ep = batch[i];
    try {
      Tensor merged = merged_relation(m, *summaries[i], transfer ? &pool : nullptr);
      Adapted a = adapt(m, ep, *summaries[i], merged, cfg);
      Tensor lq = ranking_loss(m, query_pairs(ep), a, cfg.margin);
      std::optional<Tensor> lc;
      if (cfg.lambda > 0.0) lc = contrastive_term(m, bundle, ep, cfg, rng);
      Tensor l = contrast::combined_objective(lq, lc, cfg.lambda);
      if (!std::isfinite(l.item())) throw NumericError("non-finite episode loss");
      st.query_loss += lq.item();
      if (lc) st.contrast_loss += lc->item();
      if (a.alpha) {
        alpha_sum += a.alpha->item();
        ++alpha_n;
      }
      total = total ? nk::add(*total, l) : l;
      ++st.episodes;
    } catch (const NumericError& e) {
      drop(ep, e);
    }
  }
  if (alpha_n > 0) st.alpha_mean = alpha_sum / static_cast<double>(alpha_n);
  if (!total) return st;
  st.loss = total->item();

  auto params = m.parameters();
  tape.backward(*total);
  for (auto& p : params) {
    p.grad_buffer();  // parameters the batch never touched get a zero gradient
    if (!detail::all_finite({p.grad().begin(), p.grad().end()})) {
      for (auto& q : params) q.zero_grad();
      st.warnings.push_back("skipped update: non-finite gradient");
      st.dropped += st.episodes;
      st.episodes = 0;
      return st;
    }
  }
  nk::adam_step(params, adam);
  st.updated = true;
  return st;
}

}  // namespace transnet::metatrain
