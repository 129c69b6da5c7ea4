#pragma once

#include <cmath>
#include <string>

#include "transnet/numkit/adam.hpp"
#include "transnet/numkit/init.hpp"
#include "transnet/numkit/tensor.hpp"

namespace transnet::scorer {

namespace nk = numkit;
using nk::Tensor;

// Projection vectors per entity / relation plus one shared projection MLP
// (d -> d tanh -> d). The final layer starts at zero, so projection begins as
// the identity through the skip connection.
struct ProjectionBank {
  Tensor entity_proj;    // [entities, d]
  Tensor relation_proj;  // [relations, d]
  Tensor w1, b1, w2, b2;

  std::size_t dim() const { return entity_proj.cols(); }

  template <class Rng>
  static ProjectionBank init(std::size_t entities, std::size_t relations, std::size_t d, Rng& rng) {
    const double a = 1.0 / std::sqrt(static_cast<double>(d));
    ProjectionBank b;
    b.entity_proj = Tensor::uniform({entities, d}, -a, a, rng, true);
    b.relation_proj = Tensor::uniform({relations, d}, -a, a, rng, true);
    b.w1 = nk::glorot(d, d, rng);
    b.b1 = nk::zeros_param({d});
    b.w2 = nk::zeros_param({d, d});
    b.b2 = nk::zeros_param({d});
    return b;
  }

  void append_to(nk::NamedTensors& out, const std::string& prefix) const {
    out.emplace_back(prefix + "entity-proj", entity_proj);
    out.emplace_back(prefix + "relation-proj", relation_proj);
    out.emplace_back(prefix + "mlp-w1", w1);
    out.emplace_back(prefix + "mlp-b1", b1);
    out.emplace_back(prefix + "mlp-w2", w2);
    out.emplace_back(prefix + "mlp-b2", b2);
  }
};

// e_hat = MLP((r_p . e_p) e) + e, row-wise for e, e_p [n, d] and r_p [d].
inline Tensor project(const Tensor& e, const Tensor& e_p, const Tensor& r_p, const ProjectionBank& bank) {
  if (e.rank() != 2 || e.shape() != e_p.shape() || r_p.rank() != 1 || r_p.size() != e.cols() ||
      e.cols() != bank.w1.cols()) {
    throw ContractError("project: width mismatch among " + nk::shape_str(e.shape()) + ", " +
                        nk::shape_str(e_p.shape()) + ", " + nk::shape_str(r_p.shape()));
  }
  const std::size_t n = e.rows(), d = e.cols();
  Tensor s = nk::reshape(nk::linear(e_p, nk::reshape(r_p, {1, d})), {n});
  Tensor hidden = nk::tanh(nk::linear(nk::scale_rows(e, s), bank.w1, bank.b1));
  return nk::add(nk::linear(hidden, bank.w2, bank.b2), e);
}

// ||h_hat + R - t_hat||^2 per row.
inline Tensor translation_score(const Tensor& h_hat, const Tensor& r, const Tensor& t_hat) {
  if (r.rank() != 1 || r.size() != h_hat.cols()) {
    throw ContractError("score: relation of shape " + nk::shape_str(r.shape()) + " vs entities " +
                        nk::shape_str(h_hat.shape()));
  }
  return nk::sq_norm(nk::sub(nk::add_row(h_hat, r), t_hat));
}

// Scores (heads[i], tails[i]) under R. Embedding and projection rows are
// given explicitly so adapted copies can stand in for the global tables.
inline Tensor score(const Tensor& heads, const Tensor& head_proj, const Tensor& tails, const Tensor& tail_proj,
                    const Tensor& r, const Tensor& r_p, const ProjectionBank& bank) {
  return translation_score(project(heads, head_proj, r_p, bank), r, project(tails, tail_proj, r_p, bank));
}

// sum_i max(0, pos_i + gamma - neg_i)
inline Tensor margin_loss(const Tensor& pos, const Tensor& neg, double gamma) {
  if (pos.shape() != neg.shape()) {
    throw ShapeError("margin_loss: " + nk::shape_str(pos.shape()) + " positives vs " + nk::shape_str(neg.shape()) +
                     " negatives");
  }
  return nk::sum(nk::relu(nk::add_scalar(nk::sub(pos, neg), gamma)));
}

}  // namespace transnet::scorer
