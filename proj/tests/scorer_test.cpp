#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/dense.hpp"
#include "support/gradcheck.hpp"
#include "transnet/scorer/skiptransd.hpp"

namespace nk = transnet::numkit;
namespace sc = transnet::scorer;
using nk::Tensor;
namespace ts = testsupport;

namespace {

// Random orthogonal matrix by Gram-Schmidt.
ts::Mat random_rotation(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  ts::Mat q;
  while (q.size() < d) {
    ts::Vec v(d);
    for (auto& x : v) x = n(rng);
    for (const auto& u : q) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < d; ++i) v[i] -= dot * u[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (auto& x : v) x /= norm;
    q.push_back(v);
  }
  return q;
}

Tensor rotate(const Tensor& x, const ts::Mat& q) {
  auto m = ts::affine(x.rank() == 1 ? ts::Mat{x.values()} : ts::to_mat(x), q, {});
  std::vector<double> flat;
  for (auto& r : m) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor(x.shape(), flat);
}

}  // namespace

TEST(Project, SkipIdentityWhenFinalLayerIsZero) {
  std::mt19937_64 rng(1);
  auto bank = sc::ProjectionBank::init(5, 2, 4, rng);
  Tensor e = Tensor::uniform({3, 4}, -1, 1, rng), ep = Tensor::uniform({3, 4}, -1, 1, rng);
  Tensor out = sc::project(e, ep, Tensor::uniform({4}, -1, 1, rng), bank);
  for (std::size_t i = 0; i < e.size(); ++i) EXPECT_EQ(out.at(i), e.at(i));
}

TEST(Project, OrthogonalProjectionVectorsFeedZeroIntoMlp) {
  std::mt19937_64 rng(2);
  auto bank = sc::ProjectionBank::init(5, 2, 2, rng);
  bank.w2 = Tensor::uniform({2, 2}, -1, 1, rng, true);
  bank.b1 = Tensor::uniform({2}, -1, 1, rng, true);
  bank.b2 = Tensor::uniform({2}, -1, 1, rng, true);
  Tensor e = Tensor::matrix(1, 2, {0.3, -0.7});
  Tensor out = sc::project(e, Tensor::matrix(1, 2, {1.0, 1.0}), Tensor::vector({1.0, -1.0}), bank);
  ts::Mat hidden{{std::tanh(bank.b1.at(0)), std::tanh(bank.b1.at(1))}};
  auto mlp0 = ts::affine(hidden, ts::to_mat(bank.w2), ts::to_vec(bank.b2));
  for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(out.at(c), mlp0[0][c] + e.at(c), 1e-15);
}

TEST(Project, MatchesManualArithmetic) {
  std::mt19937_64 rng(3);
  auto bank = sc::ProjectionBank::init(5, 2, 4, rng);
  bank.w2 = Tensor::uniform({4, 4}, -1, 1, rng, true);
  bank.b1 = Tensor::uniform({4}, -1, 1, rng, true);
  bank.b2 = Tensor::uniform({4}, -1, 1, rng, true);
  Tensor e = Tensor::uniform({2, 4}, -1, 1, rng), ep = Tensor::uniform({2, 4}, -1, 1, rng);
  Tensor rp = Tensor::uniform({4}, -1, 1, rng);
  Tensor out = sc::project(e, ep, rp, bank);
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 4; ++c) s += rp.at(c) * ep.at(r, c);
    ts::Vec scaled(4);
    for (std::size_t c = 0; c < 4; ++c) scaled[c] = s * e.at(r, c);
    auto h = ts::apply(ts::affine({scaled}, ts::to_mat(bank.w1), ts::to_vec(bank.b1)), ts::tanh_);
    auto y = ts::affine(h, ts::to_mat(bank.w2), ts::to_vec(bank.b2));
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.at(r, c), y[0][c] + e.at(r, c), 1e-12);
  }
  EXPECT_THROW(sc::project(e, ep, Tensor::zeros({3}), bank), transnet::ContractError);
}

TEST(Score, TranslationExamples) {
  Tensor h = Tensor::matrix(1, 2, {1.0, 0.0}), t = Tensor::matrix(1, 2, {0.0, 0.0});
  EXPECT_DOUBLE_EQ(sc::translation_score(h, Tensor::vector({0.0, 1.0}), t).at(0), 2.0);
  Tensor t2 = Tensor::matrix(1, 2, {1.0, 1.0});
  EXPECT_DOUBLE_EQ(sc::translation_score(h, Tensor::vector({0.0, 1.0}), t2).at(0), 0.0);
}

TEST(Score, BatchEqualsLoop) {
  std::mt19937_64 rng(4);
  auto bank = sc::ProjectionBank::init(60, 2, 5, rng);
  bank.w2 = Tensor::uniform({5, 5}, -1, 1, rng, true);
  Tensor ents = Tensor::uniform({60, 5}, -1, 1, rng);
  Tensor r = Tensor::uniform({5}, -1, 1, rng);
  Tensor rp = nk::row(bank.relation_proj, 1);
  std::vector<std::size_t> heads(50, 7), tails(50);
  for (std::size_t i = 0; i < 50; ++i) tails[i] = i + 10;
  Tensor batch = sc::score(nk::gather(ents, heads), nk::gather(bank.entity_proj, heads), nk::gather(ents, tails),
                           nk::gather(bank.entity_proj, tails), r, rp, bank);
  for (std::size_t i = 0; i < 50; ++i) {
    Tensor one = sc::score(nk::gather(ents, {7}), nk::gather(bank.entity_proj, {7}), nk::gather(ents, {tails[i]}),
                           nk::gather(bank.entity_proj, {tails[i]}), r, rp, bank);
    EXPECT_EQ(batch.at(i), one.at(0));
    EXPECT_GE(batch.at(i), 0.0);
  }
}

TEST(Score, SkipAtInitAndRotationInvariance) {
  std::mt19937_64 rng(5);
  auto bank = sc::ProjectionBank::init(10, 2, 6, rng);
  Tensor h = Tensor::uniform({4, 6}, -1, 1, rng), t = Tensor::uniform({4, 6}, -1, 1, rng);
  Tensor hp = Tensor::uniform({4, 6}, -1, 1, rng), tp = Tensor::uniform({4, 6}, -1, 1, rng);
  Tensor r = Tensor::uniform({6}, -1, 1, rng), rp = Tensor::uniform({6}, -1, 1, rng);
  Tensor s = sc::score(h, hp, t, tp, r, rp, bank);
  Tensor plain = sc::translation_score(h, r, t);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(s.at(i), plain.at(i), 1e-14);

  auto q = random_rotation(6, rng);
  Tensor rotated = sc::score(rotate(h, q), hp, rotate(t, q), tp, rotate(r, q), rp, bank);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(rotated.at(i), s.at(i), 1e-12);
}

TEST(MarginLoss, HingeArithmetic) {
  EXPECT_DOUBLE_EQ(sc::margin_loss(Tensor::vector({2.0}), Tensor::vector({2.0}), 1.0).item(), 1.0);
  EXPECT_DOUBLE_EQ(sc::margin_loss(Tensor::vector({1.0}), Tensor::vector({3.0}), 1.0).item(), 0.0);
  EXPECT_DOUBLE_EQ(sc::margin_loss(Tensor::vector({1.0, 2.0}), Tensor::vector({1.5, 4.0}), 1.0).item(), 0.5);
  EXPECT_THROW(sc::margin_loss(Tensor::vector({1.0}), Tensor::vector({1.0, 2.0}), 1.0), transnet::ShapeError);
}

TEST(MarginLoss, GradientThroughProjection) {
  std::mt19937_64 rng(6);
  auto bank = sc::ProjectionBank::init(8, 2, 4, rng);
  bank.w2 = Tensor::uniform({4, 4}, -0.5, 0.5, rng, true);
  Tensor ents = Tensor::uniform({8, 4}, -1, 1, rng, true);
  Tensor r = Tensor::uniform({4}, -1, 1, rng, true);
  std::vector<std::size_t> h{0, 1, 2}, t{3, 4, 5}, n{6, 7, 3};
  auto loss = [&] {
    Tensor rp = nk::row(bank.relation_proj, 0);
    auto sc_of = [&](const std::vector<std::size_t>& tails) {
      return sc::score(nk::gather(ents, h), nk::gather(bank.entity_proj, h), nk::gather(ents, tails),
                       nk::gather(bank.entity_proj, tails), r, rp, bank);
    };
    return sc::margin_loss(sc_of(t), sc_of(n), 3.0);
  };
  // every hinge active, well away from the kink
  Tensor pos, neg;
  {
    Tensor rp = nk::row(bank.relation_proj, 0);
    pos = sc::score(nk::gather(ents, h), nk::gather(bank.entity_proj, h), nk::gather(ents, t),
                    nk::gather(bank.entity_proj, t), r, rp, bank);
    neg = sc::score(nk::gather(ents, h), nk::gather(bank.entity_proj, h), nk::gather(ents, n),
                    nk::gather(bank.entity_proj, n), r, rp, bank);
  }
  for (std::size_t i = 0; i < 3; ++i) ASSERT_GT(std::abs(pos.at(i) + 3.0 - neg.at(i)), 1e-3);
  EXPECT_GE(loss().item(), 0.0);
  auto res = ts::gradcheck({ents, r, bank.entity_proj, bank.relation_proj, bank.w1, bank.w2}, loss);
  EXPECT_LT(res.max_rel_error, 1e-4);
}
