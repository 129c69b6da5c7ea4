#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "support/dense.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "transnet/contrast/context.hpp"

namespace nk = transnet::numkit;
namespace ct = transnet::contrast;
using nk::Tensor;
using transnet::kgdata::KnowledgeGraph;
using transnet::kgdata::Triple;
namespace ts = testsupport;

TEST(GatherContext, IsolatedUnionAndCap) {
  std::mt19937_64 rng(1);
  KnowledgeGraph empty(4, {{2, 0, 3}});
  EXPECT_TRUE(ct::gather_context(empty, {0, 1, 1}, 50, rng).empty());

  KnowledgeGraph shared(4, {{0, 1, 3}, {2, 1, 3}});
  auto c = ct::gather_context(shared, {0, 5, 2}, 50, rng);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.relations[0], 1u);
  EXPECT_EQ(c.entities[0], 3u);

  std::vector<Triple> t;
  for (std::size_t i = 0; i < 12; ++i) t.push_back({0, i % 3, i + 1});
  KnowledgeGraph star(20, t);
  auto capped = ct::gather_context(star, {0, 7, 19}, 5, rng);
  ASSERT_EQ(capped.size(), 5u);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_TRUE(star.contains({0, capped.relations[i], capped.entities[i]}));
    EXPECT_TRUE(seen.insert({capped.relations[i], capped.entities[i]}).second);
  }
}

TEST(GatherContext, ExcludesTheTripleItself) {
  std::mt19937_64 rng(2);
  KnowledgeGraph g(3, {{0, 0, 1}, {0, 1, 2}});
  auto c = ct::gather_context(g, {0, 0, 1}, 0, rng);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c.relations[0], 1u);
}

TEST(CorruptContext, AlwaysDiffers) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    std::uniform_int_distribution<std::size_t> n(1, 6), e(0, 9), r(0, 3);
    ct::Context c;
    for (std::size_t k = n(rng); k > 0; --k) {
      c.relations.push_back(r(rng));
      c.entities.push_back(e(rng));
    }
    auto f = ct::corrupt_context(c, 10, 4, rng);
    EXPECT_NE(f, c);
    for (std::size_t k = 0; k < f.size(); ++k) {
      EXPECT_LT(f.entities[k], 10u);
      EXPECT_LT(f.relations[k], 4u);
    }
  }
}

class Encoder : public ::testing::Test {
 protected:
  std::mt19937_64 rng{4};
  Tensor ents = Tensor::uniform({10, 3}, -1, 1, rng, true);
  Tensor rels = Tensor::uniform({4, 3}, -1, 1, rng, true);
  ct::ContextEncoder enc = ct::ContextEncoder::init(3, 1, rng);
};

TEST_F(Encoder, SingleAndIdenticalTuples) {
  ct::Context one{{2}, {5}};
  auto e = ct::encode_context(one, ents, rels, enc);
  EXPECT_DOUBLE_EQ(e.alpha.at(0), 1.0);
  Tensor re = ct::context_tokens(one, ents, rels);
  for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(e.c.at(c), re.at(c), 1e-15);

  ct::Context same{{2, 2, 2}, {5, 5, 5}};
  auto s = ct::encode_context(same, ents, rels, enc);
  for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(s.c.at(c), re.at(c), 1e-15);
  EXPECT_THROW(ct::encode_context({}, ents, rels, enc), transnet::ContractError);
}

TEST_F(Encoder, MatchesManualArithmetic) {
  ct::Context c{{0, 1, 3}, {2, 7, 9}};
  auto got = ct::encode_context(c, ents, rels, enc);
  const auto& a = enc.attn;
  ts::Mat x = ts::to_mat(ct::context_tokens(c, ents, rels));
  ts::Mat o = ts::plus(x, ts::self_attention(x, ts::to_mat(a.wq), ts::to_vec(a.bq), ts::to_mat(a.wk), ts::to_vec(a.bk),
                                             ts::to_mat(a.wv), ts::to_vec(a.bv), ts::to_mat(a.wo), ts::to_vec(a.bo)));
  ts::Vec logits(3, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t k = 0; k < 6; ++k) logits[i] += o[i][k] * enc.query.at(k);
    logits[i] /= std::sqrt(6.0);
  }
  ts::Vec alpha = ts::softmax(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(got.alpha.at(i), alpha[i], 1e-12);
    EXPECT_GE(got.alpha.at(i), 0.0);
    total += got.alpha.at(i);
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  for (std::size_t k = 0; k < 6; ++k) {
    double expect = 0.0;
    for (std::size_t i = 0; i < 3; ++i) expect += alpha[i] * x[i][k];
    EXPECT_NEAR(got.c.at(k), expect, 1e-12);
  }
}

TEST(ContrastiveLoss, UniformAndSaturatedLimits) {
  std::mt19937_64 rng(5);
  Tensor anchor = Tensor::uniform({6}, -1, 1, rng);
  Tensor c = Tensor::uniform({6}, -1, 1, rng);
  for (std::size_t n = 1; n <= 5; ++n) {
    std::vector<Tensor> falses(n, c);
    EXPECT_NEAR(ct::contrastive_loss(anchor, c, falses, 0.5).item(), std::log(static_cast<double>(n + 1)), 1e-14);
  }
  Tensor neg = nk::scale(anchor, -1.0);
  const double sat = ct::contrastive_loss(anchor, anchor, {neg}, 0.1).item();
  EXPECT_NEAR(sat, std::log1p(std::exp(-20.0)), 1e-15);
  EXPECT_NEAR(sat, 2.06e-9, 1e-11);
  EXPECT_THROW(ct::contrastive_loss(anchor, c, {c}, 0.0), transnet::ContractError);
  EXPECT_THROW(ct::contrastive_loss(anchor, c, {c}, -1.0), transnet::ContractError);
  EXPECT_THROW(ct::contrastive_loss(anchor, c, {}, 0.5), transnet::ContractError);
}

TEST(ContrastiveLoss, MatchesDirectFormula) {
  std::mt19937_64 rng(6);
  auto cos = [](const Tensor& a, const Tensor& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ab += a.at(i) * b.at(i);
      aa += a.at(i) * a.at(i);
      bb += b.at(i) * b.at(i);
    }
    return ab / std::sqrt(aa * bb);
  };
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a = Tensor::uniform({6}, -1, 1, rng), t = Tensor::uniform({6}, -1, 1, rng);
    std::vector<Tensor> f;
    for (int i = 0; i < 4; ++i) f.push_back(Tensor::uniform({6}, -1, 1, rng));
    double denom = std::exp(cos(a, t) / 0.5);
    for (const auto& x : f) denom += std::exp(cos(a, x) / 0.5);
    const double expect = -std::log(std::exp(cos(a, t) / 0.5) / denom);
    const double got = ct::contrastive_loss(a, t, f, 0.5).item();
    EXPECT_NEAR(got, expect, 1e-12);
    EXPECT_GE(got, 0.0);
  }
}

TEST(ContrastiveLoss, NonIncreasingAsTemperatureDrops) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = Tensor::uniform({6}, -1, 1, rng);
    Tensor t = nk::add(a, Tensor::uniform({6}, -0.2, 0.2, rng));  // true context most similar
    std::vector<Tensor> f{Tensor::uniform({6}, -1, 1, rng), nk::scale(a, -1.0), Tensor::uniform({6}, -1, 1, rng)};
    double sim_t = nk::cosine(a, t).item();
    bool largest = true;
    for (const auto& x : f) largest = largest && sim_t > nk::cosine(a, x).item();
    if (!largest) continue;
    double prev = std::numeric_limits<double>::infinity();
    for (double tau : {5.0, 2.0, 1.0, 0.5, 0.2, 0.1, 0.05, 0.01}) {
      const double l = ct::contrastive_loss(a, t, f, tau).item();
      EXPECT_LE(l, prev + 1e-15) << "tau " << tau;
      prev = l;
    }
  }
}

TEST(ContrastiveLoss, GradientToAnchorAndEncoder) {
  std::mt19937_64 rng(8);
  Tensor ents = Tensor::uniform({10, 3}, -1, 1, rng, true);
  Tensor rels = Tensor::uniform({4, 3}, -1, 1, rng, true);
  auto enc = ct::ContextEncoder::init(3, 2, rng);
  ct::Context c{{0, 1, 3, 2}, {2, 7, 9, 4}};
  auto f = ct::corrupt_context(c, 10, 4, rng);
  auto r = ts::gradcheck({ents, rels, enc.attn.wq, enc.attn.wv, enc.attn.wo, enc.query}, [&] {
    Tensor anchor = nk::concat({nk::row(ents, 0), nk::row(ents, 1)});
    auto tc = ct::encode_context(c, ents, rels, enc);
    auto fc = ct::encode_context(f, ents, rels, enc);
    return ct::contrastive_loss(anchor, tc.c, {fc.c}, 0.5);
  });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(CombinedObjective, Arithmetic) {
  Tensor task = Tensor::scalar(1.0), con = Tensor::scalar(2.0);
  EXPECT_DOUBLE_EQ(ct::combined_objective(task, con, 0.0).item(), 1.0);
  EXPECT_NEAR(ct::combined_objective(task, con, 0.05).item(), 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(ct::combined_objective(task, std::nullopt, 0.05).item(), 1.0);
}
