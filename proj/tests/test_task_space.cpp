#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ept/gradcheck.hpp"
#include "ept/task_space.hpp"
#include "oracles.hpp"

using namespace ept;

namespace {

TaskEmbeddingTable table_from(Matrix e, double tau = 0.05) {
  return TaskEmbeddingTable{{"task_embeddings", std::move(e)}, std::nullopt, tau};
}

std::vector<double> unit(std::size_t d, std::size_t i, double v = 1.0) {
  std::vector<double> u(d, 0.0);
  u[i] = v;
  return u;
}

// Loss written directly from the definition, with the naive softmax oracle.
double oracle_contrastive(const std::vector<PooledFeature>& feats, const Matrix& e, double tau) {
  double total = 0.0;
  for (const auto& p : feats) {
    std::vector<double> s;
    for (std::size_t k = 0; k < e.rows(); ++k) {
      double dp = 0.0, nf = 0.0, ne = 0.0;
      for (std::size_t j = 0; j < e.cols(); ++j) {
        dp += p.f[j] * e(k, j);
        nf += p.f[j] * p.f[j];
        ne += e(k, j) * e(k, j);
      }
      s.push_back(dp / std::sqrt(nf * ne));
    }
    total += -std::log(oracle::naive_softmax(s, tau)[p.task]);
  }
  return total / static_cast<double>(feats.size());
}

}  // namespace

TEST(TaskTable, InitShapesAndDeterminism) {
  const auto a = init_task_table(4, 6, 6, 0.05, 1), b = init_task_table(4, 6, 6, 0.05, 1);
  EXPECT_EQ(a.embeddings.value, b.embeddings.value);
  EXPECT_EQ(a.embeddings.value.shape(), "4x6");
  EXPECT_FALSE(a.pool_proj.has_value());
  const auto c = init_task_table(4, 3, 6, 0.05, 1);
  ASSERT_TRUE(c.pool_proj.has_value());
  EXPECT_EQ(c.pool_proj->value.shape(), "3x6");
  EXPECT_THROW(init_task_table(0, 3, 3, 0.05, 1), ParameterError);
  EXPECT_THROW(init_task_table(2, 3, 3, 0.0, 1), ParameterError);
}

TEST(PoolFeatures, MeanOverPositions) {
  const Matrix h{{1, 2}, {3, 6}, {5, 1}};
  EXPECT_EQ(pool_features(h), (std::vector<double>{3, 3}));
  auto t = table_from(Matrix(2, 1));
  t.pool_proj = Parameter{"pool_proj", Matrix{{2, -1}}};
  EXPECT_EQ(pool_features(h, &t), std::vector<double>{3});
}

TEST(PoolFeatures, TapeVersionMatchesPerSequence) {
  std::mt19937_64 rng(1);
  const Matrix h = oracle::random_matrix(6, 4, rng);  // 2 sequences of length 3
  auto t = init_task_table(2, 3, 4, 0.05, 2);
  Tape tape;
  const Matrix f = pool_features(tape.constant(h), 3, t).value();
  for (std::size_t b = 0; b < 2; ++b) {
    Matrix seq(3, 4);
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t c = 0; c < 4; ++c) seq(s, c) = h(b * 3 + s, c);
    const auto ref = pool_features(seq, &t);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(f(b, j), ref[j], 1e-14);
  }
}

TEST(Similarity, Examples) {
  EXPECT_EQ(similarity(std::vector<double>{1, 0}, std::vector<double>{2, 0}), 1.0);
  EXPECT_EQ(similarity(std::vector<double>{1, 0}, std::vector<double>{0, 3}), 0.0);
  EXPECT_NEAR(similarity(std::vector<double>{1, 1}, std::vector<double>{-1, -1}), -1.0, 1e-15);
  EXPECT_THROW(similarity(std::vector<double>{0, 0}, std::vector<double>{1, 0}), DegenerateInputError);
  EXPECT_THROW(similarity(std::vector<double>{1}, std::vector<double>{1, 0}), ShapeError);
}

TEST(Similarity, ScaleInvariant) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    auto f = oracle::random_vector(5, rng);
    const auto e = oracle::random_vector(5, rng);
    const double s = similarity(f, e);
    for (double& x : f) x *= 8.0;
    EXPECT_NEAR(similarity(f, e), s, 1e-15);
  }
}

TEST(ContrastiveLoss, UninformativeFeatureCostsLogT) {
  for (std::size_t tasks : {2u, 4u, 8u}) {
    // Feature orthogonal to every embedding: all similarities are zero.
    Matrix e(tasks, tasks + 1);
    for (std::size_t k = 0; k < tasks; ++k) e(k, k) = 1.0;
    const auto t = table_from(e);
    std::vector<PooledFeature> feats;
    for (std::size_t k = 0; k < tasks; ++k) feats.push_back({unit(tasks + 1, tasks), k});
    EXPECT_NEAR(contrastive_loss(feats, t), std::log(static_cast<double>(tasks)), 1e-12);
  }
}

TEST(ContrastiveLoss, SingleTaskIsZero) {
  const auto t = table_from(Matrix{{0.3, -1.0}});
  EXPECT_EQ(contrastive_loss({{{1.0, 2.0}, 0}, {{-4.0, 0.5}, 0}}, t), 0.0);
}

TEST(ContrastiveLoss, WideMarginIsNegligible) {
  // Similarities +1 and -1 at tau 0.05 give logits 20 and -20.
  const auto t = table_from(Matrix{{1, 0}, {-1, 0}});
  EXPECT_LT(contrastive_loss({{{2.0, 0.0}, 0}}, t), 1e-15);
  EXPECT_GT(contrastive_loss({{{2.0, 0.0}, 1}}, t), 39.9);
}

TEST(ContrastiveLoss, MatchesOracle) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t tasks = 2 + rng() % 5, d = 2 + rng() % 6;
    const Matrix e = oracle::random_matrix(tasks, d, rng);
    const double tau = 0.05 + 0.5 * std::uniform_real_distribution<double>(0, 1)(rng);
    std::vector<PooledFeature> feats;
    for (int i = 0; i < 6; ++i) feats.push_back({oracle::random_vector(d, rng), rng() % tasks});
    EXPECT_NEAR(contrastive_loss(feats, table_from(e, tau)), oracle_contrastive(feats, e, tau), 1e-10);
  }
}

TEST(ContrastiveLoss, InvariantToSamplePermutation) {
  std::mt19937_64 rng(4);
  const auto t = table_from(oracle::random_matrix(3, 4, rng));
  std::vector<PooledFeature> feats;
  for (int i = 0; i < 9; ++i) feats.push_back({oracle::random_vector(4, rng), static_cast<std::size_t>(i % 3)});
  const double ref = contrastive_loss(feats, t);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(feats.begin(), feats.end(), rng);
    EXPECT_NEAR(contrastive_loss(feats, t), ref, 1e-13);
  }
}

TEST(ContrastiveLoss, DecreasesAsFeatureTurnsTowardItsTask) {
  const auto t = table_from(Matrix{{1, 0}, {0, 1}, {-1, 0}});
  double prev = 1e300;
  for (int step = 0; step <= 20; ++step) {
    // Rotate from task 1's direction (angle pi/2) to task 0's (angle 0).
    const double a = (20 - step) * (std::acos(-1.0) / 40.0);
    const double l = contrastive_loss({{{std::cos(a), std::sin(a)}, 0}}, t);
    EXPECT_LT(l, prev);
    prev = l;
  }
}

TEST(ContrastiveLoss, TapeAgreesWithValuePathAndFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto t = table_from(oracle::random_matrix(4, 5, rng), 0.3);
  Parameter feats{"features", oracle::random_matrix(6, 5, rng)};
  const std::vector<std::size_t> tasks{0, 1, 2, 3, 1, 2};
  Tape tape;
  const double v = contrastive_loss(tape.watch(feats), tasks, t).value()(0, 0);
  std::vector<PooledFeature> pf;
  for (std::size_t i = 0; i < 6; ++i) pf.push_back({std::vector<double>(feats.value.row_span(i).begin(),
                                                                      feats.value.row_span(i).end()), tasks[i]});
  EXPECT_NEAR(v, contrastive_loss(pf, t), 1e-12);
  std::vector<Parameter*> ps{&feats, &t.embeddings};
  const auto rep = gradient_check([&](Tape& tp) { return contrastive_loss(tp.watch(feats), tasks, t); }, ps);
  EXPECT_LT(rep.max_rel_err, 1e-6);
}

TEST(ContrastiveLoss, Errors) {
  const auto t = table_from(Matrix{{1, 0}, {0, 1}});
  EXPECT_THROW(contrastive_loss({}, t), ContractError);
  EXPECT_THROW(contrastive_loss({{{1, 0}, 2}}, t), ContractError);
  EXPECT_THROW(contrastive_loss({{{0, 0}, 0}}, t), DegenerateInputError);
}

TEST(EmbeddingExport, PcaNeedsThreeTasks) {
  const auto two = embedding_export(table_from(Matrix{{1, 2}, {3, 4}}));
  EXPECT_FALSE(two.pca.has_value());
  EXPECT_NE(two.notice.find("3 tasks"), std::string::npos);
  std::mt19937_64 rng(6);
  const auto four = embedding_export(table_from(oracle::random_matrix(4, 3, rng)));
  ASSERT_TRUE(four.pca.has_value());
  EXPECT_EQ(four.pca->shape(), "4x2");
  EXPECT_TRUE(four.notice.empty());
}

TEST(EmbeddingExport, CsvLayout) {
  EXPECT_EQ(embeddings_csv(Matrix{{1, 2}, {3, 4.5}}), "task,dim_0,dim_1\n0,1,2\n1,3,4.5\n");
  EXPECT_EQ(pca_csv(Matrix{{0.5, -1}}), "task,pc1,pc2\n0,0.5,-1\n");
}
