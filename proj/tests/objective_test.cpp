#include <cmath>

#include <gtest/gtest.h>

#include "frera/objective.hpp"
#include "frera/random.hpp"
#include "oracles.hpp"

using namespace frera;
using Eigen::MatrixXd;

namespace {

MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * normal(rng);
  return m;
}

double naive_infonce(const MatrixXd& sim, double tau) {
  const auto B = sim.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    double denom = 0.0;
    for (Eigen::Index j = 0; j < B; ++j) denom += std::exp(sim(i, j) / tau);
    total += -std::log(std::exp(sim(i, i) / tau) / denom);
  }
  return total / double(B);
}

} // namespace

TEST(CosineSimilarity, IdenticalVectorsGiveOnes) {
  MatrixXd a = MatrixXd::Ones(3, 4) / std::sqrt(3.0);
  const auto r = cosine_similarity_matrix(a, a);
  for (Eigen::Index i = 0; i < r.sim.size(); ++i) EXPECT_NEAR(r.sim.data()[i], 1.0, 1e-15);
}

TEST(CosineSimilarity, OrthonormalGivesIdentity) {
  const MatrixXd e = MatrixXd::Identity(5, 5);
  EXPECT_LT((cosine_similarity_matrix(e, e).sim - MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CosineSimilarity, MatchesPairwiseLoop) {
  const MatrixXd a = random_matrix(7, 6, 1), v = random_matrix(7, 6, 2);
  const auto r = cosine_similarity_matrix(a, v);
  for (Eigen::Index i = 0; i < 6; ++i)
    for (Eigen::Index j = 0; j < 6; ++j) {
      double dot = 0, na = 0, nv = 0;
      for (Eigen::Index k = 0; k < 7; ++k) {
        dot += a(k, i) * v(k, j);
        na += a(k, i) * a(k, i);
        nv += v(k, j) * v(k, j);
      }
      EXPECT_NEAR(r.sim(i, j), dot / std::sqrt(na * nv), 1e-12);
      EXPECT_LE(std::abs(r.sim(i, j)), 1.0 + 1e-15);
    }
}

TEST(CosineSimilarity, ZeroEmbeddingIsFlooredAndCounted) {
  MatrixXd a = random_matrix(4, 3, 3);
  a.col(1).setZero();
  const auto r = cosine_similarity_matrix(a, random_matrix(4, 3, 4));
  EXPECT_EQ(r.floored_norms, 1);
  EXPECT_TRUE(r.sim.allFinite());
  EXPECT_EQ(r.sim.row(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(CosineSimilarity, RejectsShapeMismatch) {
  EXPECT_THROW(cosine_similarity_matrix(MatrixXd::Ones(3, 2), MatrixXd::Ones(3, 3)), DataError);
}

TEST(InfoNce, ConstantSimilarityGivesLogB) {
  for (double c : {-0.7, 0.0, 1.0})
    for (int B : {2, 5, 16}) EXPECT_NEAR(infonce_loss(MatrixXd::Constant(B, B, c), 0.2), std::log(double(B)), 1e-12);
}

TEST(InfoNce, TwoByTwoIdentity) {
  const double loss = infonce_loss(MatrixXd::Identity(2, 2), 0.2);
  EXPECT_NEAR(loss, std::log1p(std::exp(-5.0)), 1e-15);
  EXPECT_NEAR(loss, 0.0067153, 1e-7);
}

TEST(InfoNce, MatchesNaiveEvaluation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const MatrixXd sim = random_matrix(8, 8, 100 + seed, 0.5).cwiseMax(-1.0).cwiseMin(1.0);
    EXPECT_NEAR(infonce_loss(sim, 0.2), naive_infonce(sim, 0.2), 1e-10);
  }
}

TEST(InfoNce, StableAtLowTemperature) {
  MatrixXd sim = MatrixXd::Constant(4, 4, -1.0);
  sim.diagonal().setOnes();
  const double loss = infonce_loss(sim, 1e-3);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_NEAR(loss, 0.0, 1e-12);
}

TEST(InfoNce, GradientMatchesFiniteDifferences) {
  MatrixXd sim = random_matrix(6, 6, 7, 0.4);
  MatrixXd dsim;
  infonce_loss(sim, 0.2, &dsim);
  for (Eigen::Index i = 0; i < sim.size(); ++i) {
    const double fd = oracle::central_difference([&] { return infonce_loss(sim, 0.2); }, sim.data() + i, 1e-6);
    EXPECT_NEAR(dsim.data()[i], fd, 1e-8);
  }
}

TEST(InfoNce, RejectsDegenerateInputs) {
  EXPECT_THROW(infonce_loss(MatrixXd::Ones(1, 1), 0.2), DataError);
  EXPECT_THROW(infonce_loss(MatrixXd::Ones(2, 3), 0.2), DataError);
  EXPECT_THROW(infonce_loss(MatrixXd::Ones(2, 2), 0.0), UsageError);
}

TEST(CosineBackward, ComposedWithInfoNceMatchesFiniteDifferences) {
  MatrixXd a = random_matrix(5, 4, 11), v = random_matrix(5, 4, 12);
  auto loss = [&] { return infonce_loss(cosine_similarity_matrix(a, v).sim, 0.2); };
  MatrixXd dsim, da, dv;
  infonce_loss(cosine_similarity_matrix(a, v).sim, 0.2, &dsim);
  cosine_similarity_backward(a, v, dsim, da, dv);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    EXPECT_LT(oracle::relative_error(da.data()[i], oracle::central_difference(loss, a.data() + i, 1e-6)), 1e-6);
    EXPECT_LT(oracle::relative_error(dv.data()[i], oracle::central_difference(loss, v.data() + i, 1e-6)), 1e-6);
  }
}

TEST(L1Regularizer, Examples) {
  EXPECT_DOUBLE_EQ(l1_regularizer(std::vector<double>(7, 1.0)), 1.0);
  EXPECT_DOUBLE_EQ(l1_regularizer(std::vector<double>(7, 0.0)), 0.0);
  EXPECT_DOUBLE_EQ(l1_regularizer(std::vector<double>{0.5, 0.25, 0.25, 1.0}), 0.5);
}

TEST(TotalLoss, Examples) {
  const auto a = total_loss(2.0, 0.4, 3.0);
  EXPECT_DOUBLE_EQ(a.total, 3.2);
  EXPECT_DOUBLE_EQ(a.contrastive, 2.0);
  EXPECT_DOUBLE_EQ(a.regularizer, 0.4);
  EXPECT_DOUBLE_EQ(a.lambda, 3.0);
  EXPECT_DOUBLE_EQ(total_loss(1.7, 0.9, 0.0).total, 1.7);
  EXPECT_DOUBLE_EQ(total_loss(1.7, 0.0, 30.0).total, 1.7);
  EXPECT_THROW(total_loss(1.0, 0.5, -0.1), UsageError);
}
