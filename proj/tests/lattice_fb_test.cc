// tests/lattice_fb_test.cc

#include <cmath>
#include <random>

#include "gtest/gtest.h"
#include "prnnt/lattice_fb.h"
#include "prnnt/oracle.h"
#include "test_util.h"

namespace prnnt {
namespace {

using testing::LatticeFromGrid;
using testing::RandomGrid;
using testing::RandomTarget;
using testing::Uniform;

LatticeLogProbs ConstantLattice(int32_t T, int32_t U, double value) {
  LatticeLogProbs lp{DenseArray({T, U + 1}, value), DenseArray({T, U + 1}, value)};
  for (int32_t t = 0; t < T; ++t) lp.y(t, U) = kNegInf;
  return lp;
}

double LogBinomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

TEST(ForwardAlpha, SingleBlank) {
  LatticeLogProbs lp = ConstantLattice(1, 0, -std::log(2.0));
  ForwardResult f = ForwardAlpha(lp);
  EXPECT_EQ(f.alpha.alpha(0, 0), 0.0);
  EXPECT_NEAR(f.total_log_prob, -std::log(2.0), 1e-15);
}

TEST(ForwardAlpha, TwoByTwo) {
  LatticeLogProbs lp = ConstantLattice(2, 1, -std::log(2.0));
  ForwardResult f = ForwardAlpha(lp);
  EXPECT_NEAR(f.alpha.alpha(1, 1), -std::log(2.0), 1e-15);
  EXPECT_NEAR(f.total_log_prob, -std::log(4.0), 1e-15);
}

TEST(ForwardAlpha, UniformPathCounting) {
  for (int T = 1; T <= 12; ++T)
    for (int U = 0; U <= 8; ++U)
      for (int V : {2, 5, 500}) {
        ForwardResult f = ForwardAlpha(ConstantLattice(T, U, -std::log(V)));
        const double expect = LogBinomial(T - 1 + U, U) - (T + U) * std::log(V);
        EXPECT_NEAR(f.total_log_prob, expect, 1e-8) << T << " " << U << " " << V;
      }
}

TEST(ForwardAlpha, EmptyLatticeIsDomainError) {
  LatticeLogProbs lp{DenseArray({0, 1}), DenseArray({0, 1})};
  EXPECT_THROW(ForwardAlpha(lp), DomainError);
  EXPECT_THROW(BackwardBeta(lp), DomainError);
}

TEST(BackwardBeta, BaseCases) {
  LatticeLogProbs one = ConstantLattice(1, 0, -0.3);
  EXPECT_EQ(BackwardBeta(one).beta.beta(0, 0), -0.3);
  BackwardResult b = BackwardBeta(ConstantLattice(2, 1, -std::log(2.0)));
  EXPECT_NEAR(b.beta.beta(0, 0), -std::log(4.0), 1e-15);
  EXPECT_NEAR(b.beta.beta(1, 1), -std::log(2.0), 1e-15);
}

TEST(ForwardBackward, TotalsAgree) {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 200; ++rep) {
    const int T = Uniform(1, 16, rng), U = Uniform(0, 15, rng), V = Uniform(2, 6, rng);
    TargetSequence y = RandomTarget(U, V, rng);
    LatticeLogProbs lp = LatticeFromGrid(RandomGrid(T, U, V, rng, 2.0), y);
    EXPECT_NEAR(ForwardAlpha(lp).total_log_prob, BackwardBeta(lp).total_log_prob, 1e-10);
  }
}

TEST(ForwardAlpha, MatchesEnumeration) {
  std::mt19937_64 rng(22);
  for (int T = 1; T <= 5; ++T)
    for (int U = 0; U <= 4; ++U)
      for (int rep = 0; rep < 4; ++rep) {
        const int V = Uniform(2, 5, rng);
        TargetSequence y = RandomTarget(U, V, rng);
        DenseJoinerLogProbs g = RandomGrid(T, U, V, rng, 2.0);
        EXPECT_NEAR(ForwardAlpha(LatticeFromGrid(g, y)).total_log_prob,
                    BruteForceLoss(g, y), 1e-9);
      }
}

TEST(OccupationGrads, TwoByTwoByHand) {
  LatticeResult r = LatticeForwardBackward(ConstantLattice(2, 1, -std::log(2.0)));
  const auto &g = r.grads;
  EXPECT_NEAR(g.y_grad(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(g.y_grad(1, 0), 0.5, 1e-15);
  EXPECT_NEAR(g.blank_grad(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(g.blank_grad(0, 1), 0.5, 1e-15);
  EXPECT_NEAR(g.blank_grad(1, 1), 1.0, 1e-15);
  EXPECT_EQ(g.blank_grad(1, 0), 0.0);
  EXPECT_EQ(g.y_grad(0, 1), 0.0);
  EXPECT_EQ(g.y_grad(1, 1), 0.0);
}

TEST(OccupationGrads, SinglePath) {
  LatticeResult r = LatticeForwardBackward(ConstantLattice(1, 0, -1.7));
  EXPECT_NEAR(r.grads.blank_grad(0, 0), 1.0, 1e-15);
}

TEST(OccupationGrads, SumRulesAndRange) {
  std::mt19937_64 rng(23);
  for (int rep = 0; rep < 200; ++rep) {
    const int T = Uniform(1, 12, rng), U = Uniform(0, 10, rng), V = Uniform(2, 6, rng);
    TargetSequence y = RandomTarget(U, V, rng);
    LatticeResult r = LatticeForwardBackward(LatticeFromGrid(RandomGrid(T, U, V, rng, 2.0), y));
    for (int t = 0; t < T; ++t) {
      double s = 0.0;
      for (int u = 0; u <= U; ++u) {
        s += r.grads.blank_grad(t, u);
        EXPECT_GE(r.grads.blank_grad(t, u), 0.0);
        EXPECT_LE(r.grads.blank_grad(t, u), 1.0);
      }
      EXPECT_NEAR(s, 1.0, 1e-8);
    }
    for (int u = 0; u < U; ++u) {
      double s = 0.0;
      for (int t = 0; t < T; ++t) s += r.grads.y_grad(t, u);
      EXPECT_NEAR(s, 1.0, 1e-8);
    }
    for (int t = 0; t < T; ++t) EXPECT_EQ(r.grads.y_grad(t, U), 0.0);
  }
}

TEST(OccupationGrads, MatchFiniteDifferences) {
  std::mt19937_64 rng(24);
  for (int rep = 0; rep < 30; ++rep) {
    const int T = Uniform(1, 5, rng), U = Uniform(0, 4, rng), V = Uniform(2, 5, rng);
    TargetSequence y = RandomTarget(U, V, rng);
    LatticeLogProbs lp = LatticeFromGrid(RandomGrid(T, U, V, rng), y);
    LatticeResult r = LatticeForwardBackward(lp);
    auto fy = [&](const DenseArray &yy) {
      return ForwardAlpha(LatticeLogProbs{yy, lp.blank}).total_log_prob;
    };
    auto fb = [&](const DenseArray &bb) {
      return ForwardAlpha(LatticeLogProbs{lp.y, bb}).total_log_prob;
    };
    FiniteDiffReport ry = FiniteDiffCheck(fy, lp.y, r.grads.y_grad, 1e-5, 1e-5);
    FiniteDiffReport rb = FiniteDiffCheck(fb, lp.blank, r.grads.blank_grad, 1e-5, 1e-5);
    EXPECT_TRUE(ry.passed) << ry.Describe();
    EXPECT_TRUE(rb.passed) << rb.Describe();
  }
}

TEST(OccupationGrads, UnreachableTerminalIsError) {
  LatticeLogProbs lp = ConstantLattice(2, 1, -std::log(2.0));
  lp.y(0, 0) = kNegInf;
  lp.y(1, 0) = kNegInf;
  EXPECT_EQ(ForwardAlpha(lp).total_log_prob, kNegInf);
  try {
    LatticeForwardBackward(lp);
    FAIL();
  } catch (const DomainError &e) {
    EXPECT_NE(std::string(e.what()).find("no path has nonzero probability"),
              std::string::npos);
  }
}

TEST(OccupationGrads, PartiallyUnreachableGivesNoNan) {
  LatticeLogProbs lp = ConstantLattice(4, 2, -std::log(3.0));
  lp.y(0, 0) = kNegInf;
  lp.blank(2, 1) = kNegInf;
  LatticeResult r = LatticeForwardBackward(lp);
  for (double x : r.grads.y_grad.Data()) EXPECT_FALSE(std::isnan(x));
  for (double x : r.grads.blank_grad.Data()) EXPECT_FALSE(std::isnan(x));
  EXPECT_EQ(r.grads.y_grad(0, 0), 0.0);
}

}  // namespace
}  // namespace prnnt
