#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "sos/exact.hpp"

using namespace sos;

namespace {

std::shared_ptr<const Region> share(Region r) { return std::make_shared<const Region>(std::move(r)); }

}  // namespace

TEST(Enumerate, SingleSiteThreeStates) {
  for (double beta : {0.5, 1.0, 2.0}) {
    const auto z = enumerate_partition(Region::square(0), BoundaryCondition::zero(), ModelParams(1.0, beta), {-1, 1});
    EXPECT_NEAR(z.logZ, std::log(1 + 2 * std::exp(-4 * beta)), 1e-14);
    EXPECT_TRUE(z.exact);
  }
}

TEST(Enumerate, SingleSitePositiveConstraint) {
  const double beta = 0.7;
  ConstraintSet c;
  c.plus = {{0, 0}};
  const auto z = enumerate_partition(Region::square(0), BoundaryCondition::zero(), ModelParams(1.0, beta), {-1, 1}, c);
  EXPECT_NEAR(z.logZ, std::log(1 + std::exp(-4 * beta)), 1e-14);
}

TEST(Enumerate, BothSignConstraintsPinToZero) {
  ConstraintSet c;
  c.plus = {{0, 0}};
  c.minus = {{0, 0}};
  const auto z = enumerate_partition(Region::square(0), BoundaryCondition::zero(), ModelParams(1.0, 1.0), {-2, 2}, c);
  EXPECT_NEAR(z.logZ, 0.0, 1e-15);
}

TEST(Enumerate, TwoByTwoBoxAgainstNaiveSum) {
  const auto box = share(Region::from_sites({{0, 0}, {1, 0}, {0, 1}, {1, 1}}));
  const ModelParams params(2.0, 1.0);
  const auto z = enumerate_partition(*box, BoundaryCondition::zero(), params, {-1, 1});
  EXPECT_NEAR(z.logZ, oracle::log_partition(box, BoundaryCondition::zero(), params, -1, 1), 1e-12);
}

TEST(Enumerate, MatchesNaiveSumWithTiltAndConstraints) {
  const auto box = share(Region::square(1));
  const std::vector<DualBond> marked = {DualBond::crossing(LatticeBond::make({0, 0}, {0, 1})),
                                        DualBond::crossing(LatticeBond::make({-1, 0}, {-1, 1}))};
  const auto rule = BondWeightRule::tilted(marked);
  ConstraintSet c;
  c.plus = {{0, 1}, {-1, 1}};
  c.minus = {{0, 0}, {-1, 0}};
  for (double p : {1.0, 2.0, kInf}) {
    const ModelParams params(p, 0.8);
    const auto z = enumerate_partition(*box, BoundaryCondition::zero(), params, {-1, 1}, c, rule);
    const double ref = oracle::log_partition(box, BoundaryCondition::zero(), params, -1, 1, rule,
                                             [](const HeightField& f) {
                                               return f.at({0, 1}) >= 0 && f.at({-1, 1}) >= 0 &&
                                                      f.at({0, 0}) <= 0 && f.at({-1, 0}) <= 0;
                                             });
    EXPECT_NEAR(z.logZ, ref, 1e-12) << p;
  }
}

TEST(Enumerate, CapIsEnforced) {
  EXPECT_THROW(enumerate_partition(Region::square(3), BoundaryCondition::zero(), ModelParams(1.0, 1.0), {-2, 2}),
               CapExceeded);
}

TEST(Enumerate, WindowMustContainBoundary) {
  EXPECT_THROW(enumerate_partition(Region::square(0), BoundaryCondition::constant(3), ModelParams(1.0, 1.0), {-1, 1}),
               std::invalid_argument);
}

TEST(TransferMatrix, SingleColumnMatchesEnumeration) {
  const ModelParams params(1.0, 1.0);
  const auto tm = transfer_matrix(0, 1, BoundaryCondition::zero(), params, {-2, 2});
  const auto en = enumerate_partition(Region::rectangle(0, 1), BoundaryCondition::zero(), params, {-2, 2});
  EXPECT_NEAR(tm.logZ, en.logZ, 1e-12 * std::abs(en.logZ) + 1e-14);
}

TEST(TransferMatrix, StaircaseAgreesWithEnumeration) {
  // Lambda_{1,1} with the full window, and Lambda_{1,3} with a two-height window.
  const ModelParams params(1.0, 2.0);
  {
    const auto bc = staircase_bc(1, {0}, {0}, 1, 1);
    const auto tm = transfer_matrix(1, 1, bc, params, {-2, 3});
    const auto en = enumerate_partition(Region::rectangle(1, 1), bc, params, {-2, 3});
    EXPECT_NEAR(tm.logZ, en.logZ, 1e-10 * std::abs(en.logZ));
  }
  {
    const auto bc = staircase_bc(1, {0}, {0}, 1, 3);
    const auto tm = transfer_matrix(1, 3, bc, params, {0, 1});
    const auto en = enumerate_partition(Region::rectangle(1, 3), bc, params, {0, 1});
    EXPECT_NEAR(tm.logZ, en.logZ, 1e-10 * std::abs(en.logZ));
    // The full-window value lies above the truncated one.
    EXPECT_GT(transfer_matrix(1, 3, bc, params, {-2, 3}).logZ, tm.logZ);
  }
}

TEST(TransferMatrix, RandomInstancesAgreeWithEnumeration) {
  std::mt19937_64 rng(2024);
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const int L = static_cast<int>(rng() % 2);
    const int M = 1 + static_cast<int>(rng() % (L == 0 ? 4 : 2));
    const double p = std::array<double, 4>{1.0, 1.5, 2.0, kInf}[rng() % 4];
    const double beta = 0.3 + 0.2 * static_cast<double>(rng() % 10);
    const ModelParams params(p, beta);
    int a = static_cast<int>(rng() % (2 * M + 1)) - M, b = static_cast<int>(rng() % (2 * M + 1)) - M;
    const bool stair = rng() % 2;
    const auto bc = stair ? staircase_bc(1, {a}, {b}, L, M) : BoundaryCondition::zero();
    const TruncationWindow w{-1, stair ? 2 : 1};
    const auto region = Region::rectangle(L, M);
    if (std::pow(w.width(), region.size()) > 2e7) continue;
    ConstraintSet c;
    if (rng() % 2) c.plus.push_back({0, M});
    if (rng() % 2) c.minus.push_back({0, -M});
    const auto tm = transfer_matrix(L, M, bc, params, w, BondWeightRule::standard(), c);
    const auto en = enumerate_partition(region, bc, params, w, c);
    EXPECT_NEAR(tm.logZ, en.logZ, 1e-10 * std::max(1.0, std::abs(en.logZ)))
        << "L=" << L << " M=" << M << " p=" << p << " beta=" << beta;
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

TEST(TransferMatrix, TiltedRuleAgreesWithEnumeration) {
  const std::vector<DualBond> marked = {DualBond::crossing(LatticeBond::make({0, 0}, {0, 1})),
                                        DualBond::crossing(LatticeBond::make({1, 1}, {1, 2}))};
  const auto rule = BondWeightRule::tilted(marked);
  const ModelParams params(2.0, 0.9);
  const auto tm = transfer_matrix(1, 1, BoundaryCondition::zero(), params, {-1, 1}, rule);
  const auto en = enumerate_partition(Region::rectangle(1, 1), BoundaryCondition::zero(), params, {-1, 1},
                                      std::nullopt, rule);
  EXPECT_NEAR(tm.logZ, en.logZ, 1e-12);
}

TEST(TransferMatrix, WindowConvergenceAtLowTemperature) {
  const ModelParams params(1.0, 3.0);
  const double narrow = transfer_matrix(1, 3, BoundaryCondition::zero(), params, {-1, 1}).logZ;
  const double wide = transfer_matrix(1, 3, BoundaryCondition::zero(), params, {-2, 2}).logZ;
  EXPECT_GE(wide, narrow);
  EXPECT_LT(wide - narrow, 1e-3);
}

TEST(TransferMatrix, CapIsEnforced) {
  EXPECT_THROW(transfer_matrix(6, 1, BoundaryCondition::zero(), ModelParams(1.0, 1.0), {-4, 4}), CapExceeded);
}

TEST(Partition, WindowEnlargementNeverDecreases) {
  const ModelParams params(1.5, 0.6);
  double prev = -kInf;
  for (int w = 0; w <= 3; ++w) {
    const double z = transfer_matrix(1, 2, BoundaryCondition::constant(0), params, {-w, w}).logZ;
    EXPECT_GE(z, prev);
    prev = z;
  }
}

TEST(Partition, DerivativeInBetaIsMinusMeanEnergy) {
  const auto region = share(Region::square(1));
  const Stencil stencil(region, BoundaryCondition::zero());
  const SiteBounds bounds(*region, {-1, 1});
  for (double p : {1.0, 2.0}) {
    const double beta = 0.9, step = 1e-4;
    auto logz = [&](double b) { return enumerate_partition(stencil, bounds, ModelParams(p, b), {-1, 1}).logZ; };
    const double fd = (logz(beta + step) - logz(beta - step)) / (2 * step);
    const ModelParams params(p, beta);
    const double mean_h = exact_expectation(stencil, bounds, params,
                                            [&](std::span<const int> h) { return energy(stencil, h, params); });
    EXPECT_NEAR(fd, -mean_h, 1e-5 * std::abs(mean_h));
  }
}

TEST(Probability, SingleSiteClosedForm) {
  const double p = exact_probability(Region::square(0), BoundaryCondition::zero(), ModelParams(1.0, 1.0), {-1, 1},
                                     [](std::span<const int> h) { return h[0] >= 1; });
  EXPECT_NEAR(p, std::exp(-4.0) / (1 + 2 * std::exp(-4.0)), 1e-15);
  EXPECT_NEAR(p, 0.017668, 1e-6);
}

TEST(Probability, SureEventAndComplement) {
  const auto region = Region::square(1);
  const ModelParams params(2.0, 1.5);
  auto all = [](std::span<const int>) { return true; };
  EXPECT_NEAR(exact_probability(region, BoundaryCondition::zero(), params, {-1, 1}, all), 1.0, 1e-14);
  auto pos = [](std::span<const int> h) {
    for (int x : h)
      if (x < 0) return false;
    return true;
  };
  auto neg = [&](std::span<const int> h) { return !pos(h); };
  const double pp = exact_probability(region, BoundaryCondition::zero(), params, {-1, 1}, pos);
  const double pn = exact_probability(region, BoundaryCondition::zero(), params, {-1, 1}, neg);
  EXPECT_NEAR(pp + pn, 1.0, 1e-12);
  EXPECT_GT(pp, 0.0);
  EXPECT_LT(pp, 1.0);
}

TEST(GroundState, SingleStepStaircaseIsStraight) {
  const int L = 1, M = 2;
  const auto region = share(Region::rectangle(L, M));
  const auto bc = staircase_bc(1, {0}, {0}, L, M);
  const Stencil stencil(region, bc);
  const auto g = exact_ground_state(stencil, SiteBounds(*region, {0, 1}), ModelParams(1.0, 5.0));
  for (std::size_t k = 0; k < region->size(); ++k) EXPECT_EQ(g[k], region->site(k).y >= 0 ? 1 : 0);
  EXPECT_DOUBLE_EQ(energy(stencil, g, ModelParams(1.0, 5.0)), 2 * L + 1);
}

TEST(StaircaseRatio, EmptyStaircaseIsIdenticallyZero) {
  const auto r = staircase_ratio({}, {}, 1, {1, 2, 3}, ModelParams(1.0, 1.0));
  for (double x : r.log_ratio) EXPECT_EQ(x, 0.0);
  EXPECT_TRUE(r.converged);
}

TEST(StaircaseRatio, SingleStepStabilisesInM) {
  const auto r = staircase_ratio({0}, {0}, 1, {2, 3, 4, 5}, ModelParams(1.0, 3.0));
  ASSERT_EQ(r.log_ratio.size(), 4u);
  EXPECT_TRUE(r.converged);
  EXPECT_LT(r.last_change, 1e-4);
  // Leading cost of one straight step across 2L+1 columns.
  EXPECT_NEAR(r.value, -3.0 * 3, 0.1);
}

TEST(StaircaseRatio, ReflectionSymmetry) {
  // Rotating by 180 degrees and mapping h -> n - h sends (a; b) to (1-b; 1-a).
  PartitionCache cache;
  const ModelParams params(2.0, 1.2);
  const auto r1 = staircase_ratio({-1}, {1}, 1, {3}, params, std::nullopt, 1e-4, &cache);
  const auto r2 = staircase_ratio({0}, {2}, 1, {3}, params, std::nullopt, 1e-4, &cache);
  EXPECT_NEAR(r1.value, r2.value, 1e-10);
}
