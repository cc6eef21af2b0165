#include <gtest/gtest.h>

#include <cmath>

#include "s3/balanced.hpp"
#include "support.hpp"

using namespace s3;
using s3test::tight;

namespace {

struct Instance {
  std::vector<Point2> xs, ys;
  std::vector<double> a, b;
  CostMatrix c;
};

Instance random_instance(SceneRng& rng, std::size_t n, std::size_t m, double total = 1.0) {
  Instance in;
  in.xs = s3test::random_points(rng, n);
  in.ys = s3test::random_points(rng, m);
  in.a = s3test::random_weights(rng, n);
  in.b = s3test::random_weights(rng, m);
  s3test::normalize_to(in.a, total);
  s3test::normalize_to(in.b, total);
  in.c = build_cost(in.xs, in.ys, CostKind::squared_euclidean, 1.0);
  return in;
}

}  // namespace

TEST(SolverConfig, Validation) {
  SolverConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epsilon = 0.0;
  EXPECT_THROW(c.validate(), PreconditionError);
  c = {};
  c.tolerance = -1.0;
  EXPECT_THROW(c.validate(), PreconditionError);
  c = {};
  c.max_iterations = 0;
  EXPECT_THROW(c.validate(), PreconditionError);
}

TEST(SolveBalanced, UnitAtomsForceTheValue) {
  DiscreteMeasure a{{{0, 0}}, {1.0}}, b{{{3, 4}}, {1.0}};
  const auto c = build_cost(a.support, b.support, CostKind::squared_euclidean, 1.0);
  const auto pot = solve_balanced(a, b, c, tight(0.1));
  ASSERT_TRUE(pot.converged);
  EXPECT_NEAR(pot.f[0] + pot.g[0], 25.0, 1e-12);
  EXPECT_NEAR(balanced_value(pot, a.weights, b.weights), 25.0, 1e-12);
}

TEST(SolveBalanced, SingleAtomSelfValue) {
  for (double a : {0.5, 2.0, 3.0}) {
    for (double eps : {0.05, 0.5}) {
      DiscreteMeasure m{{{1, 1}}, {a}};
      const auto c = build_cost(m.support, m.support, CostKind::squared_euclidean, 1.0);
      const auto pot = solve_balanced(m, m, c, tight(eps));
      EXPECT_NEAR(balanced_value(pot, m.weights, m.weights), -eps * a * std::log(a), 1e-12);
      const auto sym = symmetric_potential(m, c, tight(eps));
      EXPECT_NEAR(2.0 * sym.p[0] * a, -eps * a * std::log(a), 1e-12);
    }
  }
}

TEST(SolveBalanced, IdenticalMeasuresGiveDiagonalPlan) {
  DiscreteMeasure m{{{0, 0}, {1, 0}, {0, 1}}, {0.2, 0.3, 0.5}};
  const auto c = build_cost(m.support, m.support, CostKind::squared_euclidean, 1.0);
  SolverConfig cfg = tight(0.01);
  const auto pot = solve_balanced(m, m, c, cfg);
  const auto plan = plan_from_potentials(pot, m, m, c, cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) EXPECT_NEAR(plan(i, j), m.weights[i], 10 * cfg.tolerance);
      else EXPECT_LE(plan(i, j), 10 * cfg.tolerance);
    }
  }
}

TEST(SolveBalanced, MassMismatchNamesBothMasses) {
  std::vector<double> a{1.0, 1.0}, b{3.0};
  CostMatrix c;
  c.n_source = 2;
  c.n_target = 1;
  c.costs = {0.0, 1.0};
  try {
    solve_balanced(std::span<const double>(a), std::span<const double>(b), DenseCost(c), SolverConfig{});
    FAIL() << "expected a precondition error";
  } catch (const PreconditionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("mass mismatch"), std::string::npos);
    EXPECT_NE(msg.find('2'), std::string::npos);
    EXPECT_NE(msg.find('3'), std::string::npos);
  }
}

TEST(SolveBalanced, NonConvergenceIsReportedNotThrown) {
  SceneRng rng(9);
  auto in = random_instance(rng, 5, 5);
  SolverConfig cfg;
  cfg.epsilon = 0.001;
  cfg.max_iterations = 1;
  const auto pot = solve_balanced(std::span<const double>(in.a), std::span<const double>(in.b),
                                  DenseCost(in.c), cfg);
  EXPECT_FALSE(pot.converged);
  EXPECT_EQ(pot.iterations_used, 1);
  EXPECT_GT(pot.final_residual, cfg.tolerance);
  try {
    balanced_value(pot, in.a, in.b);
    FAIL();
  } catch (const ConvergenceError& e) {
    EXPECT_STREQ(e.what(), "evaluate-before-convergence");
  }
}

TEST(SolveBalanced, ConvergedResidualWithinTolerance) {
  SceneRng rng(10);
  auto in = random_instance(rng, 4, 6);
  SolverConfig cfg;
  cfg.epsilon = 0.1;
  const auto pot = solve_balanced(std::span<const double>(in.a), std::span<const double>(in.b),
                                  DenseCost(in.c), cfg);
  ASSERT_TRUE(pot.converged);
  EXPECT_LE(pot.final_residual, cfg.tolerance);
  for (double v : pot.f) EXPECT_TRUE(std::isfinite(v));
  for (double v : pot.g) EXPECT_TRUE(std::isfinite(v));
}

TEST(SolveBalanced, MonotoneDualAscent) {
  SceneRng rng(12);
  for (int rep = 0; rep < 30; ++rep) {
    auto in = random_instance(rng, 2 + rep % 5, 3 + rep % 4);
    const double eps = std::vector<double>{0.01, 0.1, 1.0}[rep % 3];
    double last = -std::numeric_limits<double>::infinity();
    int sweeps = 0;
    SolverConfig cfg = tight(eps);
    cfg.max_iterations = 5000;
    solve_balanced(std::span<const double>(in.a), std::span<const double>(in.b), DenseCost(in.c),
                   cfg, nullptr, [&](std::span<const double> f, std::span<const double> g) {
                     const double v = balanced_dual_objective(f, g, in.a, in.b, DenseCost(in.c), eps);
                     EXPECT_GE(v - last, -1e-12 * std::max(1.0, std::abs(v))) << "sweep " << sweeps;
                     last = v;
                     ++sweeps;
                   });
    EXPECT_GT(sweeps, 0);
  }
}

TEST(SolveBalanced, ShiftInvariance) {
  SceneRng rng(13);
  auto in = random_instance(rng, 4, 4);
  SolverConfig cfg = tight(0.1);
  auto pot = solve_balanced(std::span<const double>(in.a), std::span<const double>(in.b),
                            DenseCost(in.c), cfg);
  const double v0 = balanced_value(pot, in.a, in.b);
  const auto plan0 = plan_from_potentials(pot, in.a, in.b, DenseCost(in.c), cfg);
  for (int rep = 0; rep < 10; ++rep) {
    const double t = rng.uniform(-5.0, 5.0);
    auto shifted = pot;
    for (double& v : shifted.f) v += t;
    for (double& v : shifted.g) v -= t;
    EXPECT_NEAR(balanced_value(shifted, in.a, in.b), v0, 1e-12);
    const auto plan = plan_from_potentials(shifted, in.a, in.b, DenseCost(in.c), cfg);
    for (std::size_t k = 0; k < plan.entries.size(); ++k)
      EXPECT_NEAR(plan.entries[k], plan0.entries[k], 1e-12);
  }
}

TEST(PlanFromPotentials, UnitAtoms) {
  DiscreteMeasure a{{{0, 0}}, {1.0}}, b{{{0.3, 0.4}}, {1.0}};
  const auto c = build_cost(a.support, b.support, CostKind::squared_euclidean, 1.0);
  SolverConfig cfg = tight(0.05);
  const auto pot = solve_balanced(a, b, c, cfg);
  const auto plan = plan_from_potentials(pot, a, b, c, cfg);
  EXPECT_NEAR(plan(0, 0), 1.0, 1e-12);
}

TEST(PlanFromPotentials, MarginalsAtConvergence) {
  SceneRng rng(14);
  for (int rep = 0; rep < 10; ++rep) {
    auto in = random_instance(rng, 3, 3);
    SolverConfig cfg;
    cfg.epsilon = 0.05;
    const auto pot = solve_balanced(std::span<const double>(in.a), std::span<const double>(in.b),
                                    DenseCost(in.c), cfg);
    ASSERT_TRUE(pot.converged);
    const auto plan = plan_from_potentials(pot, in.a, in.b, DenseCost(in.c), cfg);
    const auto res = marginal_residuals(plan, in.a, in.b);
    EXPECT_LE(res.cols, 10 * cfg.tolerance);
    EXPECT_LE(res.rows, 10 * cfg.tolerance);
    for (double v : plan.entries) EXPECT_GE(v, 0.0);
  }
}

TEST(PlanFromPotentials, OverflowNamesTheExponent) {
  DiscreteMeasure a{{{0, 0}}, {1.0}}, b{{{0, 0}}, {1.0}};
  const auto c = build_cost(a.support, b.support, CostKind::squared_euclidean, 1.0);
  DualPotentials pot;
  pot.f = {10.0};
  pot.g = {0.0};
  pot.converged = true;
  SolverConfig cfg;
  cfg.epsilon = 0.01;
  try {
    plan_from_potentials(pot, a, b, c, cfg);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("1000"), std::string::npos) << e.what();
  }
}

TEST(SymmetricPotential, SingleUnitAtomIsZero) {
  DiscreteMeasure m{{{2, 2}}, {1.0}};
  const auto c = build_cost(m.support, m.support, CostKind::squared_euclidean, 1.0);
  const auto p = symmetric_potential(m, c, tight(0.1));
  ASSERT_TRUE(p.converged);
  EXPECT_NEAR(p.p[0], 0.0, 1e-13);
}

TEST(SymmetricPotential, SingleAtomMatchesScalarRoot) {
  for (double a : {0.25, 2.0, 7.0}) {
    for (double eps : {0.01, 0.1, 1.0}) {
      // Bisection on the scalar fixed-point residual p - T(p) = 2p + eps ln a.
      double lo = -100.0, hi = 100.0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (2.0 * mid + eps * std::log(a) > 0.0 ? hi : lo) = mid;
      }
      DiscreteMeasure m{{{0, 0}}, {a}};
      const auto c = build_cost(m.support, m.support, CostKind::squared_euclidean, 1.0);
      const auto p = symmetric_potential(m, c, tight(eps));
      ASSERT_TRUE(p.converged);
      EXPECT_NEAR(p.p[0], 0.5 * (lo + hi), 1e-12);
      EXPECT_NEAR(p.p[0], -0.5 * eps * std::log(a), 1e-12);
    }
  }
}

TEST(SymmetricPotential, EqualAtomsGetEqualPotentials) {
  DiscreteMeasure m{{{0, 0}, {0.5, 0.5}}, {0.7, 0.7}};
  const auto c = build_cost(m.support, m.support, CostKind::squared_euclidean, 1.0);
  const auto p = symmetric_potential(m, c, tight(0.1));
  ASSERT_TRUE(p.converged);
  EXPECT_NEAR(p.p[0], p.p[1], 1e-13);
}

TEST(SymmetricPotential, RawIterationOscillatesOnConstantShifts) {
  DiscreteMeasure m{{{0, 0}, {0.5, 0.5}}, {0.7, 0.7}};
  const auto c = build_cost(m.support, m.support, CostKind::squared_euclidean, 1.0);
  SolverConfig cfg = tight(0.1);
  cfg.max_iterations = 2000;
  cfg.symmetric_averaging = false;
  const auto p = symmetric_potential(m, c, cfg);
  EXPECT_FALSE(p.converged);
  EXPECT_GT(p.final_residual, 1e-3);
}

TEST(SinkhornDivergence, VanishesOnIdenticalMeasures) {
  SceneRng rng(20);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 1 + static_cast<std::size_t>(rep % 16);
    DiscreteMeasure m{s3test::random_points(rng, n), s3test::random_weights(rng, n)};
    const auto c = build_cost(m.support, m.support, CostKind::squared_euclidean, 1.0);
    SolverConfig cfg;
    cfg.epsilon = std::vector<double>{0.01, 0.1, 1.0}[rep % 3];
    const auto d = sinkhorn_divergence(m, m, c, c, c, cfg);
    EXPECT_TRUE(d.converged()) << rep;
    EXPECT_LE(d.cross.iterations_used, 2) << rep;
    EXPECT_LE(std::abs(d.value), 1e-9) << rep;
  }
}

TEST(SinkhornDivergence, UnitAtomsGiveTheCost) {
  DiscreteMeasure a{{{0.1, 0.2}}, {1.0}}, b{{{0.7, 0.1}}, {1.0}};
  const auto ab = build_cost(a.support, b.support, CostKind::squared_euclidean, 1.0);
  const auto aa = build_cost(a.support, a.support, CostKind::squared_euclidean, 1.0);
  const auto bb = build_cost(b.support, b.support, CostKind::squared_euclidean, 1.0);
  const auto d = sinkhorn_divergence(a, b, ab, aa, bb, tight(0.1));
  EXPECT_NEAR(d.value, ab(0, 0), 1e-12);
}

TEST(SinkhornDivergence, NonNegativeOnRandomPairs) {
  SceneRng rng(21);
  for (int rep = 0; rep < 30; ++rep) {
    auto in = random_instance(rng, 4, 4, rng.uniform(0.5, 3.0));
    const auto aa = build_cost(in.xs, in.xs, CostKind::squared_euclidean, 1.0);
    const auto bb = build_cost(in.ys, in.ys, CostKind::squared_euclidean, 1.0);
    const auto d = sinkhorn_divergence(DiscreteMeasure{in.xs, in.a}, DiscreteMeasure{in.ys, in.b},
                                       in.c, aa, bb, tight(std::vector<double>{0.01, 0.1, 1.0}[rep % 3]));
    EXPECT_GE(d.value, -1e-9);
  }
}

TEST(SinkhornDivergence, MassMismatchIsAPreconditionError) {
  DiscreteMeasure a{{{0, 0}}, {1.0}}, b{{{1, 1}}, {2.0}};
  const auto ab = build_cost(a.support, b.support, CostKind::squared_euclidean, 1.0);
  const auto aa = build_cost(a.support, a.support, CostKind::squared_euclidean, 1.0);
  const auto bb = build_cost(b.support, b.support, CostKind::squared_euclidean, 1.0);
  EXPECT_THROW(sinkhorn_divergence(a, b, ab, aa, bb, SolverConfig{}), PreconditionError);
}
