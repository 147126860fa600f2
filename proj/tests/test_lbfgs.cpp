#include <gtest/gtest.h>

#include "helpers.hpp"
#include "pairlab/lbfgs.hpp"

using namespace pairlab;
using namespace testing_util;

namespace {

struct Quadratic {
  Matrix h;
  Vector c;
  double operator()(const Vector& z, Vector& g) const {
    const Vector d = z - c;
    g = h * d;
    return 0.5 * d.dot(g);
  }
};

double rosenbrock(const Vector& z, Vector& g) {
  const double a = 1 - z(0), b = z(1) - z(0) * z(0);
  g.resize(2);
  g(0) = -2 * a - 400 * z(0) * b;
  g(1) = 200 * b;
  return a * a + 100 * b * b;
}

}  // namespace

TEST(Lbfgs, IsotropicQuadraticInOneIteration) {
  const Quadratic f{Matrix::Identity(4, 4), random_vector(4, 1)};
  const auto r = lbfgs_minimize(f, Vector::Zero(4), LbfgsConfig{});
  EXPECT_EQ(r.iterations, 1);
  EXPECT_EQ(r.reason, Termination::gradient_tolerance);
  EXPECT_LT((r.z - f.c).norm(), 1e-10);
}

TEST(Lbfgs, IllConditionedQuadraticConverges) {
  Vector d = Vector::LinSpaced(10, 1.0, 100.0);
  const Matrix q = random_matrix(10, 10, 2).householderQr().householderQ();
  const Quadratic f{q * d.asDiagonal() * q.transpose(), random_vector(10, 3)};
  LbfgsConfig cfg;
  cfg.max_iterations = 30;
  cfg.gradient_tolerance = 0.0;
  const auto r = lbfgs_minimize(f, Vector::Zero(10), cfg);
  EXPECT_LT(r.value, 1e-10);
  EXPECT_LE(r.iterations, 30);
}

TEST(Lbfgs, RosenbrockFromStandardStart) {
  Vector z0(2);
  z0 << -1.2, 1.0;
  LbfgsConfig cfg;
  cfg.max_iterations = 200;
  const auto r = lbfgs_minimize(rosenbrock, z0, cfg);
  EXPECT_LT((r.z - Vector::Ones(2)).norm(), 1e-6);
}

TEST(Lbfgs, AcceptedStepsSatisfyStrongWolfe) {
  Vector z0(2);
  z0 << -1.2, 1.0;
  LbfgsConfig cfg;
  cfg.max_iterations = 40;
  const auto r = lbfgs_minimize(rosenbrock, z0, cfg);
  ASSERT_FALSE(r.steps.empty());
  for (const auto& s : r.steps) {
    EXPECT_LT(s.slope0, 0.0);
    EXPECT_TRUE(s.sufficient_decrease(cfg.c1));
    EXPECT_TRUE(s.curvature(cfg.c2));
  }
}

TEST(Lbfgs, HistoryIsMonotoneAndConsistent) {
  Vector z0(2);
  z0 << -1.2, 1.0;
  const auto r = lbfgs_minimize(rosenbrock, z0, LbfgsConfig{});
  ASSERT_EQ(r.history.size(), r.steps.size() + 1);
  Vector g;
  EXPECT_DOUBLE_EQ(r.history.front(), rosenbrock(z0, g));
  for (std::size_t k = 1; k < r.history.size(); ++k) EXPECT_LE(r.history[k], r.history[k - 1]);
  EXPECT_DOUBLE_EQ(r.history.back(), r.value);
  EXPECT_GE(r.evaluations, r.iterations);
}

TEST(Lbfgs, IterationBudgetIsRespected) {
  Vector z0(2);
  z0 << -1.2, 1.0;
  LbfgsConfig cfg;
  cfg.max_iterations = 3;
  const auto r = lbfgs_minimize(rosenbrock, z0, cfg);
  EXPECT_EQ(r.iterations, 3);
  EXPECT_EQ(r.reason, Termination::max_iterations);
  cfg.max_iterations = 0;
  const auto none = lbfgs_minimize(rosenbrock, z0, cfg);
  EXPECT_TRUE(none.z == z0);
}

TEST(Lbfgs, DeterministicAndValidated) {
  Vector z0(2);
  z0 << -1.2, 1.0;
  const auto a = lbfgs_minimize(rosenbrock, z0, LbfgsConfig{});
  const auto b = lbfgs_minimize(rosenbrock, z0, LbfgsConfig{});
  EXPECT_TRUE(a.z == b.z);
  EXPECT_EQ(a.history, b.history);
  LbfgsConfig bad;
  bad.c1 = 0.95;
  EXPECT_THROW(lbfgs_minimize(rosenbrock, z0, bad), ArgumentError);
  EXPECT_EQ(to_string(Termination::line_search_failure), "line_search_failure");
}
