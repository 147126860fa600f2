#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "helpers.hpp"
#include "pairlab/forward_models.hpp"

using namespace pairlab;
using namespace testing_util;

namespace {

// Chord length of the line o + t*dir through the square [-h, h]^2, found by
// marching in small steps and refining each boundary crossing by bisection.
double marched_chord(double ox, double oy, double dx, double dy, double h) {
  auto inside = [&](double t) {
    const double x = ox + t * dx, y = oy + t * dy;
    return std::abs(x) < h && std::abs(y) < h;
  };
  const double reach = 4.0 * h + std::hypot(ox, oy);
  const double step = 1e-3;
  double first = NAN, last = NAN;
  for (double t = -reach; t <= reach; t += step) {
    if (inside(t)) {
      if (std::isnan(first)) first = t;
      last = t;
    }
  }
  if (std::isnan(first)) return 0.0;
  auto refine = [&](double out, double in) {
    for (int k = 0; k < 80; ++k) {
      const double mid = 0.5 * (out + in);
      (inside(mid) ? in : out) = mid;
    }
    return 0.5 * (out + in);
  };
  return refine(last + step, last) - refine(first - step, first);
}

}  // namespace

TEST(Radon, OnePixelThroughCentre) {
  const auto op = build_radon(1, 1, 1);
  ASSERT_EQ(op.rows(), 1);
  ASSERT_EQ(op.cols(), 1);
  EXPECT_DOUBLE_EQ(op.matrix(0, 0), 1.0);
}

TEST(Radon, UniformImageMatchesMarchedChords) {
  const int side = 5, detectors = 9, angles = 7;
  const auto op = build_radon(side, angles, detectors);
  const Vector ones = Vector::Ones(side * side);
  const Vector proj = op.apply(ones);
  for (int a = 0; a < angles; ++a) {
    const double th = op.geometry.angles_deg[static_cast<std::size_t>(a)] * std::numbers::pi / 180.0;
    for (int d = 0; d < detectors; ++d) {
      const double off = d - 0.5 * (detectors - 1);
      const double expect = marched_chord(off * std::cos(th), off * std::sin(th), -std::sin(th), std::cos(th), 0.5 * side);
      EXPECT_NEAR(proj(a * detectors + d), expect, 1e-8) << "angle " << a << " detector " << d;
    }
  }
}

TEST(Radon, ZeroAndOneEightyDegreesAreMirrored) {
  const int side = 4, detectors = 6;
  const auto op = build_radon_angles(side, {0.0, 180.0}, detectors);
  Vector img = Vector::Zero(side * side);
  img(0) = 1.0;   // top-left
  img(6) = 0.5;
  img(11) = 0.25;
  const Vector p = op.apply(img);
  for (int d = 0; d < detectors; ++d) EXPECT_NEAR(p(detectors + d), p(detectors - 1 - d), 1e-12);
  EXPECT_GT((p.head(detectors) - p.head(detectors).reverse()).norm(), 0.1);
}

TEST(Radon, NonnegativeAndOutsideRaysAreZero) {
  const auto op = build_radon(4, 5, 15, 0.7);
  EXPECT_GE(op.matrix.minCoeff(), 0.0);
  // Detector offsets beyond the half-diagonal miss the image.
  const auto far = build_radon(2, 3, 9, 1.0);
  for (int a = 0; a < 3; ++a) {
    EXPECT_EQ(far.matrix.row(a * 9).sum(), 0.0);
    EXPECT_EQ(far.matrix.row(a * 9 + 8).sum(), 0.0);
  }
  const Vector img = random_vector(16, 3).cwiseAbs();
  EXPECT_GE(op.apply(img).minCoeff(), 0.0);
}

TEST(Radon, DefaultDeskGeometryShape) {
  const auto op = build_radon(32, 60, 47);
  EXPECT_EQ(op.rows(), 2820);
  EXPECT_EQ(op.cols(), 1024);
  EXPECT_EQ(op.geometry.angle_count(), 60);
  EXPECT_DOUBLE_EQ(op.geometry.angles_deg[59], 177.0);
}

TEST(Phantoms, DeterministicAndClipped) {
  const Matrix a = generate_phantoms(16, 20, 42);
  const Matrix b = generate_phantoms(16, 20, 42);
  EXPECT_TRUE(a == b);
  EXPECT_GE(a.minCoeff(), 0.0);
  EXPECT_LE(a.maxCoeff(), 1.0);
  EXPECT_FALSE(a == generate_phantoms(16, 20, 43));
}

TEST(Phantoms, NonzeroFractionInRange) {
  const Matrix xs = generate_phantoms(32, 1000, 7);
  for (Index i = 0; i < xs.cols(); ++i) {
    const double frac = static_cast<double>((xs.col(i).array() > 0.0).count()) / static_cast<double>(xs.rows());
    EXPECT_GE(frac, 0.05);
    EXPECT_LE(frac, 0.95);
  }
}

TEST(Phantoms, ShiftedSpecIsBrighter) {
  const Matrix base = generate_phantoms(16, 200, 1);
  const Matrix shifted = generate_phantoms(16, 200, 1, PhantomSpec::shifted());
  EXPECT_GT(shifted.mean(), base.mean());
}

TEST(GaussianModels, NearZeroCovarianceCollapsesToMean) {
  GaussianModelSpec spec;
  spec.mean = Vector::LinSpaced(3, 1.0, 3.0);
  spec.covariance = 1e-12 * Matrix::Identity(3, 3);
  const Matrix xs = sample_gaussian_models(spec, 10, 5);
  for (Index i = 0; i < 10; ++i) EXPECT_LT((xs.col(i) - spec.mean).norm(), 1e-5);
}

TEST(GaussianModels, MonteCarloMoments) {
  GaussianModelSpec spec;
  spec.mean = Vector(Eigen::Vector4d(1.0, -2.0, 0.5, 3.0));
  spec.covariance = Matrix::Constant(4, 4, 0.5) + 0.5 * Matrix::Identity(4, 4);
  spec.covariance(0, 3) = spec.covariance(3, 0) = 0.3;
  const int count = 10000;
  const Matrix xs = sample_gaussian_models(spec, count, 77);
  const Vector mean = xs.rowwise().mean();
  for (Index k = 0; k < 4; ++k) {
    const double se = std::sqrt(spec.covariance(k, k) / count);
    EXPECT_LT(std::abs(mean(k) - spec.mean(k)), 5 * se);
  }
  const Matrix centered = xs.colwise() - spec.mean;
  const Matrix second = centered * centered.transpose() / count;
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) EXPECT_LT(std::abs(second(i, j) - spec.covariance(i, j)), 0.1 * std::abs(spec.covariance(i, j)));
}

TEST(GaussianModels, NonSpdCovarianceThrows) {
  GaussianModelSpec spec;
  spec.mean = Vector::Zero(2);
  spec.covariance = Matrix::Zero(2, 2);
  EXPECT_THROW(sample_gaussian_models(spec, 3, 1), ArgumentError);
}

TEST(Observations, ZeroNoiseIsExact) {
  const Matrix a = random_matrix(6, 4, 1);
  const Matrix xs = random_matrix(4, 3, 2);
  EXPECT_TRUE(simulate_observations(a, xs, 0.0, 9) == a * xs);
}

TEST(Observations, NoiseRescaledExactly) {
  const Matrix a = Matrix::Identity(4, 4);
  Matrix xs(4, 1);
  xs << 10.0, 0.0, 0.0, 0.0;  // ||Ax|| = 10
  const Matrix ys = simulate_observations(a, xs, 0.1, 3);
  EXPECT_NEAR((ys - a * xs).norm(), 1.0, 1e-12);
}

TEST(Observations, SeedsChangeNoiseNotItsSize) {
  const Matrix a = random_matrix(20, 8, 4);
  const Matrix xs = random_matrix(8, 5, 5);
  const Matrix clean = a * xs;
  const Matrix y1 = simulate_observations(a, xs, 0.1, 1);
  const Matrix y2 = simulate_observations(a, xs, 0.1, 2);
  EXPECT_FALSE(y1 == y2);
  for (Index i = 0; i < 5; ++i) {
    const double r1 = (y1.col(i) - clean.col(i)).norm() / clean.col(i).norm();
    const double r2 = (y2.col(i) - clean.col(i)).norm() / clean.col(i).norm();
    EXPECT_NEAR(r1, 0.1, 1e-14);
    EXPECT_NEAR(r2, 0.1, 1e-14);
  }
  EXPECT_TRUE(y1 == simulate_observations(a, xs, 0.1, 1));
}

TEST(Masks, PaperSettingZerosFortyFiveOfOneEightyOne) {
  const ObservationShape shape{10, 181};
  for (auto kind : {MaskKind::random_columns, MaskKind::block_columns}) {
    const auto m = make_mask(kind, shape, 45.0 / 181.0, 3);
    EXPECT_EQ(m.zeroed_units().size(), 45u);
    EXPECT_EQ(m.zeroed().size(), 450u);
    std::set<Index> distinct(m.zeroed_units().begin(), m.zeroed_units().end());
    EXPECT_EQ(distinct.size(), 45u);
  }
}

TEST(Masks, BlockIsContiguous) {
  const auto m = make_mask(MaskKind::block_columns, {4, 60}, 0.25, 8);
  const auto& u = m.zeroed_units();
  ASSERT_EQ(u.size(), 15u);
  for (std::size_t k = 1; k < u.size(); ++k) EXPECT_EQ(u[k], u[k - 1] + 1);
}

TEST(Masks, RandomEntriesCount) {
  const auto m = make_mask(MaskKind::random_entries, {47, 60}, 0.9, 5);
  EXPECT_EQ(m.zeroed().size(), static_cast<std::size_t>(std::llround(0.9 * 2820)));
}

TEST(Masks, FractionZeroAndOne) {
  const ObservationShape shape{3, 5};
  const Vector y = random_vector(15, 2);
  for (auto kind : {MaskKind::random_columns, MaskKind::block_columns, MaskKind::random_entries}) {
    EXPECT_TRUE(make_mask(kind, shape, 0.0, 1).apply(y) == y);
    EXPECT_EQ(make_mask(kind, shape, 1.0, 1).apply(y).norm(), 0.0);
  }
  const auto id = make_mask(MaskKind::identity, shape, 0.7, 1);
  EXPECT_TRUE(id.is_identity());
  EXPECT_TRUE(apply_mask(id, y) == y);
}

TEST(Masks, FractionOutOfRangeThrows) {
  EXPECT_THROW(make_mask(MaskKind::random_columns, {3, 5}, 1.5, 1), ArgumentError);
  EXPECT_THROW(make_mask(MaskKind::random_columns, {3, 5}, -0.1, 1), ArgumentError);
}

TEST(Masks, ApplyKeepsObservedEntries) {
  const auto m = MaskOperator(MaskKind::random_entries, {10, 1}, 0.3, 0, {1, 4, 7});
  const Vector y = random_vector(10, 6) + Vector::Constant(10, 3.0);
  const Vector out = apply_mask(m, y);
  int zeros = 0;
  for (Index i = 0; i < 10; ++i) {
    if (i == 1 || i == 4 || i == 7) {
      EXPECT_EQ(out(i), 0.0);
      ++zeros;
    } else {
      EXPECT_EQ(out(i), y(i));
    }
  }
  EXPECT_EQ(zeros, 3);
}

TEST(Masks, IdempotentLinearAndContractive) {
  const auto m = make_mask(MaskKind::random_columns, {5, 12}, 0.4, 9);
  const Vector u = random_vector(60, 1), v = random_vector(60, 2);
  EXPECT_TRUE(m.apply(m.apply(u)) == m.apply(u));
  EXPECT_LT((m.apply(Vector(2.0 * u - 3.0 * v)) - (2.0 * m.apply(u) - 3.0 * m.apply(v))).norm(), 1e-14);
  EXPECT_LE(m.apply(u).norm(), u.norm());
  // Norm preserved off the zero set, annihilated on it.
  const Vector off = m.apply(u);
  EXPECT_NEAR(m.apply(off).norm(), off.norm(), 1e-15);
  const Vector on = u - off;
  EXPECT_EQ(m.apply(on).norm(), 0.0);
}

TEST(Masks, ShapeMismatchThrows) {
  const auto m = make_mask(MaskKind::random_columns, {5, 12}, 0.4, 9);
  EXPECT_THROW(m.apply(Vector::Zero(59)), ArgumentError);
}

TEST(Masks, DeterministicPerSeed) {
  const auto a = make_mask(MaskKind::random_columns, {5, 60}, 0.25, 1);
  const auto b = make_mask(MaskKind::random_columns, {5, 60}, 0.25, 1);
  const auto c = make_mask(MaskKind::random_columns, {5, 60}, 0.25, 2);
  EXPECT_EQ(a.zeroed(), b.zeroed());
  EXPECT_NE(a.zeroed(), c.zeroed());
  EXPECT_EQ(parse_mask_kind(to_string(MaskKind::block_columns)), MaskKind::block_columns);
}
