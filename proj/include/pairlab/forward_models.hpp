#pragma once

// Synthetic problem generation: a parallel-beam tomography operator,
// ellipse phantoms, Gaussian parameter samples, noisy observations and
// zeroing masks over sinogram entries.
//
// Layout conventions used throughout:
//   * a parameter sample is a grid_side x grid_side image flattened row-major
//     (row 0 at the top), pixel side length 1, image centered at the origin;
//   * an observation (sinogram) is flattened column-major with detectors as
//     rows and angles as columns: flat index = angle * detector_count + detector;
//   * sample matrices hold one sample per column.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pairlab/error.hpp"
#include "pairlab/linalg.hpp"
#include "pairlab/random.hpp"

namespace pairlab {

struct Geometry {
  int grid_side = 0;
  std::vector<double> angles_deg;
  int detector_count = 0;
  double detector_spacing = 1.0;

  int angle_count() const { return static_cast<int>(angles_deg.size()); }
  Index parameter_size() const { return Index{grid_side} * grid_side; }
  Index observation_size() const { return Index{detector_count} * angle_count(); }
};

struct ForwardOperator {
  Matrix matrix;  // q x n, nonnegative intersection lengths
  Geometry geometry;

  Index rows() const { return matrix.rows(); }
  Index cols() const { return matrix.cols(); }
  Vector apply(const Vector& x) const { return matrix * x; }
  Matrix apply(const Matrix& xs) const { return matrix * xs; }
};

namespace detail {

// Length of the segment of the line p(t) = origin + t * dir (|dir| = 1) inside
// the half-open box [x0, x1) x [y0, y1). Axis-parallel lines lying on a box
// edge belong only to the box whose lower edge they touch.
inline double chord_in_box(double ox, double oy, double dx, double dy, double x0, double x1,
                           double y0, double y1) {
  double t_lo = -std::numeric_limits<double>::infinity();
  double t_hi = std::numeric_limits<double>::infinity();
  auto clip = [&](double o, double d, double lo, double hi) {
    if (d == 0.0) return o >= lo && o < hi;
    double ta = (lo - o) / d;
    double tb = (hi - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t_lo = std::max(t_lo, ta);
    t_hi = std::min(t_hi, tb);
    return true;
  };
  if (!clip(ox, dx, x0, x1)) return 0.0;
  if (!clip(oy, dy, y0, y1)) return 0.0;
  return t_hi > t_lo ? t_hi - t_lo : 0.0;
}

inline double snap_trig(double v) { return std::abs(v) < 1e-12 ? 0.0 : v; }

}  // namespace detail

/// Parallel-beam projector with exact ray-pixel intersection lengths for an
/// explicit list of angles (degrees).
inline ForwardOperator build_radon_angles(int grid_side, std::vector<double> angles_deg,
                                          int detector_count, double detector_spacing = 1.0) {
  if (grid_side < 1 || detector_count < 1 || angles_deg.empty()) {
    throw ArgumentError("build_radon: grid side, angle count and detector count must be >= 1");
  }
  if (!(detector_spacing > 0.0)) throw ArgumentError("build_radon: detector spacing must be positive");

  ForwardOperator op;
  op.geometry.grid_side = grid_side;
  op.geometry.angles_deg = std::move(angles_deg);
  op.geometry.detector_count = detector_count;
  op.geometry.detector_spacing = detector_spacing;

  const Index n = op.geometry.parameter_size();
  const Index q = op.geometry.observation_size();
  op.matrix = Matrix::Zero(q, n);
  const double half = 0.5 * grid_side;
  const double center = 0.5 * (detector_count - 1);

  for (int a = 0; a < op.geometry.angle_count(); ++a) {
    const double theta = op.geometry.angles_deg[static_cast<std::size_t>(a)] * std::numbers::pi / 180.0;
    const double c = detail::snap_trig(std::cos(theta));
    const double s = detail::snap_trig(std::sin(theta));
    // Detector axis (c, s); ray direction (-s, c).
    for (int d = 0; d < detector_count; ++d) {
      const double offset = (d - center) * detector_spacing;
      const double ox = offset * c;
      const double oy = offset * s;
      const Index row = Index{a} * detector_count + d;
      for (int r = 0; r < grid_side; ++r) {
        const double y1 = half - r;
        const double y0 = y1 - 1.0;
        for (int col = 0; col < grid_side; ++col) {
          const double x0 = col - half;
          const double len = detail::chord_in_box(ox, oy, -s, c, x0, x0 + 1.0, y0, y1);
          if (len > 0.0) op.matrix(row, Index{r} * grid_side + col) = len;
        }
      }
    }
  }
  return op;
}

/// Angles uniformly spaced over [0, 180) degrees.
inline ForwardOperator build_radon(int grid_side, int angle_count, int detector_count,
                                   double detector_spacing = 1.0) {
  if (angle_count < 1) throw ArgumentError("build_radon: angle count must be >= 1");
  std::vector<double> angles(static_cast<std::size_t>(angle_count));
  for (int i = 0; i < angle_count; ++i) angles[static_cast<std::size_t>(i)] = 180.0 * i / angle_count;
  return build_radon_angles(grid_side, std::move(angles), detector_count, detector_spacing);
}

// ---------------------------------------------------------------------------
// Phantoms

struct PhantomSpec {
  int min_ellipses = 2;
  int max_ellipses = 6;
  double min_intensity = 0.2;
  double max_intensity = 0.6;
  double min_semi_axis = 0.10;  // fraction of grid side
  double max_semi_axis = 0.35;
  double center_region = 0.80;  // centers uniform in the inner fraction of the grid

  /// Shifted distribution used for out-of-distribution sets.
  static PhantomSpec shifted() {
    PhantomSpec s;
    s.min_ellipses = 5;
    s.max_ellipses = 9;
    s.min_intensity = 0.5;
    s.max_intensity = 0.9;
    return s;
  }
};

/// Random ellipse images in [0, 1], one per column (grid_side^2 x count).
inline Matrix generate_phantoms(int grid_side, int count, std::uint64_t seed,
                                const PhantomSpec& spec = {}) {
  if (grid_side < 1 || count < 1) throw ArgumentError("generate_phantoms: sizes must be >= 1");
  const Index n = Index{grid_side} * grid_side;
  Matrix out = Matrix::Zero(n, count);
  const double side = grid_side;
  const double half = 0.5 * side;
  for (int i = 0; i < count; ++i) {
    Stream rng(seed, static_cast<std::uint64_t>(i));
    const int span = spec.max_ellipses - spec.min_ellipses + 1;
    const int ellipses = spec.min_ellipses + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)));
    auto img = out.col(i);
    for (int e = 0; e < ellipses; ++e) {
      const double cx = rng.uniform(-0.5, 0.5) * spec.center_region * side;
      const double cy = rng.uniform(-0.5, 0.5) * spec.center_region * side;
      const double ax = rng.uniform(spec.min_semi_axis, spec.max_semi_axis) * side;
      const double ay = rng.uniform(spec.min_semi_axis, spec.max_semi_axis) * side;
      const double phi = rng.uniform(0.0, std::numbers::pi);
      const double value = rng.uniform(spec.min_intensity, spec.max_intensity);
      const double cp = std::cos(phi), sp = std::sin(phi);
      for (int r = 0; r < grid_side; ++r) {
        const double py = half - r - 0.5 - cy;
        for (int c = 0; c < grid_side; ++c) {
          const double px = c - half + 0.5 - cx;
          const double u = (cp * px + sp * py) / ax;
          const double v = (-sp * px + cp * py) / ay;
          if (u * u + v * v <= 1.0) img(Index{r} * grid_side + c) += value;
        }
      }
    }
    img = img.cwiseMax(0.0).cwiseMin(1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian parameter models

struct GaussianModelSpec {
  Vector mean;        // n
  Matrix covariance;  // n x n, SPD
  Matrix noise_covariance;  // q x q, SPD

  /// Second moment E[X X^T] = covariance + mean mean^T.
  Matrix second_moment() const { return covariance + mean * mean.transpose(); }
};

/// samples = mean + cov_sqrt(covariance) * w, w standard normal; n x count.
inline Matrix sample_gaussian_models(const GaussianModelSpec& spec, int count, std::uint64_t seed) {
  if (count < 1) throw ArgumentError("sample_gaussian_models: count must be >= 1");
  if (spec.covariance.rows() != spec.mean.size()) {
    throw ArgumentError("sample_gaussian_models: mean/covariance dimension mismatch");
  }
  const Matrix l = cov_sqrt(spec.covariance);
  const Index n = spec.mean.size();
  Matrix out(n, count);
  Vector w(n);
  for (int i = 0; i < count; ++i) {
    Stream rng(seed, static_cast<std::uint64_t>(i));
    for (Index k = 0; k < n; ++k) w(k) = rng.normal();
    out.col(i) = spec.mean + l * w;
  }
  return out;
}

/// Draws from N(0, covariance) with the same per-sample streams.
inline Matrix sample_gaussian_noise(const Matrix& covariance, int count, std::uint64_t seed) {
  const Matrix l = cov_sqrt(covariance);
  Matrix out(covariance.rows(), count);
  Vector w(covariance.rows());
  for (int i = 0; i < count; ++i) {
    Stream rng(seed, static_cast<std::uint64_t>(i));
    for (Index k = 0; k < w.size(); ++k) w(k) = rng.normal();
    out.col(i) = l * w;
  }
  return out;
}

/// y = A x + eps per column, with eps iid Gaussian rescaled so that
/// ||eps|| = noise_fraction * ||A x|| exactly.
inline Matrix simulate_observations(const Matrix& a, const Matrix& xs, double noise_fraction,
                                    std::uint64_t seed) {
  if (!(noise_fraction >= 0.0)) throw ArgumentError("simulate_observations: noise fraction must be >= 0");
  if (a.cols() != xs.rows()) throw ArgumentError("simulate_observations: operator/sample size mismatch");
  Matrix ys = a * xs;
  if (noise_fraction == 0.0) return ys;
  Vector eps(a.rows());
  for (Index i = 0; i < xs.cols(); ++i) {
    Stream rng(seed, static_cast<std::uint64_t>(i));
    for (Index k = 0; k < eps.size(); ++k) eps(k) = rng.normal();
    const double clean = ys.col(i).norm();
    const double raw = eps.norm();
    if (clean == 0.0 || raw == 0.0) continue;
    ys.col(i) += eps * (noise_fraction * clean / raw);
  }
  return ys;
}

inline Matrix simulate_observations(const ForwardOperator& op, const Matrix& xs,
                                    double noise_fraction, std::uint64_t seed) {
  return simulate_observations(op.matrix, xs, noise_fraction, seed);
}

// ---------------------------------------------------------------------------
// Masks

enum class MaskKind { identity, random_columns, block_columns, random_entries };

inline std::string_view to_string(MaskKind k) {
  switch (k) {
    case MaskKind::identity: return "identity";
    case MaskKind::random_columns: return "random-columns";
    case MaskKind::block_columns: return "block-columns";
    case MaskKind::random_entries: return "random-entries";
  }
  return "identity";
}

inline MaskKind parse_mask_kind(std::string_view s) {
  if (s == "identity" || s == "none") return MaskKind::identity;
  if (s == "random-columns") return MaskKind::random_columns;
  if (s == "block-columns") return MaskKind::block_columns;
  if (s == "random-entries") return MaskKind::random_entries;
  throw ArgumentError("unknown mask kind '" + std::string(s) + "'");
}

/// Sinogram shape: detectors x angles. A flat observation of length q is {q, 1}.
struct ObservationShape {
  Index detectors = 0;
  Index angles = 1;
  Index size() const { return detectors * angles; }
  bool operator==(const ObservationShape&) const = default;
};

/// Deterministic zeroing pattern over observation entries.
class MaskOperator {
 public:
  MaskOperator() = default;
  MaskOperator(MaskKind kind, ObservationShape shape, double fraction, std::uint64_t seed,
               std::vector<Index> zeroed_units)
      : kind_(kind), shape_(shape), fraction_(fraction), seed_(seed),
        units_(std::move(zeroed_units)), observed_(static_cast<std::size_t>(shape.size()), 1) {
    std::sort(units_.begin(), units_.end());
    const bool by_column = kind_ == MaskKind::random_columns || kind_ == MaskKind::block_columns;
    for (Index u : units_) {
      if (by_column) {
        for (Index d = 0; d < shape_.detectors; ++d) zeroed_.push_back(u * shape_.detectors + d);
      } else {
        zeroed_.push_back(u);
      }
    }
    std::sort(zeroed_.begin(), zeroed_.end());
    for (Index z : zeroed_) observed_[static_cast<std::size_t>(z)] = 0;
  }

  MaskKind kind() const { return kind_; }
  const ObservationShape& shape() const { return shape_; }
  double fraction() const { return fraction_; }
  std::uint64_t seed() const { return seed_; }
  /// Zeroed columns (column kinds) or entries (entry kind).
  const std::vector<Index>& zeroed_units() const { return units_; }
  /// Zeroed flat observation indices, ascending.
  const std::vector<Index>& zeroed() const { return zeroed_; }
  Index size() const { return shape_.size(); }
  Index observed_count() const { return size() - static_cast<Index>(zeroed_.size()); }
  bool observed(Index i) const { return observed_[static_cast<std::size_t>(i)] != 0; }
  bool is_identity() const { return zeroed_.empty(); }

  /// Observed flat indices, ascending.
  std::vector<Index> observed_indices() const {
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(observed_count()));
    for (Index i = 0; i < size(); ++i)
      if (observed(i)) out.push_back(i);
    return out;
  }

  Vector apply(const Vector& y) const {
    check(y.size());
    Vector out = y;
    for (Index z : zeroed_) out(z) = 0.0;
    return out;
  }

  /// Applies the mask to every column (or to rows of an operator with q rows).
  Matrix apply_rows(const Matrix& m) const {
    check(m.rows());
    Matrix out = m;
    for (Index z : zeroed_) out.row(z).setZero();
    return out;
  }

 private:
  void check(Index len) const {
    if (len != size()) {
      std::ostringstream msg;
      msg << "mask: observation length " << len << " does not match mask size " << size();
      throw ArgumentError(msg.str());
    }
  }

  MaskKind kind_ = MaskKind::identity;
  ObservationShape shape_{};
  double fraction_ = 0.0;
  std::uint64_t seed_ = 0;
  std::vector<Index> units_;
  std::vector<Index> zeroed_;
  std::vector<std::uint8_t> observed_;
};

inline MaskOperator make_mask(MaskKind kind, ObservationShape shape, double fraction,
                              std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    std::ostringstream msg;
    msg << "make_mask: fraction " << fraction << " outside [0, 1]";
    throw ArgumentError(msg.str());
  }
  if (shape.detectors < 1 || shape.angles < 1) throw ArgumentError("make_mask: empty observation shape");
  std::vector<Index> units;
  Stream rng(seed, 0);
  switch (kind) {
    case MaskKind::identity:
      break;
    case MaskKind::random_columns: {
      const auto k = static_cast<std::uint64_t>(std::llround(fraction * static_cast<double>(shape.angles)));
      for (auto c : rng.choose(static_cast<std::uint64_t>(shape.angles), k)) units.push_back(static_cast<Index>(c));
      break;
    }
    case MaskKind::block_columns: {
      const Index k = static_cast<Index>(std::llround(fraction * static_cast<double>(shape.angles)));
      if (k > 0) {
        const Index start = static_cast<Index>(rng.below(static_cast<std::uint64_t>(shape.angles - k + 1)));
        for (Index c = 0; c < k; ++c) units.push_back(start + c);
      }
      break;
    }
    case MaskKind::random_entries: {
      const auto k = static_cast<std::uint64_t>(std::llround(fraction * static_cast<double>(shape.size())));
      for (auto c : rng.choose(static_cast<std::uint64_t>(shape.size()), k)) units.push_back(static_cast<Index>(c));
      break;
    }
  }
  return MaskOperator(kind, shape, kind == MaskKind::identity ? 0.0 : fraction, seed, std::move(units));
}

inline MaskOperator identity_mask(ObservationShape shape) {
  return make_mask(MaskKind::identity, shape, 0.0, 0);
}

inline Vector apply_mask(const MaskOperator& p, const Vector& y) { return p.apply(y); }

}  // namespace pairlab
