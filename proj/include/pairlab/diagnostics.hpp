#pragma once

// Reconstruction metrics, the two PAIR out-of-distribution metrics, and
// empirical certificates for the LSI stability bounds.
//
// Bound quantities live in the pair's internal coordinates (normalized for
// trained models, raw for linear pairs).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <type_traits>
#include <vector>

#include "pairlab/error.hpp"
#include "pairlab/forward_models.hpp"
#include "pairlab/linalg.hpp"
#include "pairlab/linear_pair.hpp"
#include "pairlab/lsi.hpp"
#include "pairlab/random.hpp"

namespace pairlab {

/// ||pred - truth|| / ||truth||.
inline double rre(const Vector& pred, const Vector& truth) {
  if (pred.size() != truth.size()) throw ArgumentError("rre: length mismatch");
  const double den = truth.norm();
  if (!(den > 0.0)) throw ArgumentError("rre: ground truth is zero");
  return (pred - truth).norm() / den;
}

namespace detail {

// Symmetric reflection (d c b a | a b c d | d c b a), valid for any offset.
inline Index reflect(Index i, Index n) {
  const Index period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

}  // namespace detail

/// Mean SSIM over 7x7 uniform windows centred on every pixel (stride 1,
/// reflected borders, population statistics), C1 = (0.01 L)^2, C2 = (0.03 L)^2.
inline double ssim(const Matrix& a, const Matrix& b, double dynamic_range) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ArgumentError("ssim: shape mismatch");
  if (!(dynamic_range > 0.0)) throw ArgumentError("ssim: dynamic range must be positive");
  if (a.size() == 0) throw ArgumentError("ssim: empty image");
  constexpr Index half = 3;
  constexpr double count = 49.0;
  const double c1 = std::pow(0.01 * dynamic_range, 2);
  const double c2 = std::pow(0.03 * dynamic_range, 2);
  const Index rows = a.rows(), cols = a.cols();
  double total = 0.0;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (Index dr = -half; dr <= half; ++dr) {
        const Index rr = detail::reflect(r + dr, rows);
        for (Index dc = -half; dc <= half; ++dc) {
          const Index cc = detail::reflect(c + dc, cols);
          const double va = a(rr, cc), vb = b(rr, cc);
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      }
      const double ma = sa / count, mb = sb / count;
      const double va = saa / count - ma * ma;
      const double vb = sbb / count - mb * mb;
      const double cov = sab / count - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  }
  return total / static_cast<double>(rows * cols);
}

/// SSIM of a flattened row-major square image against ground truth, with
/// L = max - min of the ground truth (1 when it is constant).
inline double ssim_image(const Vector& pred, const Vector& truth, int side) {
  if (pred.size() != Index{side} * side || truth.size() != pred.size()) {
    throw ArgumentError("ssim: image length does not match grid side");
  }
  double range = truth.maxCoeff() - truth.minCoeff();
  if (!(range > 0.0)) range = 1.0;
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Matrix a = Eigen::Map<const RowMajor>(pred.data(), side, side);
  const Matrix b = Eigen::Map<const RowMajor>(truth.data(), side, side);
  return ssim(a, b, range);
}

struct OodMetrics {
  double residual_estimate = 0.0;  // ||surrogate_forward(x_pred) - y|| / ||y||
  double autoencode_diff = 0.0;    // ||d_y(z_y) - y|| / ||y||
};

/// Both OOD ratios in physical coordinates; x_pred and y are physical, z_y latent.
template <PairedAutoencoder Pair>
OodMetrics ood_metrics(const Pair& pair, const Vector& x_pred, const Vector& z_y, const Vector& y) {
  const double den = y.norm();
  if (!(den > 0.0)) throw ArgumentError("ood_metrics: observation is zero");
  const Normalization norm = pair.normalization();
  const Vector surrogate = norm.denormalize_y(pair.decode_y(pair.map_fwd(pair.encode_x(norm.normalize_x(x_pred)))));
  const Vector auto_y = norm.denormalize_y(pair.decode_y(z_y));
  if (surrogate.size() != y.size()) throw ArgumentError("ood_metrics: observation length mismatch");
  return {(surrogate - y).norm() / den, (auto_y - y).norm() / den};
}

struct MetricsRecord {
  Index sample_id = 0;
  std::string method;
  std::string mask_kind;
  double missing_fraction = 0.0;
  double rre = 0.0;
  double ssim = 0.0;
  double residual_estimate = 0.0;
  double autoencode_diff = 0.0;
};

// ---------------------------------------------------------------------------
// Certificates

struct BoundConstants {
  double eps_x = 0.0;
  double eps_y = 0.0;
  double gamma_m = 0.0;
  double delta = 0.0;
  double L_dx = 0.0;
  double L_mbwd = 0.0;
  double L_ey = 0.0;
  double L_A = 0.0;
  double alpha_P = 0.0;
  double beta_P = 0.0;
  std::string sample_set;
};

/// L_dx (L_mbwd L_ey (beta/alpha eps_y + delta) + gamma_m) + eps_x; infinite when alpha = 0.
inline double error_bound(const BoundConstants& c, double alpha_p) {
  if (!(alpha_p > 0.0)) return std::numeric_limits<double>::infinity();
  return c.L_dx * (c.L_mbwd * c.L_ey * (c.beta_P / alpha_p * c.eps_y + c.delta) + c.gamma_m) + c.eps_x;
}

/// beta_P L_A (error bound) + beta_P ||noise||.
inline double residual_bound(const BoundConstants& c, double err_bound, double noise_norm) {
  return c.beta_P * c.L_A * err_bound + c.beta_P * noise_norm;
}

namespace detail {

// Pointwise approximation errors of one (x, y) sample in internal coordinates.
struct SampleErrors {
  double eps_x, eps_y, gamma_m, delta;
};

template <PairedAutoencoder Pair>
SampleErrors sample_errors(const Pair& p, const Vector& xn, const Vector& yn) {
  const Vector zx = p.encode_x(xn);
  const Vector mf = p.map_fwd(zx);
  return {(p.decode_x(zx) - xn).norm(), (p.decode_y(p.encode_y(yn)) - yn).norm(),
          (p.map_bwd(mf) - zx).norm(), (yn - p.decode_y(mf)).norm()};
}

inline Vector unit_direction(Stream& rng, Index n) {
  Vector u(n);
  for (Index i = 0; i < n; ++i) u(i) = rng.normal();
  const double nu = u.norm();
  return nu > 0.0 ? Vector(u / nu) : u;
}

}  // namespace detail

struct EstimateOptions {
  int pair_count = 200;
  std::uint64_t seed = 0;
  double perturbation = 0.01;  // radius of the local perturbation pairs (normalized units)
};

/// Sampled constants on a calibration set (physical samples, one per column).
/// Error terms are maxima over the samples; Lipschitz constants and alpha/beta
/// come from random sample pairs plus perturbation pairs, so they are lower
/// bounds on the true constants. The sample set for alpha/beta is the
/// observations together with their autoencoded versions.
template <PairedAutoencoder Pair>
BoundConstants estimate_constants(const Pair& pair, const Matrix& a, const MaskOperator& mask,
                                  const Matrix& xs, const Matrix& ys, const EstimateOptions& opt = {}) {
  if (xs.cols() == 0 || xs.cols() != ys.cols()) throw ArgumentError("estimate_constants: empty or unpaired sample set");
  if (opt.pair_count < 1) throw ArgumentError("estimate_constants: pair_count must be >= 1");
  const Normalization norm = pair.normalization();
  const Index count = xs.cols();
  BoundConstants c;
  c.alpha_P = std::numeric_limits<double>::infinity();

  std::vector<Vector> xn(static_cast<std::size_t>(count)), yn(xn.size()), zx(xn.size()), zy(xn.size()), s_set;
  for (Index i = 0; i < count; ++i) {
    const auto k = static_cast<std::size_t>(i);
    xn[k] = norm.normalize_x(Vector(xs.col(i)));
    yn[k] = norm.normalize_y(Vector(ys.col(i)));
    zx[k] = pair.encode_x(xn[k]);
    zy[k] = pair.encode_y(yn[k]);
    const auto e = detail::sample_errors(pair, xn[k], yn[k]);
    c.eps_x = std::max(c.eps_x, e.eps_x);
    c.eps_y = std::max(c.eps_y, e.eps_y);
    c.gamma_m = std::max(c.gamma_m, e.gamma_m);
    c.delta = std::max(c.delta, e.delta);
    s_set.push_back(yn[k]);
    s_set.push_back(pair.decode_y(zy[k]));
  }

  const double a_scale = norm.x_std / norm.y_std;
  auto ratio = [](const Vector& fu, const Vector& fv, const Vector& u, const Vector& v) {
    const double d = (u - v).norm();
    return d > 0.0 ? (fu - fv).norm() / d : -1.0;
  };
  auto track_lipschitz = [&](const Vector& xu, const Vector& xv, const Vector& zxu, const Vector& zxv,
                             const Vector& yu, const Vector& yv, const Vector& zyu, const Vector& zyv) {
    c.L_dx = std::max(c.L_dx, ratio(pair.decode_x(zxu), pair.decode_x(zxv), zxu, zxv));
    c.L_mbwd = std::max(c.L_mbwd, ratio(pair.map_bwd(zyu), pair.map_bwd(zyv), zyu, zyv));
    c.L_ey = std::max(c.L_ey, ratio(pair.encode_y(yu), pair.encode_y(yv), yu, yv));
    const double dx = (xu - xv).norm();
    if (dx > 0.0) c.L_A = std::max(c.L_A, (a * (xu - xv)).norm() * a_scale / dx);
  };
  auto track_mask = [&](const Vector& w1, const Vector& w2) {
    const double d = (w1 - w2).norm();
    if (!(d > 0.0)) return;
    const double r = mask.apply(Vector(w1 - w2)).norm() / d;
    c.alpha_P = std::min(c.alpha_P, r);
    c.beta_P = std::max(c.beta_P, r);
  };

  Stream rng(opt.seed, 0);
  for (int k = 0; k < opt.pair_count; ++k) {
    const auto i = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(count)));
    const auto j = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(count)));
    if (i != j) track_lipschitz(xn[i], xn[j], zx[i], zx[j], yn[i], yn[j], zy[i], zy[j]);
    // Local pair around sample i.
    const double r = opt.perturbation;
    const Vector xp = xn[i] + r * detail::unit_direction(rng, xn[i].size());
    const Vector zxp = zx[i] + r * detail::unit_direction(rng, zx[i].size());
    const Vector yp = yn[i] + r * detail::unit_direction(rng, yn[i].size());
    const Vector zyp = zy[i] + r * detail::unit_direction(rng, zy[i].size());
    track_lipschitz(xn[i], xp, zx[i], zxp, yn[i], yp, zy[i], zyp);

    const auto si = static_cast<std::size_t>(rng.below(s_set.size()));
    const auto sj = static_cast<std::size_t>(rng.below(s_set.size()));
    if (si != sj) track_mask(s_set[si], s_set[sj]);
    track_mask(s_set[si], Vector(s_set[si] + r * detail::unit_direction(rng, s_set[si].size())));
  }
  if (!std::isfinite(c.alpha_P)) c.alpha_P = 0.0;
  c.sample_set = "sampled: " + std::to_string(count) + " calibration samples, " +
                 std::to_string(opt.pair_count) + " sample pairs + perturbation pairs (lower bounds)";
  return c;
}

/// Exact constants of a linear pair: operator norms of D_x, M_bwd, E_y, A and
/// beta_P = 1. Error terms and alpha_P are left for the caller (they depend on
/// the sample set).
inline BoundConstants spectral_constants(const LinearPair& p, const Matrix& a, const MaskOperator& mask) {
  BoundConstants c;
  c.L_dx = spectral_norm(p.Dx);
  c.L_mbwd = spectral_norm(p.Mbwd);
  c.L_ey = spectral_norm(p.Ey);
  c.L_A = spectral_norm(a);
  c.beta_P = mask.observed_count() > 0 ? 1.0 : 0.0;
  c.alpha_P = c.beta_P;
  c.sample_set = "spectral";
  return c;
}

/// Raises the error terms of `c` to cover the given samples (physical columns).
template <PairedAutoencoder Pair>
void cover_samples(BoundConstants& c, const Pair& pair, const Matrix& xs, const Matrix& ys) {
  const Normalization norm = pair.normalization();
  for (Index i = 0; i < xs.cols(); ++i) {
    const auto e = detail::sample_errors(pair, norm.normalize_x(Vector(xs.col(i))), norm.normalize_y(Vector(ys.col(i))));
    c.eps_x = std::max(c.eps_x, e.eps_x);
    c.eps_y = std::max(c.eps_y, e.eps_y);
    c.gamma_m = std::max(c.gamma_m, e.gamma_m);
    c.delta = std::max(c.delta, e.delta);
  }
}

struct BoundRow {
  Index sample_id = 0;
  double alpha_P = 0.0;
  double error_actual = 0.0;
  double error_predicted = 0.0;
  bool error_ok = false;
  double residual_actual = 0.0;
  double residual_predicted = 0.0;
  bool residual_ok = false;
  double statement1_initial = 0.0;
  double statement1_final = 0.0;
  bool statement1_ok = false;
  bool vacuous = false;
  double rre = 0.0;
};

struct BoundReport {
  BoundConstants constants;
  std::vector<BoundRow> rows;

  double error_rate() const { return rate([](const BoundRow& r) { return r.error_ok; }); }
  double residual_rate() const { return rate([](const BoundRow& r) { return r.residual_ok; }); }
  double statement1_rate() const { return rate([](const BoundRow& r) { return r.statement1_ok; }); }

 private:
  template <typename F>
  double rate(F f) const {
    if (rows.empty()) return 0.0;
    return static_cast<double>(std::count_if(rows.begin(), rows.end(), f)) / static_cast<double>(rows.size());
  }
};

struct ReportOptions {
  LsiConfig lsi{};
  /// Use alpha_P measured on this sample's own set {y, d_y(z_hat)} (exact for
  /// the two points the bound involves) instead of the constant.
  bool per_sample_alpha = false;
  /// Raise the error terms to cover each test sample itself.
  bool cover_test_sample = false;
};

/// Evaluates the error and residual bounds on test samples (physical columns
/// of xs, ys; noise = ys - A xs). The LSI estimate comes from the closed form
/// for linear pairs and from observation-space L-BFGS otherwise; the
/// Statement-1 inequality is always checked on an L-BFGS run from e_y(y_sub).
template <PairedAutoencoder Pair>
BoundReport bound_report(const BoundConstants& constants, const Pair& pair, const Matrix& a,
                         const MaskOperator& mask, const Matrix& xs, const Matrix& ys,
                         const ReportOptions& opt = {}) {
  if (xs.cols() != ys.cols()) throw ArgumentError("bound_report: unpaired samples");
  const Normalization norm = pair.normalization();
  BoundReport rep;
  rep.constants = constants;
  for (Index i = 0; i < xs.cols(); ++i) {
    const Vector x = xs.col(i), y = ys.col(i);
    const Vector xn = norm.normalize_x(x), yn = norm.normalize_y(y);
    const Vector y_sub = mask.apply(y);
    BoundConstants c = constants;
    if (opt.cover_test_sample) {
      const auto e = detail::sample_errors(pair, xn, yn);
      c.eps_x = std::max(c.eps_x, e.eps_x);
      c.eps_y = std::max(c.eps_y, e.eps_y);
      c.gamma_m = std::max(c.gamma_m, e.gamma_m);
      c.delta = std::max(c.delta, e.delta);
    }

    const LsiResult run = lsi_observation_space(pair, mask, y_sub, opt.lsi);
    Vector z_hat = run.z, x_hat = run.x;
    if constexpr (std::is_same_v<std::decay_t<Pair>, LinearPair>) {
      const auto cf = closed_form_lsi_zy(pair, mask, y_sub);
      z_hat = cf.z;
      x_hat = cf.x;
    }

    BoundRow row;
    row.sample_id = i;
    row.statement1_initial = run.initial_residual;
    row.statement1_final = run.final_residual;
    row.statement1_ok = run.final_residual <= run.initial_residual;

    double alpha = c.alpha_P;
    if (opt.per_sample_alpha) {
      const Vector diff = pair.decode_y(z_hat) - yn;
      const double d = diff.norm();
      alpha = d > 0.0 ? mask.apply(diff).norm() / d : 1.0;
    }
    row.alpha_P = alpha;
    row.error_actual = (norm.normalize_x(x_hat) - xn).norm();
    row.error_predicted = error_bound(c, alpha);
    row.vacuous = !std::isfinite(row.error_predicted);
    row.error_ok = row.error_actual <= row.error_predicted;

    const double noise = (y - a * x).norm() / norm.y_std;
    row.residual_actual = mask.apply(Vector(a * x_hat - y_sub)).norm() / norm.y_std;
    row.residual_predicted = residual_bound(c, row.error_predicted, noise);
    row.residual_ok = row.residual_actual <= row.residual_predicted;
    row.rre = rre(x_hat, x);
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace pairlab
