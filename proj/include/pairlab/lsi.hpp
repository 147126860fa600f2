#pragma once

// Latent-space inference drivers and the Tikhonov baseline.
//
//   observation space:  z_y = argmin ||P d_y(z) - P y||^2,         x = d_x(m_bwd(z_y))
//   parameter space:    z_x = argmin ||P d_y(m_fwd(z)) - P y||^2,  x = d_x(z_x)
//   model space:        z_x = argmin ||P A d_x(z) - y_sub||^2,     x = d_x(z_x)
//
// Residuals are measured in the pair's internal (normalized) observation
// coordinates. Masks zero entries, so P applied to the normalized data
// equals the normalized observed entries.

#include <concepts>
#include <cstdint>
#include <optional>
#include <vector>

#include "pairlab/dataset.hpp"
#include "pairlab/error.hpp"
#include "pairlab/forward_models.hpp"
#include "pairlab/lbfgs.hpp"
#include "pairlab/linalg.hpp"
#include "pairlab/random.hpp"

namespace pairlab {

/// Anything with paired encoders/decoders, latent maps and decoder VJPs:
/// LinearPair and PairModel both qualify.
template <typename P>
concept PairedAutoencoder = requires(const P& p, const Vector& v) {
  { p.encode_x(v) } -> std::convertible_to<Vector>;
  { p.decode_x(v) } -> std::convertible_to<Vector>;
  { p.encode_y(v) } -> std::convertible_to<Vector>;
  { p.decode_y(v) } -> std::convertible_to<Vector>;
  { p.map_fwd(v) } -> std::convertible_to<Vector>;
  { p.map_bwd(v) } -> std::convertible_to<Vector>;
  { p.decode_x_vjp(v, v) } -> std::convertible_to<Vector>;
  { p.decode_y_vjp(v, v) } -> std::convertible_to<Vector>;
  { p.map_fwd_vjp(v, v) } -> std::convertible_to<Vector>;
  { p.normalization() } -> std::convertible_to<Normalization>;
};

struct LsiConfig {
  LbfgsConfig lbfgs{};
  /// Optional coefficient of ||z - z0||^2; zero reproduces the plain formulation.
  double latent_penalty = 0.0;
};

struct LsiResult {
  Vector z;                       // optimized latent point
  Vector x;                       // decoded reconstruction, physical units
  Vector z0;                      // starting point
  std::vector<double> history;    // objective at accepted iterates
  std::vector<AcceptedStep> steps;
  double initial_residual = 0.0;  // ||P d(z0) - P y|| (normalized)
  double final_residual = 0.0;    // ||P d(z) - P y||
  int iterations = 0;
  Termination reason = Termination::max_iterations;
};

namespace detail {

inline Vector masked_difference(const MaskOperator& mask, const Vector& pred, const Vector& target) {
  Vector r = pred - target;
  for (Index i : mask.zeroed()) r(i) = 0.0;
  return r;
}

// Wraps an objective r(z) = P(decode(z)) - target with an optional proximity
// term and runs L-BFGS; fills residual bookkeeping.
template <typename Decode, typename Vjp>
LsiResult run_latent_lsq(const MaskOperator& mask, const Vector& target, const Vector& z0,
                         const LsiConfig& cfg, Decode&& decode, Vjp&& vjp) {
  auto objective = [&](const Vector& z, Vector& grad) {
    const Vector r = masked_difference(mask, decode(z), target);
    grad = vjp(z, Vector(2.0 * r));
    double value = r.squaredNorm();
    if (cfg.latent_penalty > 0.0) {
      value += cfg.latent_penalty * (z - z0).squaredNorm();
      grad += 2.0 * cfg.latent_penalty * (z - z0);
    }
    return value;
  };
  LbfgsResult opt = lbfgs_minimize(objective, z0, cfg.lbfgs);
  LsiResult res;
  res.z0 = z0;
  res.initial_residual = masked_difference(mask, decode(z0), target).norm();
  res.final_residual = masked_difference(mask, decode(opt.z), target).norm();
  res.history = std::move(opt.history);
  res.steps = std::move(opt.steps);
  res.iterations = opt.iterations;
  res.reason = opt.reason;
  res.z = std::move(opt.z);
  return res;
}

inline void require_length(const Vector& v, Index expected, const char* what) {
  if (v.size() != expected) throw ArgumentError(std::string(what) + ": observation length mismatch");
}

}  // namespace detail

/// LSI over Z_y starting from z0 = e_y(y_sub) unless `z0` is given.
template <PairedAutoencoder Pair>
LsiResult lsi_observation_space(const Pair& pair, const MaskOperator& mask, const Vector& y_sub,
                                const LsiConfig& cfg, std::optional<Vector> z0 = std::nullopt) {
  detail::require_length(y_sub, mask.size(), "lsi_observation_space");
  const Normalization norm = pair.normalization();
  const Vector yn = norm.normalize_y(y_sub);
  const Vector target = mask.apply(yn);
  const Vector start = z0 ? *z0 : pair.encode_y(yn);
  LsiResult res = detail::run_latent_lsq(
      mask, target, start, cfg, [&](const Vector& z) { return pair.decode_y(z); },
      [&](const Vector& z, const Vector& c) { return pair.decode_y_vjp(z, c); });
  res.x = norm.denormalize_x(pair.decode_x(pair.map_bwd(res.z)));
  return res;
}

/// LSI over Z_x through the surrogate forward map, starting from
/// z0 = m_bwd(e_y(y_sub)) unless `z0` is given.
template <PairedAutoencoder Pair>
LsiResult lsi_parameter_space(const Pair& pair, const MaskOperator& mask, const Vector& y_sub,
                              const LsiConfig& cfg, std::optional<Vector> z0 = std::nullopt) {
  detail::require_length(y_sub, mask.size(), "lsi_parameter_space");
  const Normalization norm = pair.normalization();
  const Vector yn = norm.normalize_y(y_sub);
  const Vector target = mask.apply(yn);
  const Vector start = z0 ? *z0 : pair.map_bwd(pair.encode_y(yn));
  LsiResult res = detail::run_latent_lsq(
      mask, target, start, cfg, [&](const Vector& z) { return pair.decode_y(pair.map_fwd(z)); },
      [&](const Vector& z, const Vector& c) {
        return pair.map_fwd_vjp(z, pair.decode_y_vjp(pair.map_fwd(z), c));
      });
  res.x = norm.denormalize_x(pair.decode_x(res.z));
  return res;
}

struct ModelSpaceOptions {
  int ensemble = 1;
  std::uint64_t seed = 0;
  double perturbation = 0.1;  // std of the Gaussian start perturbation in Z_x
};

/// Observed rows of A, with the residual scaled into normalized observation units.
class ObservedOperator {
 public:
  ObservedOperator(const Matrix& a, const MaskOperator& mask) : rows_(mask.observed_indices()) {
    if (a.rows() != mask.size()) throw ArgumentError("model_space_lsi: operator rows do not match mask size");
    a_obs_.resize(static_cast<Index>(rows_.size()), a.cols());
    for (std::size_t k = 0; k < rows_.size(); ++k) a_obs_.row(static_cast<Index>(k)) = a.row(rows_[k]);
  }
  const Matrix& matrix() const { return a_obs_; }
  Vector restrict(const Vector& y) const {
    Vector out(static_cast<Index>(rows_.size()));
    for (std::size_t k = 0; k < rows_.size(); ++k) out(static_cast<Index>(k)) = y(rows_[k]);
    return out;
  }

 private:
  std::vector<Index> rows_;
  Matrix a_obs_;
};

/// Model-space LSI through the physical operator, one run per ensemble member.
/// Member k starts at e_x(normalized mean_x) + perturbation * N(0, I) drawn from
/// stream (seed, k). Residuals are ||P(A x - y_sub)|| / y_std.
template <PairedAutoencoder Pair>
std::vector<LsiResult> model_space_lsi(const Pair& pair, const Matrix& a, const MaskOperator& mask,
                                       const Vector& y_sub, const Vector& mean_x, const LsiConfig& cfg,
                                       const ModelSpaceOptions& opts = {}) {
  detail::require_length(y_sub, mask.size(), "model_space_lsi");
  if (a.cols() != mean_x.size()) throw ArgumentError("model_space_lsi: mean model length mismatch");
  if (opts.ensemble < 1) throw ArgumentError("model_space_lsi: ensemble must be >= 1");
  const Normalization norm = pair.normalization();
  const ObservedOperator op(a, mask);
  const Vector y_obs = op.restrict(y_sub);
  const double inv_std = 1.0 / norm.y_std;

  auto residual = [&](const Vector& z) {
    return Vector((op.matrix() * norm.denormalize_x(pair.decode_x(z)) - y_obs) * inv_std);
  };
  auto objective_base = [&](const Vector& z, const Vector& z0, Vector& grad) {
    const Vector r = residual(z);
    // d/dz ||r||^2 = J_dx^T (x_std / y_std) A_obs^T 2 r
    const Vector cot = (op.matrix().transpose() * (2.0 * r)) * (norm.x_std * inv_std);
    grad = pair.decode_x_vjp(z, cot);
    double value = r.squaredNorm();
    if (cfg.latent_penalty > 0.0) {
      value += cfg.latent_penalty * (z - z0).squaredNorm();
      grad += 2.0 * cfg.latent_penalty * (z - z0);
    }
    return value;
  };

  const Vector center = pair.encode_x(norm.normalize_x(mean_x));
  std::vector<LsiResult> out;
  out.reserve(static_cast<std::size_t>(opts.ensemble));
  for (int k = 0; k < opts.ensemble; ++k) {
    Vector z0 = center;
    if (opts.perturbation != 0.0) {
      Stream rng(opts.seed, static_cast<std::uint64_t>(k));
      for (Index i = 0; i < z0.size(); ++i) z0(i) += opts.perturbation * rng.normal();
    }
    auto objective = [&](const Vector& z, Vector& grad) { return objective_base(z, z0, grad); };
    LbfgsResult opt = lbfgs_minimize(objective, z0, cfg.lbfgs);
    LsiResult res;
    res.z0 = z0;
    res.initial_residual = residual(z0).norm();
    res.final_residual = residual(opt.z).norm();
    res.history = std::move(opt.history);
    res.steps = std::move(opt.steps);
    res.iterations = opt.iterations;
    res.reason = opt.reason;
    res.z = std::move(opt.z);
    res.x = norm.denormalize_x(pair.decode_x(res.z));
    out.push_back(std::move(res));
  }
  return out;
}

/// argmin ||A x - y||^2 + lambda ||x||^2, with the factorization of
/// A^T A + lambda I reused across right-hand sides.
class TikhonovSolver {
 public:
  TikhonovSolver(const Matrix& a, double lambda) : at_(a.transpose()) {
    if (!(lambda > 0.0)) throw ArgumentError("tikhonov: lambda must be positive");
    Matrix normal = at_ * a;
    normal.diagonal().array() += lambda;
    llt_.compute(normal);
    if (llt_.info() != Eigen::Success) throw NumericalError("tikhonov: normal matrix factorization failed");
  }
  Vector solve(const Vector& y) const {
    if (y.size() != at_.cols()) throw ArgumentError("tikhonov: observation length mismatch");
    return llt_.solve(at_ * y);
  }

 private:
  Matrix at_;
  Eigen::LLT<Matrix> llt_;
};

inline Vector tikhonov_baseline(const Matrix& a, const Vector& y, double lambda) {
  return TikhonovSolver(a, lambda).solve(y);
}

}  // namespace pairlab
