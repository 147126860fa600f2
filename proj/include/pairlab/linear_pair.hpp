#pragma once

// Bayes-risk-optimal linear paired autoencoders and their closed-form
// latent-space inference solutions.
//
// With second moments Gamma_x = L_x L_x^T and Gamma_y = A Gamma_x A^T + Gamma_eps
// = L_y L_y^T, and U_{.,l}, Sigma_{.,l} the leading l singular vectors/values of
// the corresponding factor:
//
//   E_x = U_x^T   D_x = U_x   M_fwd = U_y^T A U_x
//   E_y = U_y^T   D_y = U_y   M_bwd = Sigma_x^2 U_x^T A^T U_y Sigma_y^-2

#include <algorithm>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pairlab/dataset.hpp"
#include "pairlab/error.hpp"
#include "pairlab/forward_models.hpp"
#include "pairlab/linalg.hpp"

namespace pairlab {

struct LinearPair {
  Matrix Ex, Dx, Ey, Dy;
  Matrix Mfwd;  // ly x lx
  Matrix Mbwd;  // lx x ly
  Vector sigma_x;  // retained singular values of L_x (lx)
  Vector sigma_y;  // retained singular values of L_y (ly)

  Index x_dim() const { return Dx.rows(); }
  Index y_dim() const { return Dy.rows(); }
  Index x_latent() const { return Ex.rows(); }
  Index y_latent() const { return Ey.rows(); }

  // Linear pairs act on raw coordinates.
  Normalization normalization() const { return {}; }

  Vector encode_x(const Vector& x) const { return Ex * x; }
  Vector decode_x(const Vector& z) const { return Dx * z; }
  Vector encode_y(const Vector& y) const { return Ey * y; }
  Vector decode_y(const Vector& z) const { return Dy * z; }
  Vector map_fwd(const Vector& z) const { return Mfwd * z; }
  Vector map_bwd(const Vector& z) const { return Mbwd * z; }

  // Vector-Jacobian products (transposed Jacobian times cotangent).
  Vector decode_x_vjp(const Vector&, const Vector& c) const { return Dx.transpose() * c; }
  Vector decode_y_vjp(const Vector&, const Vector& c) const { return Dy.transpose() * c; }
  Vector map_fwd_vjp(const Vector&, const Vector& c) const { return Mfwd.transpose() * c; }
};

namespace detail {

inline Index numerical_rank(const Vector& eigenvalues_desc) {
  if (eigenvalues_desc.size() == 0 || !(eigenvalues_desc(0) > 0.0)) return 0;
  const double tol = static_cast<double>(eigenvalues_desc.size()) *
                     std::numeric_limits<double>::epsilon() * eigenvalues_desc(0);
  Index r = 0;
  while (r < eigenvalues_desc.size() && eigenvalues_desc(r) > tol) ++r;
  return r;
}

// Leading eigenvectors of an SPD second moment and the singular values of its
// eigen square root (sqrt of the eigenvalues).
inline std::pair<Matrix, Vector> leading_factor(const Matrix& gamma, Index l, const char* name) {
  cov_sqrt(gamma);  // SPD check with a descriptive error
  const SymEig e = sym_eig(gamma);
  const Index rank = numerical_rank(e.values);
  if (l < 1 || l > rank) {
    std::ostringstream msg;
    msg << "optimal_linear_pair: latent dimension " << l << " for " << name
        << " exceeds the numerical rank " << rank << " of its second moment";
    throw ArgumentError(msg.str());
  }
  return {e.vectors.leftCols(l), e.values.head(l).cwiseSqrt()};
}

}  // namespace detail

/// Gamma_y = A Gamma_x A^T + Gamma_eps.
inline Matrix observation_moment(const Matrix& a, const Matrix& gamma_x, const Matrix& gamma_eps) {
  const Matrix g = a * gamma_x * a.transpose() + gamma_eps;
  return 0.5 * (g + g.transpose());
}

inline LinearPair optimal_linear_pair(const Matrix& a, const Matrix& gamma_x,
                                      const Matrix& gamma_eps, Index lx, Index ly) {
  if (gamma_x.rows() != a.cols() || gamma_x.cols() != a.cols()) {
    throw ArgumentError("optimal_linear_pair: Gamma_x must be n x n with n = cols(A)");
  }
  if (gamma_eps.rows() != a.rows() || gamma_eps.cols() != a.rows()) {
    throw ArgumentError("optimal_linear_pair: Gamma_eps must be q x q with q = rows(A)");
  }
  cov_sqrt(gamma_eps);
  const Matrix gamma_y = observation_moment(a, gamma_x, gamma_eps);
  auto [ux, sx] = detail::leading_factor(gamma_x, lx, "x");
  auto [uy, sy] = detail::leading_factor(gamma_y, ly, "y");

  LinearPair p;
  p.Ex = ux.transpose();
  p.Dx = ux;
  p.Ey = uy.transpose();
  p.Dy = uy;
  p.Mfwd = uy.transpose() * a * ux;

  Vector sy2 = sy.array().square();
  const double floor = 1e-14 * sy2.maxCoeff();
  Vector inv_sy2 = sy2.unaryExpr([floor](double v) { return 1.0 / std::max(v, floor); });
  p.Mbwd = sx.array().square().matrix().asDiagonal() * (ux.transpose() * a.transpose() * uy) *
           inv_sy2.asDiagonal();
  p.sigma_x = sx;
  p.sigma_y = sy;
  return p;
}

/// Surrogate inverse D_x M_bwd E_y y.
inline Vector pair_inverse_linear(const LinearPair& p, const Vector& y) {
  if (y.size() != p.y_dim()) throw ArgumentError("pair_inverse_linear: observation length mismatch");
  return p.Dx * (p.Mbwd * (p.Ey * y));
}

struct LatentSolution {
  Vector z;
  Vector x;
};

namespace detail {

inline void require_masked(const MaskOperator& mask, const Vector& y_sub, Index q) {
  if (y_sub.size() != q) throw ArgumentError("closed-form LSI: observation length mismatch");
  for (Index i : mask.zeroed()) {
    if (y_sub(i) != 0.0) throw ArgumentError("closed-form LSI: y_sub is not zero on the masked entries");
  }
}

}  // namespace detail

/// z_y = (P D_y)^+ y_sub, x = D_x M_bwd z_y.
inline LatentSolution closed_form_lsi_zy(const LinearPair& p, const MaskOperator& mask,
                                         const Vector& y_sub) {
  detail::require_masked(mask, y_sub, p.y_dim());
  LatentSolution s;
  s.z = pinv(mask.apply_rows(p.Dy)) * y_sub;
  s.x = p.Dx * (p.Mbwd * s.z);
  return s;
}

/// z_x = (P D_y M_fwd)^+ y_sub, x = D_x z_x.
inline LatentSolution closed_form_lsi_zx(const LinearPair& p, const MaskOperator& mask,
                                         const Vector& y_sub) {
  detail::require_masked(mask, y_sub, p.y_dim());
  LatentSolution s;
  s.z = pinv(mask.apply_rows(p.Dy * p.Mfwd)) * y_sub;
  s.x = p.Dx * s.z;
  return s;
}

/// Gamma_x A^T (A Gamma_x A^T + Gamma_eps)^-1 y by a dense solve, without
/// building a pair.
inline Vector mmse_oracle(const Matrix& a, const Matrix& gamma_x, const Matrix& gamma_eps,
                          const Vector& y) {
  const Matrix gamma_y = a * gamma_x * a.transpose() + gamma_eps;
  Eigen::FullPivLU<Matrix> lu(gamma_y);
  if (!lu.isInvertible()) throw NumericalError("mmse_oracle: Gamma_y is singular");
  return gamma_x * (a.transpose() * lu.solve(y));
}

/// Second moment of the columns of `samples` (centered when requested) with
/// loading * trace / n added to the diagonal.
inline Matrix estimate_second_moment(const Matrix& samples, bool centered = true,
                                     double loading = 1e-8) {
  if (samples.cols() < 1) throw ArgumentError("estimate_second_moment: no samples");
  Matrix c = samples;
  if (centered) c.colwise() -= samples.rowwise().mean();
  Matrix m = (c * c.transpose()) / static_cast<double>(samples.cols());
  const double load = loading * m.trace() / static_cast<double>(m.rows());
  m.diagonal().array() += load;
  return m;
}

// ---------------------------------------------------------------------------
// JSON: {"format": "pairlab-linear-pair", "n", "q", "lx", "ly",
//        "Ex": [...], ..., "sigma_x": [...], "sigma_y": [...]}
// Matrices are flat row-major arrays.

namespace detail {

inline nlohmann::json flat_row_major(const Matrix& m) {
  std::vector<double> v;
  v.reserve(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) v.push_back(m(i, j));
  return v;
}

inline Matrix matrix_from_flat(const nlohmann::json& j, Index rows, Index cols, const char* name) {
  const auto v = j.get<std::vector<double>>();
  if (static_cast<Index>(v.size()) != rows * cols) {
    throw ParseError(std::string("linear pair: matrix '") + name + "' has wrong length");
  }
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j2 = 0; j2 < cols; ++j2) m(i, j2) = v[static_cast<std::size_t>(i * cols + j2)];
  return m;
}

}  // namespace detail

inline nlohmann::json to_json(const LinearPair& p) {
  return {{"format", "pairlab-linear-pair"},
          {"n", p.x_dim()},
          {"q", p.y_dim()},
          {"lx", p.x_latent()},
          {"ly", p.y_latent()},
          {"Ex", detail::flat_row_major(p.Ex)},
          {"Dx", detail::flat_row_major(p.Dx)},
          {"Ey", detail::flat_row_major(p.Ey)},
          {"Dy", detail::flat_row_major(p.Dy)},
          {"Mfwd", detail::flat_row_major(p.Mfwd)},
          {"Mbwd", detail::flat_row_major(p.Mbwd)},
          {"sigma_x", std::vector<double>(p.sigma_x.begin(), p.sigma_x.end())},
          {"sigma_y", std::vector<double>(p.sigma_y.begin(), p.sigma_y.end())}};
}

inline LinearPair linear_pair_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "pairlab-linear-pair") throw ParseError("linear pair: wrong format tag");
    const auto n = j.at("n").get<Index>(), q = j.at("q").get<Index>();
    const auto lx = j.at("lx").get<Index>(), ly = j.at("ly").get<Index>();
    LinearPair p;
    p.Ex = detail::matrix_from_flat(j.at("Ex"), lx, n, "Ex");
    p.Dx = detail::matrix_from_flat(j.at("Dx"), n, lx, "Dx");
    p.Ey = detail::matrix_from_flat(j.at("Ey"), ly, q, "Ey");
    p.Dy = detail::matrix_from_flat(j.at("Dy"), q, ly, "Dy");
    p.Mfwd = detail::matrix_from_flat(j.at("Mfwd"), ly, lx, "Mfwd");
    p.Mbwd = detail::matrix_from_flat(j.at("Mbwd"), lx, ly, "Mbwd");
    const auto sx = j.at("sigma_x").get<std::vector<double>>();
    const auto sy = j.at("sigma_y").get<std::vector<double>>();
    p.sigma_x = Eigen::Map<const Vector>(sx.data(), static_cast<Index>(sx.size()));
    p.sigma_y = Eigen::Map<const Vector>(sy.data(), static_cast<Index>(sy.size()));
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("linear pair: ") + e.what());
  }
}

}  // namespace pairlab
