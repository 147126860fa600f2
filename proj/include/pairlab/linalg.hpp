#pragma once

// Dense real-matrix primitives: SVD, truncation, pseudoinverse, symmetric
// eigendecomposition and the eigen square root of a covariance.
//
// Every factor returned here follows two conventions so that results are
// reproducible run to run:
//   * spectra are sorted descending; ties keep the factorization's order;
//   * each singular/eigen vector is signed so that its entry of largest
//     magnitude is positive (first such entry on ties).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pairlab/error.hpp"

namespace pairlab {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct SvdResult {
  Matrix U;                // rows x rows, orthogonal
  Vector singular_values;  // min(rows, cols), descending
  Matrix Vt;               // cols x cols, orthogonal (transposed factor)
};

struct TruncatedSvd {
  Matrix U;   // rows x r
  Vector s;   // r, descending
  Matrix Vt;  // r x cols
  Index rank = 0;
};

struct SymEig {
  Matrix vectors;  // columns are eigenvectors
  Vector values;   // descending
};

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw ArgumentError(std::string(what) + ": matrix has non-finite entries");
  }
}

// Stable descending order keyed on (value, original index).
inline std::vector<Index> descending_order(const Vector& v) {
  std::vector<Index> order(static_cast<std::size_t>(v.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return v(a) > v(b); });
  return order;
}

// Sign that makes the largest-magnitude entry of `col` positive.
template <typename Col>
double canonical_sign(const Col& col) {
  Index best = 0;
  double best_abs = -1.0;
  for (Index i = 0; i < col.size(); ++i) {
    const double a = std::abs(col(i));
    if (a > best_abs) {
      best_abs = a;
      best = i;
    }
  }
  return col(best) < 0.0 ? -1.0 : 1.0;
}

}  // namespace detail

/// Full SVD M = U diag(s) Vt with the sign and ordering conventions above.
inline SvdResult svd(const Matrix& m) {
  detail::require_finite(m, "svd");
  const Index rows = m.rows();
  const Index cols = m.cols();
  const Index k = std::min(rows, cols);

  Matrix u, v;
  Vector s;
  if (k <= 16) {
    Eigen::JacobiSVD<Matrix> solver(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (solver.info() != Eigen::Success) throw NumericalError("svd: Jacobi iteration failed");
    u = solver.matrixU();
    v = solver.matrixV();
    s = solver.singularValues();
  } else {
    Eigen::BDCSVD<Matrix> solver(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (solver.info() != Eigen::Success) throw NumericalError("svd: divide-and-conquer iteration failed");
    u = solver.matrixU();
    v = solver.matrixV();
    s = solver.singularValues();
  }
  if (!s.allFinite() || !u.allFinite() || !v.allFinite()) {
    throw NumericalError("svd: factorization produced non-finite values");
  }

  SvdResult out;
  out.U = u;
  out.singular_values.resize(k);
  Matrix vv = v;
  const auto order = detail::descending_order(s);
  for (Index j = 0; j < k; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    out.singular_values(j) = s(src);
    out.U.col(j) = u.col(src);
    vv.col(j) = v.col(src);
  }
  for (Index j = 0; j < k; ++j) {
    const double sign = detail::canonical_sign(out.U.col(j));
    out.U.col(j) *= sign;
    vv.col(j) *= sign;
  }
  // Null-space columns carry no paired factor; sign them individually.
  for (Index j = k; j < rows; ++j) out.U.col(j) *= detail::canonical_sign(out.U.col(j));
  for (Index j = k; j < cols; ++j) vv.col(j) *= detail::canonical_sign(vv.col(j));
  out.Vt = vv.transpose();
  return out;
}

/// Keeps the leading r singular triplets.
inline TruncatedSvd truncate(const SvdResult& full, Index r) {
  const Index k = full.singular_values.size();
  if (r < 1 || r > k) {
    std::ostringstream msg;
    msg << "truncate: rank " << r << " outside [1, " << k << "]";
    throw ArgumentError(msg.str());
  }
  TruncatedSvd t;
  t.U = full.U.leftCols(r);
  t.s = full.singular_values.head(r);
  t.Vt = full.Vt.topRows(r);
  t.rank = r;
  return t;
}

inline Matrix reconstruct(const TruncatedSvd& t) {
  return t.U * t.s.asDiagonal() * t.Vt;
}

inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  detail::require_finite(m, "spectral_norm");
  if (std::min(m.rows(), m.cols()) <= 16) {
    Eigen::JacobiSVD<Matrix> solver(m);
    return solver.singularValues()(0);
  }
  Eigen::BDCSVD<Matrix> solver(m);
  return solver.singularValues()(0);
}

/// Default relative cutoff for pinv: max(rows, cols) * machine epsilon.
inline double default_rcond(const Matrix& m) {
  return static_cast<double>(std::max(m.rows(), m.cols())) *
         std::numeric_limits<double>::epsilon();
}

/// Moore-Penrose pseudoinverse. Singular values <= rcond * s_max count as zero.
inline Matrix pinv(const Matrix& m, double rcond) {
  if (!(rcond >= 0.0)) throw ArgumentError("pinv: rcond must be nonnegative");
  if (m.size() == 0) return Matrix::Zero(m.cols(), m.rows());
  const SvdResult f = svd(m);
  const Index k = f.singular_values.size();
  const double cutoff = rcond * f.singular_values(0);
  Matrix out = Matrix::Zero(m.cols(), m.rows());
  for (Index j = 0; j < k; ++j) {
    const double s = f.singular_values(j);
    if (s <= cutoff || s == 0.0) break;
    out.noalias() += (f.Vt.row(j).transpose() / s) * f.U.col(j).transpose();
  }
  return out;
}

inline Matrix pinv(const Matrix& m) { return pinv(m, default_rcond(m)); }

/// Eigendecomposition of a symmetric matrix, values descending.
/// The input is symmetrized (averaged with its transpose) before factoring.
inline SymEig sym_eig(const Matrix& g) {
  if (g.rows() != g.cols()) throw ArgumentError("sym_eig: matrix is not square");
  detail::require_finite(g, "sym_eig");
  const double scale = std::max(1.0, g.cwiseAbs().maxCoeff());
  const double asym = (g - g.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * scale) {
    std::ostringstream msg;
    msg << "sym_eig: matrix is not symmetric (max asymmetry " << asym << ")";
    throw ArgumentError(msg.str());
  }
  const Matrix sym = 0.5 * (g + g.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericalError("sym_eig: eigen iteration failed");

  const Vector& vals = solver.eigenvalues();
  const Matrix& vecs = solver.eigenvectors();
  const auto order = detail::descending_order(vals);
  SymEig out;
  out.values.resize(vals.size());
  out.vectors.resize(vecs.rows(), vecs.cols());
  for (Index j = 0; j < vals.size(); ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    out.values(j) = vals(src);
    out.vectors.col(j) = vecs.col(src) * detail::canonical_sign(vecs.col(src));
  }
  return out;
}

/// Eigen square root L = U diag(sqrt(lambda)) of an SPD matrix, so that
/// L L^T = G and the left singular vectors of L are the eigenvectors of G.
inline Matrix cov_sqrt(const Matrix& g) {
  const SymEig e = sym_eig(g);
  const double top = e.values.size() ? e.values(0) : 0.0;
  const double smallest = e.values.size() ? e.values(e.values.size() - 1) : 0.0;
  if (!(top > 0.0) || !(smallest > 1e-12 * top)) {
    std::ostringstream msg;
    msg << "cov_sqrt: matrix is not positive definite (smallest eigenvalue " << smallest
        << ", largest " << top << ")";
    throw ArgumentError(msg.str());
  }
  return e.vectors * e.values.cwiseSqrt().asDiagonal();
}

}  // namespace pairlab
