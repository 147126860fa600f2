#pragma once

#include <cstdint>
#include <random>

#include "pairlab/linalg.hpp"

namespace testing_util {

using pairlab::Index;
using pairlab::Matrix;
using pairlab::Vector;

inline Matrix random_matrix(Index rows, Index cols, std::uint32_t seed) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(gen);
  return m;
}

inline Vector random_vector(Index n, std::uint32_t seed) {
  return random_matrix(n, 1, seed).col(0);
}

// B^T B + shift I
inline Matrix random_spd(Index n, std::uint32_t seed, double shift = 1.0) {
  const Matrix b = random_matrix(n, n, seed);
  return b.transpose() * b + shift * Matrix::Identity(n, n);
}

inline double rel(const Matrix& a, const Matrix& b) {
  const double den = std::max(b.norm(), 1e-300);
  return (a - b).norm() / den;
}

}  // namespace testing_util
