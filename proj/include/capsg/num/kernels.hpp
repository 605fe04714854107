#pragma once

#include "capsg/num/matrix.hpp"

// Data-parallel kernels. Each output element is computed by one thread in a
// fixed serial order, so results are bit-identical for any thread count.
// The serial:: twins are the reference implementations used by the unit
// tests and the benchmark target.

namespace capsg::num {

Matrix matmul(const Matrix& a, const Matrix& b);

/// aᵀ · b without forming the transpose.
Matrix matmul_at_b(const Matrix& a, const Matrix& b);

/// a · bᵀ without forming the transpose.
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);

/// Cosine of every row of a against every row of b. Throws Numerical on a
/// row with norm below 1e-12.
Matrix cosine_matrix(const Matrix& a, const Matrix& b);

/// Squared Euclidean distance of every point row to every center row.
Matrix pairwise_sqdist(const Matrix& points, const Matrix& centers);

namespace serial {
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_at_b(const Matrix& a, const Matrix& b);
Matrix matmul_a_bt(const Matrix& a, const Matrix& b);
Matrix cosine_matrix(const Matrix& a, const Matrix& b);
Matrix pairwise_sqdist(const Matrix& points, const Matrix& centers);
}  // namespace serial

}  // namespace capsg::num
