#include <cmath>

#include "capsg/num/kernels.hpp"

// Straight-line reference versions of the parallel kernels. Kept for the
// unit tests (bit-exact comparison against the OpenMP path) and for the
// benchmark target.

namespace capsg::num::serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw_shape("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  const std::size_t m = a.rows(), n = b.cols(), kk = a.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.row(i);
    for (std::size_t k = 0; k < kk; ++k) {
      const double aik = a(i, k);
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw_shape("matmul_at_b: row counts differ");
  Matrix c(a.cols(), b.cols());
  const std::size_t m = a.cols(), n = b.cols(), kk = a.rows();
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.row(i);
    for (std::size_t k = 0; k < kk; ++k) {
      const double aki = a(k, i);
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw_shape("matmul_a_bt: column counts differ");
  Matrix c(a.rows(), b.rows());
  const std::size_t m = a.rows(), n = b.rows(), kk = a.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (std::size_t j = 0; j < n; ++j) ci[j] = dot(ai, b.row(j), kk);
  }
  return c;
}

Matrix cosine_matrix(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw_shape("cosine_matrix: feature widths differ");
  std::vector<double> na(a.rows()), nb(b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    na[i] = row_norm(a, i);
    if (na[i] < 1e-12) throw_numerical("cosine_matrix: zero row in left operand");
  }
  for (std::size_t j = 0; j < b.rows(); ++j) {
    nb[j] = row_norm(b, j);
    if (nb[j] < 1e-12) throw_numerical("cosine_matrix: zero row in right operand");
  }
  Matrix c(a.rows(), b.rows());
  const std::size_t m = a.rows(), n = b.rows(), d = a.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (std::size_t j = 0; j < n; ++j) ci[j] = dot(ai, b.row(j), d) / (na[i] * nb[j]);
  }
  return c;
}

Matrix pairwise_sqdist(const Matrix& points, const Matrix& centers) {
  if (points.cols() != centers.cols())
    throw_shape("pairwise_sqdist: feature widths differ");
  Matrix d(points.rows(), centers.rows());
  const std::size_t m = points.rows(), k = centers.rows(), w = points.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* di = d.row(i);
    const double* pi = points.row(i);
    for (std::size_t j = 0; j < k; ++j) {
      const double* cj = centers.row(j);
      double s = 0.0;
      for (std::size_t t = 0; t < w; ++t) {
        const double diff = pi[t] - cj[t];
        s += diff * diff;
      }
      di[j] = s;
    }
  }
  return d;
}

}  // namespace capsg::num::serial
