#include "capsg/num/kernels.hpp"

#include <cmath>

namespace capsg::num {

// i-k-j loop with a per-row accumulator: each output row is produced by a
// single thread in a fixed order, so the result does not depend on the
// number of threads.
Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw_shape("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  const std::int64_t m = static_cast<std::int64_t>(a.rows());
  const std::size_t n = b.cols(), kk = a.cols();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    double* ci = c.row(static_cast<std::size_t>(i));
    for (std::size_t k = 0; k < kk; ++k) {
      const double aik = a(static_cast<std::size_t>(i), k);
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw_shape("matmul_at_b: row counts differ");
  Matrix c(a.cols(), b.cols());
  const std::int64_t m = static_cast<std::int64_t>(a.cols());
  const std::size_t n = b.cols(), kk = a.rows();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    double* ci = c.row(static_cast<std::size_t>(i));
    for (std::size_t k = 0; k < kk; ++k) {
      const double aki = a(k, static_cast<std::size_t>(i));
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw_shape("matmul_a_bt: column counts differ");
  Matrix c(a.rows(), b.rows());
  const std::int64_t m = static_cast<std::int64_t>(a.rows());
  const std::size_t n = b.rows(), kk = a.cols();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    double* ci = c.row(static_cast<std::size_t>(i));
    const double* ai = a.row(static_cast<std::size_t>(i));
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
  const std::int64_t m = static_cast<std::int64_t>(a.rows());
  const std::size_t n = b.rows(), d = a.cols();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    double* ci = c.row(static_cast<std::size_t>(i));
    const double* ai = a.row(static_cast<std::size_t>(i));
    for (std::size_t j = 0; j < n; ++j)
      ci[j] = dot(ai, b.row(j), d) / (na[static_cast<std::size_t>(i)] * nb[j]);
  }
  return c;
}

Matrix pairwise_sqdist(const Matrix& points, const Matrix& centers) {
  if (points.cols() != centers.cols())
    throw_shape("pairwise_sqdist: feature widths differ");
  Matrix d(points.rows(), centers.rows());
  const std::int64_t m = static_cast<std::int64_t>(points.rows());
  const std::size_t k = centers.rows(), w = points.cols();
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < m; ++i) {
    double* di = d.row(static_cast<std::size_t>(i));
    const double* pi = points.row(static_cast<std::size_t>(i));
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

}  // namespace capsg::num
