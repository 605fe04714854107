#pragma once

#include <vector>

#include "capsg/num/matrix.hpp"

namespace capsg::num {

struct EigResult {
  std::vector<double> values;  // ascending
  Matrix vectors;              // columns, unit norm, sign-fixed
};

/// Full spectrum of a symmetric matrix via cyclic Jacobi rotations.
/// Input must be square and symmetric within 1e-10. Each eigenvector is
/// scaled so its largest-magnitude component (first index on ties) is
/// positive.
EigResult sym_eig(const Matrix& a);

struct SvdResult {
  Matrix u;               // m × r
  std::vector<double> s;  // descending, nonnegative
  Matrix v;               // n × r
};

/// Thin SVD via one-sided Jacobi, r = min(m, n). a = u·diag(s)·vᵀ within
/// 1e-8·(1+‖a‖∞).
SvdResult svd(const Matrix& a);

/// Singular value thresholding: u·diag(max(s−tau,0))·vᵀ (the proximal
/// operator of the nuclear norm).
Matrix svt(const Matrix& a, double tau);

/// Column-wise l2 shrinkage (proximal operator of the l2,1 norm). A column
/// with norm below tau goes to zero; a zero column stays zero.
Matrix l21_shrink(const Matrix& a, double tau);

/// Cholesky factorization of a symmetric positive-definite matrix, reusable
/// across many right-hand sides.
class CholeskyFactor {
 public:
  explicit CholeskyFactor(const Matrix& a);
  Matrix solve(const Matrix& b) const;
  std::size_t dim() const { return l_.rows(); }

 private:
  Matrix l_;  // lower triangular
};

/// x with ‖a·x − b‖∞ ≤ 1e-8·(1+‖b‖∞) for SPD a. Throws Numerical when the
/// factorization hits a non-positive pivot.
Matrix solve_spd(const Matrix& a, const Matrix& b);

}  // namespace capsg::num
