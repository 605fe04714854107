#include "capsg/num/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "capsg/num/kernels.hpp"

namespace capsg::num {

namespace {

// Sign convention: largest-magnitude component positive, first index wins
// ties (strict > keeps the earliest maximum).
void fix_column_signs(Matrix& v) {
  for (std::size_t j = 0; j < v.cols(); ++j) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < v.rows(); ++i) {
      const double m = std::fabs(v(i, j));
      if (m > best) {
        best = m;
        arg = i;
      }
    }
    if (v(arg, j) < 0.0) {
      for (std::size_t i = 0; i < v.rows(); ++i) v(i, j) = -v(i, j);
    }
  }
}

}  // namespace

EigResult sym_eig(const Matrix& a) {
  const std::size_t n = a.rows();
  if (n != a.cols()) throw_shape("sym_eig: matrix not square");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::fabs(a(i, j) - a(j, i)) > 1e-10)
        throw_shape("sym_eig: matrix not symmetric within 1e-10");

  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w(i, j) = 0.5 * (a(i, j) + a(j, i));
  Matrix v = Matrix::identity(n);

  const double scale = std::max(1.0, max_abs(w));
  const double stop = 1e-14 * scale;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off = std::max(off, std::fabs(w(p, q)));
    if (off <= stop) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = w(p, q);
        if (std::fabs(apq) <= stop * 1e-2) continue;
        const double theta = (w(q, q) - w(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;

        for (std::size_t i = 0; i < n; ++i) {
          const double wip = w(i, p), wiq = w(i, q);
          w(i, p) = c * wip - s * wiq;
          w(i, q) = s * wip + c * wiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double wpi = w(p, i), wqi = w(q, i);
          w(p, i) = c * wpi - s * wqi;
          w(q, i) = s * wpi + c * wqi;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return w(x, x) < w(y, y); });

  EigResult out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = w(order[j], order[j]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, j) = v(i, order[j]);
  }
  fix_column_signs(out.vectors);
  return out;
}

SvdResult svd(const Matrix& a) {
  if (a.rows() < a.cols()) {
    SvdResult t = svd(transpose(a));
    return SvdResult{std::move(t.v), std::move(t.s), std::move(t.u)};
  }
  const std::size_t m = a.rows(), n = a.cols();
  Matrix b = a;
  Matrix v = Matrix::identity(n);

  // Hestenes one-sided Jacobi: orthogonalize column pairs until every inner
  // product is negligible relative to the column norms.
  for (int sweep = 0; sweep < 60; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += b(i, p) * b(i, p);
          beta += b(i, q) * b(i, q);
          gamma += b(i, p) * b(i, q);
        }
        if (std::fabs(gamma) <= 1e-15 * std::sqrt(alpha * beta) || gamma == 0.0)
          continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double bip = b(i, p), biq = b(i, q);
          b(i, p) = c * bip - s * biq;
          b(i, q) = s * bip + c * biq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = v(i, p), viq = v(i, q);
          v(i, p) = c * vip - s * viq;
          v(i, q) = s * vip + c * viq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += b(i, j) * b(i, j);
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  SvdResult out;
  out.s.resize(n);
  out.u = Matrix(m, n);
  out.v = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.s[j] = norms[src];
    if (norms[src] > 1e-300) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, j) = b(i, src) / norms[src];
    }
    for (std::size_t i = 0; i < n; ++i) out.v(i, j) = v(i, src);
  }
  return out;
}

Matrix svt(const Matrix& a, double tau) {
  if (tau < 0.0) throw_argument("svt: tau must be nonnegative");
  SvdResult f = svd(a);
  Matrix us = f.u;
  for (std::size_t j = 0; j < f.s.size(); ++j) {
    const double shrunk = std::max(f.s[j] - tau, 0.0);
    for (std::size_t i = 0; i < us.rows(); ++i) us(i, j) *= shrunk;
  }
  return matmul_a_bt(us, f.v);
}

Matrix l21_shrink(const Matrix& a, double tau) {
  if (tau < 0.0) throw_argument("l21_shrink: tau must be nonnegative");
  Matrix out(a.rows(), a.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) {
    double norm = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) norm += a(i, j) * a(i, j);
    norm = std::sqrt(norm);
    if (norm <= tau || norm == 0.0) continue;
    const double factor = (norm - tau) / norm;
    for (std::size_t i = 0; i < a.rows(); ++i) out(i, j) = a(i, j) * factor;
  }
  return out;
}

CholeskyFactor::CholeskyFactor(const Matrix& a) {
  const std::size_t n = a.rows();
  if (n != a.cols()) throw_shape("cholesky: matrix not square");
  l_ = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l_(j, k) * l_(j, k);
    if (!(d > 0.0) || !std::isfinite(d))
      throw_numerical("cholesky: matrix not positive definite");
    l_(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l_(i, k) * l_(j, k);
      l_(i, j) = s / l_(j, j);
    }
  }
}

Matrix CholeskyFactor::solve(const Matrix& b) const {
  const std::size_t n = l_.rows();
  if (b.rows() != n) throw_shape("cholesky solve: rhs row count mismatch");
  Matrix x = b;
  const std::int64_t cols = static_cast<std::int64_t>(b.cols());
#pragma omp parallel for schedule(static)
  for (std::int64_t c = 0; c < cols; ++c) {
    const std::size_t cc = static_cast<std::size_t>(c);
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, cc);
      for (std::size_t k = 0; k < i; ++k) s -= l_(i, k) * x(k, cc);
      x(i, cc) = s / l_(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x(ii, cc);
      for (std::size_t k = ii + 1; k < n; ++k) s -= l_(k, ii) * x(k, cc);
      x(ii, cc) = s / l_(ii, ii);
    }
  }
  return x;
}

Matrix solve_spd(const Matrix& a, const Matrix& b) {
  return CholeskyFactor(a).solve(b);
}

}  // namespace capsg::num
