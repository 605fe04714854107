#pragma once

#include <cmath>

#include "capsg/num/kernels.hpp"
#include "capsg/num/matrix.hpp"
#include "capsg/num/rng.hpp"

namespace capsg {

/// Two-layer linear feature map applied to row vectors: x -> (x·w1)·w2.
/// Composition of the two factors keeps the map loadable from plain weight
/// matrices and lets tests construct exact identities.
struct TwoLayerMap {
  num::Matrix w1;
  num::Matrix w2;

  std::size_t in_dim() const { return w1.rows(); }
  std::size_t out_dim() const { return w2.cols(); }

  num::Matrix apply(const num::Matrix& x) const {
    if (x.cols() != w1.rows()) throw_shape("TwoLayerMap: input width mismatch");
    if (w1.cols() != w2.rows()) throw_shape("TwoLayerMap: factor shapes mismatch");
    return num::matmul(num::matmul(x, w1), w2);
  }

  static TwoLayerMap seeded(std::size_t in, std::size_t hidden, std::size_t out,
                            num::SplitMix64& rng) {
    TwoLayerMap m;
    m.w1 = num::Matrix(in, hidden);
    m.w2 = num::Matrix(hidden, out);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::size_t i = 0; i < m.w1.size(); ++i) m.w1.data()[i] = s1 * rng.gaussian();
    for (std::size_t i = 0; i < m.w2.size(); ++i) m.w2.data()[i] = s2 * rng.gaussian();
    return m;
  }
};

/// In-place row softmax with max subtraction.
inline void softmax_rows(num::Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double* r = m.row(i);
    double mx = r[0];
    for (std::size_t j = 1; j < m.cols(); ++j) mx = std::max(mx, r[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    for (std::size_t j = 0; j < m.cols(); ++j) r[j] /= sum;
  }
}

inline num::Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double scale,
                                   num::SplitMix64& rng) {
  num::Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.gaussian();
  return m;
}

}  // namespace capsg
