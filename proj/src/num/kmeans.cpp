#include "capsg/num/kmeans.hpp"

#include <limits>

#include "capsg/num/kernels.hpp"
#include "capsg/num/rng.hpp"

namespace capsg::num {

KmeansResult kmeans_detailed(const Matrix& points, std::size_t k, std::uint64_t seed) {
  const std::size_t n = points.rows();
  if (k < 1 || k > n) throw_argument("kmeans: k must be in [1, rows]");

  SplitMix64 rng(seed);
  std::vector<std::size_t> seeds;
  seeds.reserve(k);
  std::vector<char> chosen(n, 0);
  std::vector<double> mindist(n, std::numeric_limits<double>::infinity());

  const std::size_t first = static_cast<std::size_t>(rng.below(n));
  seeds.push_back(first);
  chosen[first] = 1;
  while (seeds.size() < k) {
    const double* last = points.row(seeds.back());
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t t = 0; t < points.cols(); ++t) {
        const double d = points(i, t) - last[t];
        s += d * d;
      }
      if (s < mindist[i]) mindist[i] = s;
    }
    double best = -1.0;
    std::size_t arg = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen[i]) continue;
      if (arg == n || mindist[i] > best) {
        best = mindist[i];
        arg = i;
      }
    }
    seeds.push_back(arg);
    chosen[arg] = 1;
  }

  Matrix centers(k, points.cols());
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t t = 0; t < points.cols(); ++t) centers(j, t) = points(seeds[j], t);

  KmeansResult out;
  out.labels.assign(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    const Matrix d2 = pairwise_sqdist(points, centers);
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int arg = 0;
      double best = d2(i, 0);
      for (std::size_t j = 1; j < k; ++j) {
        if (d2(i, j) < best) {
          best = d2(i, j);
          arg = static_cast<int>(j);
        }
      }
      objective += best;
      if (out.labels[i] != arg) {
        out.labels[i] = arg;
        changed = true;
      }
    }
    out.objective_trace.push_back(objective);
    out.iterations = iter + 1;
    if (!changed) break;

    // Empty clusters keep their previous center.
    std::vector<std::size_t> count(k, 0);
    Matrix sums(k, points.cols());
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = static_cast<std::size_t>(out.labels[i]);
      ++count[j];
      for (std::size_t t = 0; t < points.cols(); ++t) sums(j, t) += points(i, t);
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (count[j] == 0) continue;
      for (std::size_t t = 0; t < points.cols(); ++t)
        centers(j, t) = sums(j, t) / static_cast<double>(count[j]);
    }
  }
  return out;
}

std::vector<int> kmeans(const Matrix& points, std::size_t k, std::uint64_t seed) {
  return kmeans_detailed(points, k, seed).labels;
}

}  // namespace capsg::num
