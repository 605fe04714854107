#pragma once

#include <cstdint>
#include <vector>

#include "capsg/num/matrix.hpp"

namespace capsg::num {

struct KmeansResult {
  std::vector<int> labels;
  int iterations = 0;
  // Objective after each assignment step; non-increasing.
  std::vector<double> objective_trace;
};

/// Lloyd's algorithm. The first center index comes from a SplitMix64 draw,
/// the remaining seeds are farthest-point picks (ties to the lowest index);
/// iterates until the assignment stabilizes or 100 rounds. Deterministic
/// for a given seed. Throws Argument when k is outside [1, rows].
KmeansResult kmeans_detailed(const Matrix& points, std::size_t k, std::uint64_t seed);

std::vector<int> kmeans(const Matrix& points, std::size_t k, std::uint64_t seed);

}  // namespace capsg::num
