#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "capsg/grounder.hpp"
#include "capsg/grouper.hpp"
#include "capsg/mask.hpp"
#include "capsg/num/matrix.hpp"

namespace capsg::merger {

/// Symmetric, unit-diagonal, entries in [0,1].
struct SimilarityMatrix {
  std::size_t stage = 1;
  num::Matrix m;
};

/// Sim[i,j] = (cos(x_i, x_j) + 1) / 2 over the stage's segment embeddings;
/// diagonal forced to exactly 1.
SimilarityMatrix similarity_matrix(const grounder::SharedEmbeddings& e);

/// Binary target: (i,j) = 1 iff both segments ground to the same entity with
/// cosine strictly above theta.
num::Matrix pseudo_target(const grounder::GroundingResult& g, const num::Matrix& cos,
                          double theta);

/// (1/H²)·‖Sim − target‖_F².
double similarity_loss(const SimilarityMatrix& sim, const num::Matrix& target);

struct SimLossGradients {
  double loss = 0.0;
  num::Matrix segments;  // d/dx of the loss
};

/// Loss and its gradient with respect to the segment embeddings (chain rule
/// through the cosine rescaling; the forced unit diagonal is constant).
SimLossGradients similarity_loss_grad(const num::Matrix& segments,
                                      const num::Matrix& target);

struct LrrConfig {
  double lambda = 0.4;
  double mu0 = 1e-2;
  double mu_max = 1e6;
  double rho = 1.6;
  double tol = 1e-6;
  int max_iter = 500;

  void validate() const;
};

struct LrrResult {
  num::Matrix z;  // recovered low-rank matrix
  num::Matrix e;  // column-sparse noise
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

/// min ‖Z‖_* + λ‖E‖_{2,1}  s.t.  Sim = Sim·Z + E, solved by an inexact
/// augmented-Lagrangian iteration (auxiliary J, multipliers Y1/Y2). A run
/// that exhausts max_iter returns converged = false rather than throwing.
LrrResult lrr_recover(const SimilarityMatrix& sim, const LrrConfig& cfg);

struct ClusterCount {
  std::optional<std::size_t> requested;  // empty = eigengap heuristic
  static ClusterCount automatic() { return {}; }
  static ClusterCount exactly(std::size_t n) { return {n}; }
};

/// Normalized-cut value of a labeling against a symmetric nonnegative
/// affinity: Σ_A cut(A, Ā)/assoc(A, V), empty-association terms count 0.
double ncut_objective(const num::Matrix& affinity, const std::vector<int>& labels);

/// Normalized cut on W = (|Z|+|Zᵀ|)/2: spectral embedding of the normalized
/// Laplacian, row-normalized, k-means, then a greedy single-node refinement
/// of the Ncut objective. Zero-degree nodes become singleton clusters. Auto
/// cluster count = eigengap argmax within [1, min(16, n)].
std::vector<int> spectral_cluster(const num::Matrix& z, ClusterCount clusters,
                                  std::uint64_t seed);

/// Union of member-segment masks per cluster label.
std::vector<Mask> merge_segments(const grouper::SegmentHierarchy& h, std::size_t stage,
                                 const std::vector<int>& labels,
                                 const grouper::ImageFeatures& img);

struct Instance {
  int id = 0;
  int cluster = -1;     // source semantic cluster
  std::string label;    // assigned by the labeler
  double score = 1.0;
  std::size_t pixels = 0;
  Box bbox;
};

/// Instance id per pixel (0 = unassigned) plus the instance table. Masks are
/// disjoint by construction.
struct InstanceMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> ids;  // row-major
  std::vector<Instance> instances;

  int at(std::size_t r, std::size_t c) const { return ids[r * width + c]; }
  Mask instance_mask(int id) const;
};

/// 4-connectivity flood fill over the disjoint cluster masks; components
/// smaller than min_pixels drop to id 0.
InstanceMap connected_components(const std::vector<Mask>& cluster_masks,
                                 std::size_t min_pixels = 1);

/// Collapses all instances sharing a stuff-class label into one instance
/// each; thing-class instances are untouched. Ids are renumbered densely.
InstanceMap merge_stuff(const InstanceMap& m, const std::set<std::string>& stuff_classes);

}  // namespace capsg::merger
