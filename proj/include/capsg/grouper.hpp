#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capsg/mask.hpp"
#include "capsg/nn.hpp"
#include "capsg/num/matrix.hpp"

namespace capsg::grouper {

/// Patch-feature grid of one image.
struct ImageFeatures {
  std::string image_id;
  std::size_t grid_rows = 0;   // patches per column
  std::size_t grid_cols = 0;   // patches per row
  std::size_t patch_size = 16; // pixels per patch side
  num::Matrix feats;           // N×d, N = grid_rows·grid_cols

  std::size_t patches() const { return grid_rows * grid_cols; }
  std::size_t dim() const { return feats.cols(); }
  std::size_t pixel_height() const { return grid_rows * patch_size; }
  std::size_t pixel_width() const { return grid_cols * patch_size; }

  void validate() const;
};

struct GroupLayerWeights {
  num::Matrix centers;  // H_k×d
  num::Matrix wq, wk, wv;
  TwoLayerMap mixer;
};

struct GrouperWeights {
  std::vector<GroupLayerWeights> layers;  // k = 1..K, H_k strictly decreasing
  double temperature = 1.0;

  std::size_t stages() const { return layers.size(); }
  std::size_t dim() const { return layers.empty() ? 0 : layers[0].centers.cols(); }
  void validate() const;

  /// Seeded Gaussian init (scale 1/sqrt(d)) for runs without a weights file.
  static GrouperWeights seeded(std::size_t dim, const std::vector<std::size_t>& stage_sizes,
                               std::uint64_t seed);
};

struct GrouperStage {
  num::Matrix segment_feats;       // H_k×d
  num::Matrix assignment;          // H_{k-1}×H_k, row-stochastic
  std::vector<int> patch_segment;  // composed argmax chain, one per patch
};

struct SegmentHierarchy {
  num::Matrix updated_patch_feats;  // N×d
  std::vector<GrouperStage> stages;
};

/// One grouping layer: centers attend to the segments (queries from the
/// centers), pass through the mixer with residual connections, then the
/// segments are assigned to the updated centers by a temperature-scaled
/// softmax; `hard` replaces each row by a one-hot at its argmax. The merged
/// segment j is the assignment-weighted mean of the value-projected inputs.
std::pair<num::Matrix, num::Matrix> group_layer_forward(const num::Matrix& segments,
                                                        const GroupLayerWeights& layer,
                                                        double temperature, bool hard);

/// First mixer pass over the patch tokens, then the chained grouping layers.
SegmentHierarchy group_forward(const ImageFeatures& img, const GrouperWeights& w,
                               bool hard);

/// Per-segment binary pixel masks at the given stage (1-based). Masks are
/// pairwise disjoint and cover the image.
std::vector<Mask> segment_masks(const SegmentHierarchy& h, std::size_t stage,
                                const ImageFeatures& img);

}  // namespace capsg::grouper
