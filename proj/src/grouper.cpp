#include "capsg/grouper.hpp"

#include <cmath>

namespace capsg::grouper {

void ImageFeatures::validate() const {
  if (feats.rows() != patches())
    throw_shape("ImageFeatures: feats rows != grid_rows*grid_cols");
  if (patch_size == 0) throw_argument("ImageFeatures: patch_size must be positive");
  if (!feats.all_finite()) throw_numerical("ImageFeatures: non-finite feature");
}

void GrouperWeights::validate() const {
  if (layers.empty()) throw_argument("GrouperWeights: need at least one layer");
  if (!(temperature > 0.0)) throw_argument("GrouperWeights: temperature must be positive");
  const std::size_t d = dim();
  std::size_t prev = ~static_cast<std::size_t>(0);
  for (const auto& l : layers) {
    if (l.centers.cols() != d || l.wq.rows() != d || l.wq.cols() != d ||
        l.wk.rows() != d || l.wk.cols() != d || l.wv.rows() != d || l.wv.cols() != d)
      throw_shape("GrouperWeights: layer matrix dims inconsistent");
    if (l.mixer.in_dim() != d || l.mixer.out_dim() != d)
      throw_shape("GrouperWeights: mixer dims inconsistent");
    if (l.centers.rows() >= prev)
      throw_shape("GrouperWeights: center counts must be strictly decreasing");
    prev = l.centers.rows();
    if (!l.centers.all_finite() || !l.wq.all_finite() || !l.wk.all_finite() ||
        !l.wv.all_finite())
      throw_numerical("GrouperWeights: non-finite weight");
  }
}

GrouperWeights GrouperWeights::seeded(std::size_t dim,
                                      const std::vector<std::size_t>& stage_sizes,
                                      std::uint64_t seed) {
  num::SplitMix64 rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  GrouperWeights w;
  w.temperature = 1.0;
  for (std::size_t h : stage_sizes) {
    GroupLayerWeights l;
    l.centers = gaussian_matrix(h, dim, scale, rng);
    l.wq = gaussian_matrix(dim, dim, scale, rng);
    l.wk = gaussian_matrix(dim, dim, scale, rng);
    l.wv = gaussian_matrix(dim, dim, scale, rng);
    l.mixer = TwoLayerMap::seeded(dim, dim, dim, rng);
    w.layers.push_back(std::move(l));
  }
  w.validate();
  return w;
}

std::pair<num::Matrix, num::Matrix> group_layer_forward(const num::Matrix& segments,
                                                        const GroupLayerWeights& layer,
                                                        double temperature, bool hard) {
  const std::size_t d = layer.centers.cols();
  if (segments.cols() != d) throw_shape("group_layer_forward: segment width mismatch");
  const double sqrt_d = std::sqrt(static_cast<double>(d));

  // Communication: centers attend to segments, then mixer, residuals on both.
  num::Matrix seg_k = num::matmul(segments, layer.wk);
  num::Matrix seg_v = num::matmul(segments, layer.wv);
  num::Matrix att = num::matmul_a_bt(num::matmul(layer.centers, layer.wq), seg_k);
  att *= 1.0 / sqrt_d;
  softmax_rows(att);
  num::Matrix centers = layer.centers + num::matmul(att, seg_v);
  centers += layer.mixer.apply(centers);

  // Assignment of segments to the updated centers.
  num::Matrix logits =
      num::matmul_a_bt(num::matmul(segments, layer.wq), num::matmul(centers, layer.wk));
  logits *= 1.0 / (sqrt_d * temperature);
  softmax_rows(logits);
  if (hard) {
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      std::size_t arg = 0;
      double best = logits(i, 0);
      for (std::size_t j = 1; j < logits.cols(); ++j) {
        if (logits(i, j) > best) {
          best = logits(i, j);
          arg = j;
        }
      }
      for (std::size_t j = 0; j < logits.cols(); ++j) logits(i, j) = (j == arg) ? 1.0 : 0.0;
    }
  }

  num::Matrix merged = num::matmul_at_b(logits, seg_v);
  for (std::size_t j = 0; j < merged.rows(); ++j) {
    double weight = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) weight += logits(i, j);
    const double denom = std::max(weight, 1e-12);
    for (std::size_t c = 0; c < merged.cols(); ++c) merged(j, c) /= denom;
  }
  return {std::move(merged), std::move(logits)};
}

SegmentHierarchy group_forward(const ImageFeatures& img, const GrouperWeights& w,
                               bool hard) {
  img.validate();
  w.validate();
  if (img.dim() != w.dim()) throw_shape("group_forward: feature width != weight width");

  SegmentHierarchy h;
  h.updated_patch_feats = img.feats + w.layers[0].mixer.apply(img.feats);

  std::vector<int> composed(img.patches());
  for (std::size_t i = 0; i < composed.size(); ++i) composed[i] = static_cast<int>(i);

  const num::Matrix* cur = &h.updated_patch_feats;
  for (const auto& layer : w.layers) {
    auto [merged, assignment] = group_layer_forward(*cur, layer, w.temperature, hard);
    std::vector<int> arg(assignment.rows());
    for (std::size_t i = 0; i < assignment.rows(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < assignment.cols(); ++j)
        if (assignment(i, j) > assignment(i, best)) best = j;
      arg[i] = static_cast<int>(best);
    }
    for (auto& c : composed) c = arg[static_cast<std::size_t>(c)];

    GrouperStage stage;
    stage.segment_feats = std::move(merged);
    stage.assignment = std::move(assignment);
    stage.patch_segment = composed;
    h.stages.push_back(std::move(stage));
    cur = &h.stages.back().segment_feats;
  }
  return h;
}

std::vector<Mask> segment_masks(const SegmentHierarchy& h, std::size_t stage,
                                const ImageFeatures& img) {
  if (stage < 1 || stage > h.stages.size())
    throw_argument("segment_masks: stage out of range");
  const GrouperStage& st = h.stages[stage - 1];
  const std::size_t segments = st.segment_feats.rows();
  const std::size_t H = img.pixel_height(), W = img.pixel_width();

  std::vector<Mask> masks(segments, Mask(H, W));
  for (std::size_t p = 0; p < st.patch_segment.size(); ++p) {
    const std::size_t seg = static_cast<std::size_t>(st.patch_segment[p]);
    const std::size_t pr = p / img.grid_cols, pc = p % img.grid_cols;
    for (std::size_t r = pr * img.patch_size; r < (pr + 1) * img.patch_size; ++r)
      for (std::size_t c = pc * img.patch_size; c < (pc + 1) * img.patch_size; ++c)
        masks[seg].set(r, c);
  }
  return masks;
}

}  // namespace capsg::grouper
