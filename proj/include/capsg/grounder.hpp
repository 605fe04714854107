#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "capsg/nn.hpp"
#include "capsg/num/matrix.hpp"

namespace capsg::grounder {

struct GrounderWeights {
  std::vector<TwoLayerMap> proj_image;  // per grouping stage, d -> d_s
  TwoLayerMap proj_text;                // d_t -> d_s
  num::Matrix rnn_in;                   // d_t × d_h
  num::Matrix rnn_rec;                  // d_h × d_h
  std::vector<double> gate;             // d_h
  double tau = 0.07;                    // contrastive temperature, > 0
  double theta = -0.5;                  // similarity filtering threshold

  void validate() const;
  static GrounderWeights seeded(std::size_t stages, std::size_t dim, std::size_t text_dim,
                                std::size_t rnn_dim, std::size_t shared_dim,
                                std::uint64_t seed);
};

/// Segment and entity embeddings of one image-caption pair in the shared
/// space. No row may be (numerically) zero.
struct SharedEmbeddings {
  std::size_t stage = 1;
  num::Matrix segments;  // H_k × d_s
  num::Matrix entities;  // E × d_s

  void validate() const;
};

struct GroundingResult {
  std::size_t stage = 1;
  std::vector<int> best_entity;  // argmax entity per segment
  std::vector<double> cosine;    // its cosine value
  std::vector<bool> kept;        // cosine > theta (strict)
};

/// Token span -> entity feature: tanh recurrence over the span, per-token
/// weight sigmoid(gate·h), feature = weighted mean of the token features.
num::Matrix encode_entities(const num::Matrix& tokens,
                            const std::vector<std::pair<std::size_t, std::size_t>>& spans,
                            const GrounderWeights& w);

/// Projects stage segments and entity features into the shared space.
SharedEmbeddings embed(const num::Matrix& stage_segments, std::size_t stage,
                       const num::Matrix& entity_feats, const GrounderWeights& w);

/// H_k × E cosine matrix.
num::Matrix tokenwise_sims(const SharedEmbeddings& e);

struct DirectionalSim {
  double value = 0.0;            // thresholded mean of the maxima
  std::vector<double> per_item;  // row/column maxima
};

/// Row maxima, averaged over rows whose maximum exceeds theta; falls back to
/// the plain mean when every row is filtered out.
DirectionalSim image_to_text_sim(const num::Matrix& cos, double theta);

/// Column-wise mirror of image_to_text_sim.
DirectionalSim text_to_image_sim(const num::Matrix& cos, double theta);

struct FineLossResult {
  double total = 0.0;  // ½(i2t + t2i)
  double i2t = 0.0;
  double t2i = 0.0;
  num::Matrix p;  // p[i][j]: image i -> caption j
  num::Matrix q;  // q[i][j]: caption i -> image j
};

/// Symmetric batch log-softmax loss over the cross-pair fine-grained
/// similarities.
FineLossResult fine_contrastive_loss(const std::vector<SharedEmbeddings>& batch,
                                     const GrounderWeights& w);

struct FineLossGradients {
  double loss = 0.0;
  std::vector<num::Matrix> segments;  // d/dx per image
  std::vector<num::Matrix> entities;  // d/dy per caption
};

/// Distance from the nearest kink of the piecewise-smooth loss: argmax ties
/// and threshold crossings. Returns a description when any margin is below
/// `margin`.
std::optional<std::string> degeneracy_of(const std::vector<SharedEmbeddings>& batch,
                                         double theta, double margin = 1e-6);

/// Exact gradient of fine_contrastive_loss at a non-degenerate point (the
/// active max/threshold branches held fixed). Throws Numerical naming the
/// kink otherwise.
FineLossGradients grad_fine_loss(const std::vector<SharedEmbeddings>& batch,
                                 const GrounderWeights& w);

/// Per-segment argmax grounding; kept requires cosine strictly above theta.
GroundingResult ground(const SharedEmbeddings& e, double theta);

}  // namespace capsg::grounder
