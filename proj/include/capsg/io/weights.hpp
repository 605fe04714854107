#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "capsg/grounder.hpp"
#include "capsg/grouper.hpp"
#include "capsg/labeler.hpp"

namespace capsg::io {

struct ModelConfig {
  std::size_t dim = 64;          // patch feature width
  std::size_t text_dim = 64;     // token feature width
  std::size_t rnn_dim = 32;      // entity encoder state width
  std::size_t shared_dim = 256;  // shared embedding space width
  std::vector<std::size_t> stage_sizes = {64, 8};
  std::size_t patch_size = 16;
  std::size_t scorer_embed_dim = 16;

  std::size_t stages() const { return stage_sizes.size(); }
  void validate() const;
};

/// Every learnable piece of the pipeline, either loaded from a weights JSON
/// or seeded from a PRNG. The mock-scorer table is optional in a weights
/// file; when absent the scorer derives candidate embeddings from hashes of
/// the candidate strings.
struct ModelWeights {
  ModelConfig config;
  grouper::GrouperWeights grouper;
  grounder::GrounderWeights grounder;
  labeler::PositionalTags tags;
  std::optional<std::map<std::string, std::vector<double>>> mock_candidates;
  std::optional<num::Matrix> mock_bilinear;
  std::uint64_t seed = 0;

  labeler::MockScorer make_scorer(const std::vector<std::string>& candidates,
                                  const labeler::PatchGeometry& geom) const;
};

/// Weights JSON: a "config" object plus named entries
/// ("grouper.layer1.centers", "grounder.proj_t.w1", "labeler.tags.f_sub",
/// ...), each an inline array or a path to a .ftns tensor relative to the
/// weights file. Scalar entries carry tau, theta and the grouper
/// temperature. Throws Data naming the first missing or misshaped entry.
ModelWeights load_weights(const std::string& path);

/// Gaussian init with scale 1/sqrt(fan-in) for runs without a weights file.
ModelWeights seeded_weights(const ModelConfig& config, std::uint64_t seed);

/// Writes every entry inline. Round-trips through load_weights.
void save_weights(const ModelWeights& w, const std::string& path);

}  // namespace capsg::io
