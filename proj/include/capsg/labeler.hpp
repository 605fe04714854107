#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "capsg/mask.hpp"
#include "capsg/num/matrix.hpp"
#include "capsg/text/textgraph.hpp"

namespace capsg::labeler {

inline constexpr const char* kEntitySlot = "[ENT]";
inline constexpr const char* kRelationSlot = "[REL]";

/// Fixed template with exactly one open slot; subject/object already filled
/// for relation prompts.
struct Prompt {
  enum class Slot { Entity, Relation };
  Slot slot = Slot::Entity;
  std::vector<std::string> tokens;
  std::string subject;  // filled lemmas, relation prompts only
  std::string object;
};

/// "a photo of [ENT]"
Prompt build_entity_prompt();

/// "a photo of <sub> and <obj> what is their relation [REL]"
Prompt build_relation_prompt(const std::string& subject, const std::string& object);

std::string prompt_to_json(const Prompt& prompt);
Prompt prompt_from_json(const std::string& text);

struct PositionalTags {
  std::vector<double> f_sub, f_obj, f_region;
};

/// Rec(m_i ∪ m_j) − (m_i ∪ m_j): the enclosing rectangle of the union minus
/// the union itself. Empty union -> empty mask.
Mask complement_mask(const Mask& a, const Mask& b);

struct PatchGeometry {
  std::size_t grid_rows = 0;
  std::size_t grid_cols = 0;
  std::size_t patch_size = 16;
};

/// Adds f_sub/f_obj/f_region to each patch token owned by the respective
/// mask. A patch belongs to the mask holding the most of its pixels; ties
/// resolve subject > object > region; untouched when no mask reaches it.
num::Matrix tag_positions(const num::Matrix& patch_tokens, const Mask& m_sub,
                          const Mask& m_obj, const Mask& m_region,
                          const PositionalTags& tags, const PatchGeometry& geom);

/// Scoring seam for the label decoder. Implementations must be safe for
/// concurrent read-only use. score() returns a log-probability normalized
/// over vocabulary().
class LabelScorer {
 public:
  virtual ~LabelScorer() = default;
  virtual double score(const Prompt& prompt, const num::Matrix& tokens,
                       const Mask& active, const std::string& candidate) const = 0;
  virtual std::vector<std::string> vocabulary() const = 0;
};

/// Deterministic stand-in for a neural decoder: a bilinear form between a
/// context vector (masked token mean + hashed prompt embedding) and a
/// per-candidate embedding, softmax-normalized over the candidate table.
class MockScorer : public LabelScorer {
 public:
  MockScorer(std::map<std::string, std::vector<double>> candidates, num::Matrix bilinear,
             PatchGeometry geom);

  /// Hash-seeded candidate embeddings for runs without a weights file.
  static MockScorer seeded(const std::vector<std::string>& candidates, std::size_t dim,
                           std::size_t embed_dim, PatchGeometry geom, std::uint64_t seed);

  double score(const Prompt& prompt, const num::Matrix& tokens, const Mask& active,
               const std::string& candidate) const override;
  std::vector<std::string> vocabulary() const override;

 private:
  std::vector<double> context(const Prompt& prompt, const num::Matrix& tokens,
                              const Mask& active) const;

  std::map<std::string, std::vector<double>> candidates_;
  num::Matrix bilinear_;  // token_dim × embed_dim
  PatchGeometry geom_;
};

struct ScoredLabel {
  std::string label;
  double log_prob;
};

/// Candidates sorted by descending log-probability, ties lexicographic.
std::vector<ScoredLabel> rank_labels(const LabelScorer& scorer, const Prompt& prompt,
                                     const num::Matrix& tokens, const Mask& active,
                                     const std::vector<std::string>& candidates);

struct LabeledMask {
  Mask mask;
  std::string label;  // pseudo entity label (lemma)
};

struct RelationSample {
  std::size_t subject;  // indices into the mask list
  std::size_t object;
  std::string predicate;  // lemma
};

struct TrainingBatch {
  num::Matrix tokens;  // updated patch tokens, N×d
  PositionalTags tags;
  PatchGeometry geom;
  std::vector<LabeledMask> masks;
  std::vector<RelationSample> relations;
};

struct GenerationLosses {
  std::optional<double> entity;    // absent when nothing is grounded
  std::optional<double> relation;  // absent when no grounded edge exists
  std::size_t entity_terms = 0;
  std::size_t relation_terms = 0;
};

/// Mean cross-entropy of the pseudo entity labels under the entity prompt
/// and of the edge predicates under the relation prompt (with positional
/// tags and the complement mask applied).
GenerationLosses entity_relation_losses(const LabelScorer& scorer,
                                        const TrainingBatch& batch);

}  // namespace capsg::labeler
