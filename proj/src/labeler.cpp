#include "capsg/labeler.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

#include "capsg/num/rng.hpp"

namespace capsg::labeler {

Prompt build_entity_prompt() {
  Prompt p;
  p.slot = Prompt::Slot::Entity;
  p.tokens = {"a", "photo", "of", kEntitySlot};
  return p;
}

Prompt build_relation_prompt(const std::string& subject, const std::string& object) {
  if (subject.empty() || object.empty())
    throw_argument("build_relation_prompt: empty subject or object");
  Prompt p;
  p.slot = Prompt::Slot::Relation;
  p.subject = subject;
  p.object = object;
  p.tokens = {"a",    "photo", "of",    subject,    "and", object,
              "what", "is",    "their", "relation", kRelationSlot};
  return p;
}

std::string prompt_to_json(const Prompt& prompt) {
  nlohmann::json root;
  root["slot"] = prompt.slot == Prompt::Slot::Entity ? "entity" : "relation";
  root["tokens"] = prompt.tokens;
  root["subject"] = prompt.subject;
  root["object"] = prompt.object;
  return root.dump();
}

Prompt prompt_from_json(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw_format(std::string("prompt: invalid JSON: ") + e.what());
  }
  Prompt prompt;
  const std::string slot = root.at("slot").get<std::string>();
  if (slot == "entity")
    prompt.slot = Prompt::Slot::Entity;
  else if (slot == "relation")
    prompt.slot = Prompt::Slot::Relation;
  else
    throw_format("prompt: unknown slot kind " + slot);
  prompt.tokens = root.at("tokens").get<std::vector<std::string>>();
  prompt.subject = root.at("subject").get<std::string>();
  prompt.object = root.at("object").get<std::string>();
  std::size_t open_slots = 0;
  for (const auto& token : prompt.tokens)
    if (token == kEntitySlot || token == kRelationSlot) ++open_slots;
  if (open_slots != 1) throw_format("prompt: expected exactly one open slot");
  return prompt;
}

Mask complement_mask(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw_shape("complement_mask: shape mismatch");
  Mask uni = mask_union(a, b);
  Mask out(a.height, a.width);
  const Box rect = mask_bounds(uni);
  if (!rect.valid()) return out;  // both masks empty
  for (long r = rect.y0; r <= rect.y1; ++r)
    for (long c = rect.x0; c <= rect.x1; ++c)
      if (!uni.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)))
        out.set(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
  return out;
}

namespace {

void add_tag(num::Matrix& tokens, std::size_t row, const std::vector<double>& tag) {
  if (tag.size() != tokens.cols()) throw_shape("tag_positions: tag width mismatch");
  for (std::size_t i = 0; i < tag.size(); ++i) tokens(row, i) += tag[i];
}

}  // namespace

num::Matrix tag_positions(const num::Matrix& patch_tokens, const Mask& m_sub,
                          const Mask& m_obj, const Mask& m_region,
                          const PositionalTags& tags, const PatchGeometry& geom) {
  if (patch_tokens.rows() != geom.grid_rows * geom.grid_cols)
    throw_shape("tag_positions: token count != patch grid");
  if (!m_sub.same_shape(m_obj) || !m_sub.same_shape(m_region))
    throw_shape("tag_positions: mask shapes differ");

  num::Matrix out = patch_tokens;
  for (std::size_t p = 0; p < out.rows(); ++p) {
    const std::size_t pr = p / geom.grid_cols, pc = p % geom.grid_cols;
    std::size_t cnt_sub = 0, cnt_obj = 0, cnt_reg = 0;
    for (std::size_t r = pr * geom.patch_size; r < (pr + 1) * geom.patch_size; ++r) {
      for (std::size_t c = pc * geom.patch_size; c < (pc + 1) * geom.patch_size; ++c) {
        cnt_sub += m_sub.at(r, c);
        cnt_obj += m_obj.at(r, c);
        cnt_reg += m_region.at(r, c);
      }
    }
    const std::size_t best = std::max({cnt_sub, cnt_obj, cnt_reg});
    if (best == 0) continue;
    if (cnt_sub == best)
      add_tag(out, p, tags.f_sub);
    else if (cnt_obj == best)
      add_tag(out, p, tags.f_obj);
    else
      add_tag(out, p, tags.f_region);
  }
  return out;
}

MockScorer::MockScorer(std::map<std::string, std::vector<double>> candidates,
                       num::Matrix bilinear, PatchGeometry geom)
    : candidates_(std::move(candidates)), bilinear_(std::move(bilinear)), geom_(geom) {
  if (candidates_.empty()) throw_argument("MockScorer: empty candidate table");
  for (const auto& [name, emb] : candidates_)
    if (emb.size() != bilinear_.cols())
      throw_shape("MockScorer: embedding width mismatch for '" + name + "'");
}

MockScorer MockScorer::seeded(const std::vector<std::string>& candidates, std::size_t dim,
                              std::size_t embed_dim, PatchGeometry geom,
                              std::uint64_t seed) {
  std::map<std::string, std::vector<double>> table;
  for (const auto& cand : candidates) {
    num::SplitMix64 rng(seed ^ num::fnv1a(cand.data(), cand.size()));
    std::vector<double> emb(embed_dim);
    for (auto& v : emb) v = rng.gaussian();
    table.emplace(cand, std::move(emb));
  }
  num::SplitMix64 rng(seed ^ 0x5C09EB111EA9ULL);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  num::Matrix bilinear(dim, embed_dim);
  for (std::size_t i = 0; i < bilinear.size(); ++i)
    bilinear.data()[i] = scale * rng.gaussian();
  return MockScorer(std::move(table), std::move(bilinear), geom);
}

std::vector<double> MockScorer::context(const Prompt& prompt, const num::Matrix& tokens,
                                        const Mask& active) const {
  const std::size_t d = tokens.cols();
  std::vector<double> ctx(d, 0.0);

  // Masked token mean; a patch participates when the mask covers most of it.
  std::size_t used = 0;
  const std::size_t area = geom_.patch_size * geom_.patch_size;
  for (std::size_t p = 0; p < tokens.rows(); ++p) {
    const std::size_t pr = p / geom_.grid_cols, pc = p % geom_.grid_cols;
    std::size_t inside = 0;
    for (std::size_t r = pr * geom_.patch_size; r < (pr + 1) * geom_.patch_size; ++r)
      for (std::size_t c = pc * geom_.patch_size; c < (pc + 1) * geom_.patch_size; ++c)
        inside += active.at(r, c);
    if (2 * inside > area) {
      for (std::size_t i = 0; i < d; ++i) ctx[i] += tokens(p, i);
      ++used;
    }
  }
  if (used == 0) {  // thin mask: fall back to the plain mean
    for (std::size_t p = 0; p < tokens.rows(); ++p)
      for (std::size_t i = 0; i < d; ++i) ctx[i] += tokens(p, i);
    used = tokens.rows();
  }
  for (auto& v : ctx) v /= static_cast<double>(used);

  // Prompt words map to fixed pseudo-embeddings via their hash.
  for (const auto& word : prompt.tokens) {
    num::SplitMix64 rng(num::fnv1a(word.data(), word.size()));
    for (std::size_t i = 0; i < d; ++i)
      ctx[i] += (rng.uniform() * 2.0 - 1.0) / static_cast<double>(prompt.tokens.size());
  }
  return ctx;
}

double MockScorer::score(const Prompt& prompt, const num::Matrix& tokens,
                         const Mask& active, const std::string& candidate) const {
  auto target = candidates_.find(candidate);
  if (target == candidates_.end())
    throw_data("MockScorer: candidate not in table: " + candidate);
  if (tokens.cols() != bilinear_.rows())
    throw_shape("MockScorer: token width != bilinear rows");

  const std::vector<double> ctx = context(prompt, tokens, active);
  std::vector<double> projected(bilinear_.cols(), 0.0);
  for (std::size_t i = 0; i < bilinear_.rows(); ++i)
    for (std::size_t j = 0; j < bilinear_.cols(); ++j)
      projected[j] += ctx[i] * bilinear_(i, j);

  double target_logit = 0.0;
  double max_logit = -1e300;
  std::vector<double> logits;
  logits.reserve(candidates_.size());
  for (const auto& [name, emb] : candidates_) {
    double logit = 0.0;
    for (std::size_t j = 0; j < emb.size(); ++j) logit += projected[j] * emb[j];
    logits.push_back(logit);
    max_logit = std::max(max_logit, logit);
    if (name == candidate) target_logit = logit;
  }
  double lse = 0.0;
  for (double l : logits) lse += std::exp(l - max_logit);
  return target_logit - max_logit - std::log(lse);
}

std::vector<std::string> MockScorer::vocabulary() const {
  std::vector<std::string> out;
  out.reserve(candidates_.size());
  for (const auto& [name, emb] : candidates_) out.push_back(name);
  return out;
}

std::vector<ScoredLabel> rank_labels(const LabelScorer& scorer, const Prompt& prompt,
                                     const num::Matrix& tokens, const Mask& active,
                                     const std::vector<std::string>& candidates) {
  if (candidates.empty()) throw_argument("rank_labels: empty candidate set");
  std::vector<ScoredLabel> out;
  out.reserve(candidates.size());
  for (const auto& cand : candidates)
    out.push_back({cand, scorer.score(prompt, tokens, active, cand)});
  std::stable_sort(out.begin(), out.end(), [](const ScoredLabel& a, const ScoredLabel& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.label < b.label;
  });
  return out;
}

GenerationLosses entity_relation_losses(const LabelScorer& scorer,
                                        const TrainingBatch& batch) {
  GenerationLosses out;

  const Prompt ent_prompt = build_entity_prompt();
  double ent_sum = 0.0;
  for (const auto& lm : batch.masks) {
    ent_sum += -scorer.score(ent_prompt, batch.tokens, lm.mask, lm.label);
    ++out.entity_terms;
  }
  if (out.entity_terms > 0) out.entity = ent_sum / static_cast<double>(out.entity_terms);

  double rel_sum = 0.0;
  for (const auto& rel : batch.relations) {
    const LabeledMask& sub = batch.masks.at(rel.subject);
    const LabeledMask& obj = batch.masks.at(rel.object);
    const Mask region = complement_mask(sub.mask, obj.mask);
    const num::Matrix tagged =
        tag_positions(batch.tokens, sub.mask, obj.mask, region, batch.tags, batch.geom);
    const Mask active = mask_union(mask_union(sub.mask, obj.mask), region);
    const Prompt prompt = build_relation_prompt(sub.label, obj.label);
    rel_sum += -scorer.score(prompt, tagged, active, rel.predicate);
    ++out.relation_terms;
  }
  if (out.relation_terms > 0)
    out.relation = rel_sum / static_cast<double>(out.relation_terms);
  return out;
}

}  // namespace capsg::labeler
