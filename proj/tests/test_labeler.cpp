#include <cmath>

#include "doctest.h"
#include "test_helpers.hpp"

#include "capsg/labeler.hpp"

using namespace capsg;
using namespace capsg::labeler;
using testutil::random_matrix;

namespace {

Mask box_mask(std::size_t h, std::size_t w, std::size_t r0, std::size_t c0,
              std::size_t r1, std::size_t c1) {
  Mask m(h, w);
  for (std::size_t r = r0; r <= r1; ++r)
    for (std::size_t c = c0; c <= c1; ++c) m.set(r, c);
  return m;
}

}  // namespace

TEST_CASE("prompt templates") {
  const Prompt ent = build_entity_prompt();
  REQUIRE(ent.tokens.size() == 4);
  CHECK(ent.tokens[0] == "a");
  CHECK(ent.tokens[1] == "photo");
  CHECK(ent.tokens[2] == "of");
  CHECK(ent.tokens[3] == kEntitySlot);

  const Prompt rel = build_relation_prompt("man", "horse");
  const std::vector<std::string> expect = {"a",    "photo", "of",    "man",
                                           "and",  "horse", "what",  "is",
                                           "their", "relation", kRelationSlot};
  CHECK(rel.tokens == expect);
  CHECK(rel.subject == "man");
  CHECK(rel.object == "horse");
  CHECK_THROWS_AS(build_relation_prompt("", "horse"), Error);
}

TEST_CASE("complement_mask is the enclosing rectangle minus the union") {
  // Opposite corners of a 2x2 grid leave the other two pixels.
  Mask a(2, 2), b(2, 2);
  a.set(0, 0);
  b.set(1, 1);
  const Mask comp = complement_mask(a, b);
  CHECK_FALSE(comp.at(0, 0));
  CHECK_FALSE(comp.at(1, 1));
  CHECK(comp.at(0, 1));
  CHECK(comp.at(1, 0));

  // A rectangular mask containing the other leaves nothing.
  const Mask outer = box_mask(4, 4, 0, 0, 2, 2);
  const Mask inner = box_mask(4, 4, 1, 1, 2, 2);
  CHECK(complement_mask(outer, inner).empty());

  // Both empty -> empty.
  CHECK(complement_mask(Mask(3, 3), Mask(3, 3)).empty());

  // Pixel-loop oracle on random masks, plus the containment properties.
  num::SplitMix64 rng(31);
  for (int rep = 0; rep < 30; ++rep) {
    Mask x(5, 7), y(5, 7);
    for (std::size_t i = 0; i < x.bits.size(); ++i) {
      x.bits[i] = rng.below(4) == 0;
      y.bits[i] = rng.below(4) == 0;
    }
    const Mask got = complement_mask(x, y);
    const Mask uni = mask_union(x, y);
    const Box rect = mask_bounds(uni);
    for (std::size_t r = 0; r < 5; ++r) {
      for (std::size_t c = 0; c < 7; ++c) {
        const bool in_rect = rect.valid() && static_cast<long>(r) >= rect.y0 &&
                             static_cast<long>(r) <= rect.y1 &&
                             static_cast<long>(c) >= rect.x0 &&
                             static_cast<long>(c) <= rect.x1;
        CHECK(got.at(r, c) == (in_rect && !uni.at(r, c)));
      }
    }
    CHECK(mask_intersection_count(got, uni) == 0);
  }
}

TEST_CASE("tag_positions majority rule with subject priority") {
  const PatchGeometry geom{2, 2, 2};  // 4 patches of 2x2 pixels
  num::SplitMix64 rng(32);
  const num::Matrix tokens = random_matrix(4, 3, rng);
  PositionalTags tags;
  tags.f_sub = {1.0, 0.0, 0.0};
  tags.f_obj = {0.0, 1.0, 0.0};
  tags.f_region = {0.0, 0.0, 1.0};

  // Zero tags leave tokens unchanged.
  PositionalTags zero;
  zero.f_sub.assign(3, 0.0);
  zero.f_obj.assign(3, 0.0);
  zero.f_region.assign(3, 0.0);
  Mask full(4, 4);
  for (auto& b : full.bits) b = 1;
  const num::Matrix untouched =
      tag_positions(tokens, full, Mask(4, 4), Mask(4, 4), zero, geom);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    CHECK(untouched.data()[i] == tokens.data()[i]);

  // Full-image subject mask tags every token with f_sub.
  const num::Matrix all_sub =
      tag_positions(tokens, full, Mask(4, 4), Mask(4, 4), tags, geom);
  for (std::size_t p = 0; p < 4; ++p)
    CHECK(all_sub(p, 0) == doctest::Approx(tokens(p, 0) + 1.0));

  // Patch 0 covered 3px by subject and 1px by object -> subject wins;
  // patch 1 covered 2px by object only -> object; patch 2 untouched;
  // patch 3 split 2-2 between subject and object -> priority says subject.
  Mask ms(4, 4), mo(4, 4), mr(4, 4);
  ms.set(0, 0);
  ms.set(0, 1);
  ms.set(1, 0);
  mo.set(1, 1);
  mo.set(0, 2);
  mo.set(0, 3);
  ms.set(2, 2);
  ms.set(2, 3);
  mo.set(3, 2);
  mo.set(3, 3);
  const num::Matrix tagged = tag_positions(tokens, ms, mo, mr, tags, geom);
  CHECK(tagged(0, 0) == doctest::Approx(tokens(0, 0) + 1.0));  // subject
  CHECK(tagged(1, 1) == doctest::Approx(tokens(1, 1) + 1.0));  // object
  CHECK(tagged(2, 0) == doctest::Approx(tokens(2, 0)));        // untouched
  CHECK(tagged(2, 1) == doctest::Approx(tokens(2, 1)));
  CHECK(tagged(3, 0) == doctest::Approx(tokens(3, 0) + 1.0));  // tie -> subject

  // Brute-force per-token oracle on random masks.
  for (int rep = 0; rep < 20; ++rep) {
    Mask s(4, 4), o(4, 4), r(4, 4);
    for (std::size_t i = 0; i < 16; ++i) {
      const auto pick = rng.below(5);
      if (pick == 0) s.bits[i] = 1;
      else if (pick == 1) o.bits[i] = 1;
      else if (pick == 2) r.bits[i] = 1;
    }
    const num::Matrix got = tag_positions(tokens, s, o, r, tags, geom);
    for (std::size_t p = 0; p < 4; ++p) {
      std::size_t cs = 0, co = 0, cr = 0;
      const std::size_t pr = p / 2, pc = p % 2;
      for (std::size_t rr = pr * 2; rr < pr * 2 + 2; ++rr)
        for (std::size_t cc = pc * 2; cc < pc * 2 + 2; ++cc) {
          cs += s.at(rr, cc);
          co += o.at(rr, cc);
          cr += r.at(rr, cc);
        }
      std::vector<double> expect(tokens.row(p), tokens.row(p) + 3);
      const std::size_t best = std::max({cs, co, cr});
      if (best > 0) {
        const std::vector<double>& tag =
            cs == best ? tags.f_sub : co == best ? tags.f_obj : tags.f_region;
        for (std::size_t c = 0; c < 3; ++c) expect[c] += tag[c];
      }
      for (std::size_t c = 0; c < 3; ++c)
        CHECK(got(p, c) == doctest::Approx(expect[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("mock scorer normalizes over its vocabulary") {
  const PatchGeometry geom{2, 2, 2};
  const MockScorer scorer = MockScorer::seeded({"cat", "dog", "horse"}, 3, 4, geom, 7);
  num::SplitMix64 rng(33);
  const num::Matrix tokens = random_matrix(4, 3, rng);
  Mask mask(4, 4);
  for (std::size_t i = 0; i < 8; ++i) mask.bits[i] = 1;

  const Prompt prompt = build_entity_prompt();
  double total = 0.0;
  for (const auto& cand : scorer.vocabulary())
    total += std::exp(scorer.score(prompt, tokens, mask, cand));
  CHECK(std::fabs(total - 1.0) <= 1e-9);

  CHECK_THROWS_AS(scorer.score(prompt, tokens, mask, "zebra"), Error);

  // A single-candidate table scores probability one.
  const MockScorer single = MockScorer::seeded({"cat"}, 3, 4, geom, 7);
  CHECK(std::exp(single.score(prompt, tokens, mask, "cat")) == doctest::Approx(1.0));
}

TEST_CASE("rank_labels ordering, stability and monotone invariance") {
  const PatchGeometry geom{2, 2, 2};
  num::SplitMix64 rng(34);
  const num::Matrix tokens = random_matrix(4, 3, rng);
  Mask mask(4, 4);
  for (auto& b : mask.bits) b = 1;
  const Prompt prompt = build_entity_prompt();

  // Hand-set bilinear weights that favor "horse": its embedding aligns with
  // the projected context, the others are orthogonal or opposite.
  std::map<std::string, std::vector<double>> table = {
      {"horse", {1.0, 0.0}}, {"cat", {-1.0, 0.0}}, {"dog", {0.0, 0.0}}};
  num::Matrix bilinear(3, 2);
  // Project the context onto a direction with a positive inner product with
  // itself: scores become ctx·b·emb, so make b map ctx to (|ctx|², 0).
  const MockScorer probe(table, num::Matrix(3, 2), geom);
  // Zero bilinear: all logits equal -> ranking is lexicographic.
  const auto uniform = rank_labels(probe, prompt, tokens, mask, {"horse", "cat", "dog"});
  CHECK(uniform[0].label == "cat");
  CHECK(uniform[1].label == "dog");
  CHECK(uniform[2].label == "horse");

  bilinear(0, 0) = bilinear(1, 0) = bilinear(2, 0) = 1.0;
  const MockScorer scorer(table, bilinear, geom);
  // ctx components sum along bilinear column 0; sign decides the order.
  const double ctx_sum = [&] {
    double s = 0.0;
    const auto ranked = rank_labels(scorer, prompt, tokens, mask, {"horse", "cat"});
    s = ranked[0].label == "horse" ? 1.0 : -1.0;
    return s;
  }();
  const auto ranked = rank_labels(scorer, prompt, tokens, mask, {"horse", "cat", "dog"});
  if (ctx_sum > 0) {
    CHECK(ranked[0].label == "horse");
    CHECK(ranked[2].label == "cat");
  } else {
    CHECK(ranked[0].label == "cat");
    CHECK(ranked[2].label == "horse");
  }
  CHECK(ranked[1].label == "dog");

  // Permuting candidates leaves the ranking identical.
  const auto permuted = rank_labels(scorer, prompt, tokens, mask, {"dog", "horse", "cat"});
  for (std::size_t i = 0; i < ranked.size(); ++i)
    CHECK(permuted[i].label == ranked[i].label);

  CHECK_THROWS_AS(rank_labels(scorer, prompt, tokens, mask, {}), Error);
}

TEST_CASE("entity and relation losses") {
  const PatchGeometry geom{2, 2, 2};
  num::SplitMix64 rng(35);

  TrainingBatch batch;
  batch.tokens = random_matrix(4, 3, rng);
  batch.geom = geom;
  batch.tags.f_sub = {0.1, 0.0, 0.0};
  batch.tags.f_obj = {0.0, 0.1, 0.0};
  batch.tags.f_region = {0.0, 0.0, 0.1};
  batch.masks.push_back({box_mask(4, 4, 0, 0, 1, 1), "cat"});
  batch.masks.push_back({box_mask(4, 4, 2, 2, 3, 3), "mat"});
  batch.relations.push_back({0, 1, "on"});

  // Uniform scorer (zero bilinear): both losses are log V.
  std::map<std::string, std::vector<double>> table = {
      {"cat", {1.0, 0.0}}, {"mat", {0.0, 1.0}}, {"on", {1.0, 1.0}}};
  const MockScorer uniform(table, num::Matrix(3, 2), geom);
  const GenerationLosses u = entity_relation_losses(uniform, batch);
  REQUIRE(u.entity.has_value());
  REQUIRE(u.relation.has_value());
  CHECK(*u.entity == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(*u.relation == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  CHECK(u.entity_terms == 2);
  CHECK(u.relation_terms == 1);

  // No grounded masks: losses are absent, not zero.
  TrainingBatch empty;
  empty.tokens = batch.tokens;
  empty.geom = geom;
  empty.tags = batch.tags;
  const GenerationLosses none = entity_relation_losses(uniform, empty);
  CHECK_FALSE(none.entity.has_value());
  CHECK_FALSE(none.relation.has_value());

  // Seeded scorer against a per-pair scalar recomputation.
  const MockScorer seeded = MockScorer::seeded({"cat", "mat", "on"}, 3, 4, geom, 9);
  const GenerationLosses got = entity_relation_losses(seeded, batch);
  double ent_sum = 0.0;
  const Prompt ent_prompt = build_entity_prompt();
  for (const auto& lm : batch.masks)
    ent_sum += -seeded.score(ent_prompt, batch.tokens, lm.mask, lm.label);
  CHECK(*got.entity == doctest::Approx(ent_sum / 2.0).epsilon(1e-12));

  const Mask region = complement_mask(batch.masks[0].mask, batch.masks[1].mask);
  const num::Matrix tagged = tag_positions(batch.tokens, batch.masks[0].mask,
                                           batch.masks[1].mask, region, batch.tags, geom);
  const Mask active =
      mask_union(mask_union(batch.masks[0].mask, batch.masks[1].mask), region);
  const double rel_oracle =
      -seeded.score(build_relation_prompt("cat", "mat"), tagged, active, "on");
  CHECK(*got.relation == doctest::Approx(rel_oracle).epsilon(1e-12));
  CHECK(*got.entity >= 0.0);
  CHECK(*got.relation >= 0.0);
}

namespace {

// Applies a strictly increasing transform to another scorer's outputs.
class MonotoneWrapped : public LabelScorer {
 public:
  explicit MonotoneWrapped(const LabelScorer& inner) : inner_(inner) {}
  double score(const Prompt& prompt, const num::Matrix& tokens, const Mask& active,
               const std::string& candidate) const override {
    return 3.0 * inner_.score(prompt, tokens, active, candidate) + 1.5;
  }
  std::vector<std::string> vocabulary() const override { return inner_.vocabulary(); }

 private:
  const LabelScorer& inner_;
};

}  // namespace

TEST_CASE("rank_labels top-1 is invariant under monotone transforms") {
  const PatchGeometry geom{2, 2, 2};
  const MockScorer scorer =
      MockScorer::seeded({"cat", "dog", "horse", "mat"}, 3, 4, geom, 21);
  const MonotoneWrapped wrapped(scorer);
  num::SplitMix64 rng(36);
  const num::Matrix tokens = random_matrix(4, 3, rng);
  Mask mask(4, 4);
  for (auto& b : mask.bits) b = 1;
  const std::vector<std::string> candidates = {"cat", "dog", "horse", "mat"};
  for (const auto& prompt :
       {build_entity_prompt(), build_relation_prompt("cat", "mat")}) {
    const auto base = rank_labels(scorer, prompt, tokens, mask, candidates);
    const auto after = rank_labels(wrapped, prompt, tokens, mask, candidates);
    CHECK(after[0].label == base[0].label);
    for (std::size_t i = 0; i < base.size(); ++i)
      CHECK(after[i].label == base[i].label);  // full order preserved here
  }
}

TEST_CASE("prompt serialization round-trips") {
  for (const Prompt& p :
       {build_entity_prompt(), build_relation_prompt("man", "horse")}) {
    const std::string text = prompt_to_json(p);
    const Prompt back = prompt_from_json(text);
    CHECK(back.tokens == p.tokens);
    CHECK(back.slot == p.slot);
    CHECK(back.subject == p.subject);
    CHECK(back.object == p.object);
    CHECK(prompt_to_json(back) == text);
  }
  CHECK_THROWS_AS(prompt_from_json("{"), Error);
  CHECK_THROWS_AS(
      prompt_from_json(R"({"slot":"entity","tokens":["a"],"subject":"","object":""})"),
      Error);  // no open slot
}

TEST_CASE("a scorer peaked on the targets drives both losses to zero") {
  const PatchGeometry geom{2, 2, 2};
  num::SplitMix64 rng(37);
  TrainingBatch batch;
  batch.tokens = random_matrix(4, 3, rng, 0.5, 1.0);  // positive context
  batch.geom = geom;
  batch.tags.f_sub = {0.0, 0.0, 0.0};
  batch.tags.f_obj = {0.0, 0.0, 0.0};
  batch.tags.f_region = {0.0, 0.0, 0.0};
  batch.masks.push_back({box_mask(4, 4, 0, 0, 1, 1), "cat"});
  batch.relations.push_back({0, 0, "on"});
  batch.relations.clear();

  // With zero tags the context is identical for every query; point the
  // bilinear form at a direction where the target embedding is enormous.
  std::map<std::string, std::vector<double>> table = {
      {"cat", {1000.0}}, {"mat", {-1000.0}}, {"on", {0.0}}};
  num::Matrix bilinear(3, 1);
  bilinear(0, 0) = bilinear(1, 0) = bilinear(2, 0) = 1.0;
  const MockScorer peaked(table, bilinear, geom);
  const GenerationLosses losses = entity_relation_losses(peaked, batch);
  REQUIRE(losses.entity.has_value());
  CHECK(*losses.entity <= 1e-6);
  CHECK(*losses.entity >= 0.0);
}
