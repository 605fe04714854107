#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "capsg/text/lexicon.hpp"

namespace capsg::text {

struct Token {
  std::string text;   // lowercased, punctuation stripped
  std::size_t index;  // position in the caption's token sequence
  Tag tag;
};

struct Entity {
  int id;
  std::size_t span_begin;  // inclusive token range
  std::size_t span_end;
  std::string head_text;
  std::string lemma;
};

struct Edge {
  int subject;
  std::string predicate;  // surface phrase, e.g. "sitting on"
  std::string lemma;      // lemmatized phrase, e.g. "sit on"
  int object;
};

/// Entities and directed predicate edges parsed from one caption (or merged
/// from several captions of one image).
struct TextGraph {
  std::string caption_id;
  std::vector<Token> tokens;
  std::vector<Entity> entities;
  std::vector<Edge> edges;
};

/// Lowercases, splits on whitespace and punctuation (punctuation dropped),
/// and tags each token via the closed-class lexicon, the open-class lexicon,
/// and -ing/-ed/-s suffix rules.
std::vector<Token> tokenize(const std::string& caption,
                            const Lexicon& lex = Lexicon::bundled());

/// Rule-based lemmatizer; `word` must already be lowercase. Closed-class
/// tags are returned unchanged; the irregular table is consulted first.
std::string lemmatize(const std::string& word, Tag tag,
                      const Lexicon& lex = Lexicon::bundled());

/// Extracts maximal (ADJ|NOUN)*NOUN chunks as entities and links consecutive
/// entities through VERB(ADP){0,2} / ADP{1,2} patterns; "and" between
/// entities distributes the following edge to every conjunct. Total: any
/// caption yields a valid graph.
TextGraph parse_caption(const std::string& caption_id, const std::string& caption,
                        const Lexicon& lex = Lexicon::bundled());

/// Union of the input graphs with entities deduplicated by lemma and edges
/// by (subject lemma, predicate lemma, object lemma); entity ids renumbered
/// densely. Token streams are concatenated and spans rebased.
TextGraph merge_text_graphs(const std::vector<TextGraph>& graphs);

/// Structural equality ignoring token positions: same entity lemma sequence
/// and same edge lemma triples.
bool structurally_equal(const TextGraph& a, const TextGraph& b);

/// Part of a caption id before the '#' separator (the image id); the whole
/// id when no separator is present.
std::string image_id_of(const std::string& caption_id);

}  // namespace capsg::text
