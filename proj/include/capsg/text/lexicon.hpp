#pragma once

#include <optional>
#include <string>
#include <unordered_map>

namespace capsg::text {

enum class Tag { DET, ADJ, NOUN, VERB, ADP, CONJ, NUM, PRON, OTHER };

const char* tag_name(Tag t);
std::optional<Tag> tag_from_name(const std::string& name);

/// Word lists backing the tokenizer and lemmatizer. Loaded from the three
/// TSV files in the repo's data/ directory:
///   lexicon_closed.tsv   word -> tag (+aux flag for auxiliary verbs)
///   lexicon_open.tsv     word -> NOUN|VERB|ADJ (~2k entries)
///   lemma_irregular.tsv  inflected form -> lemma (~300 entries)
class Lexicon {
 public:
  struct ClosedEntry {
    Tag tag;
    bool aux = false;
  };

  static Lexicon load(const std::string& dir);

  /// The repo copy, located via $CAPSG_DATA_DIR or the compiled-in path.
  static const Lexicon& bundled();

  std::optional<ClosedEntry> closed(const std::string& word) const;
  std::optional<Tag> open(const std::string& word) const;
  bool open_has(const std::string& word, Tag tag) const;
  std::optional<std::string> irregular(const std::string& word) const;

 private:
  std::unordered_map<std::string, ClosedEntry> closed_;
  std::unordered_map<std::string, Tag> open_;
  std::unordered_map<std::string, std::string> irregular_;
};

/// Directory the bundled data files live in.
std::string default_data_dir();

}  // namespace capsg::text
