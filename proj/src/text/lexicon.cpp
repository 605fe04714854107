#include "capsg/text/lexicon.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

#include "capsg/error.hpp"

#ifndef CAPSG_DATA_DIR
#define CAPSG_DATA_DIR "data"
#endif

namespace capsg::text {

const char* tag_name(Tag t) {
  switch (t) {
    case Tag::DET: return "DET";
    case Tag::ADJ: return "ADJ";
    case Tag::NOUN: return "NOUN";
    case Tag::VERB: return "VERB";
    case Tag::ADP: return "ADP";
    case Tag::CONJ: return "CONJ";
    case Tag::NUM: return "NUM";
    case Tag::PRON: return "PRON";
    case Tag::OTHER: return "OTHER";
  }
  return "OTHER";
}

std::optional<Tag> tag_from_name(const std::string& name) {
  static const std::unordered_map<std::string, Tag> table = {
      {"DET", Tag::DET},   {"ADJ", Tag::ADJ},   {"NOUN", Tag::NOUN},
      {"VERB", Tag::VERB}, {"ADP", Tag::ADP},   {"CONJ", Tag::CONJ},
      {"NUM", Tag::NUM},   {"PRON", Tag::PRON}, {"OTHER", Tag::OTHER}};
  auto it = table.find(name);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

std::string default_data_dir() {
  if (const char* env = std::getenv("CAPSG_DATA_DIR")) return env;
  return CAPSG_DATA_DIR;
}

namespace {

std::vector<std::vector<std::string>> read_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open lexicon file: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) fields.push_back(field);
    if (!fields.empty()) rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

Lexicon Lexicon::load(const std::string& dir) {
  Lexicon lex;
  for (const auto& row : read_tsv(dir + "/lexicon_closed.tsv")) {
    if (row.size() < 2) throw_data("malformed closed lexicon row");
    auto tag = tag_from_name(row[1]);
    if (!tag) throw_data("unknown tag in closed lexicon: " + row[1]);
    lex.closed_[row[0]] = ClosedEntry{*tag, row.size() > 2 && row[2] == "aux"};
  }
  for (const auto& row : read_tsv(dir + "/lexicon_open.tsv")) {
    if (row.size() < 2) throw_data("malformed open lexicon row");
    auto tag = tag_from_name(row[1]);
    if (!tag) throw_data("unknown tag in open lexicon: " + row[1]);
    lex.open_[row[0]] = *tag;
  }
  for (const auto& row : read_tsv(dir + "/lemma_irregular.tsv")) {
    if (row.size() < 2) throw_data("malformed irregular lemma row");
    lex.irregular_[row[0]] = row[1];
  }
  return lex;
}

const Lexicon& Lexicon::bundled() {
  static const Lexicon lex = Lexicon::load(default_data_dir());
  return lex;
}

std::optional<Lexicon::ClosedEntry> Lexicon::closed(const std::string& word) const {
  auto it = closed_.find(word);
  if (it == closed_.end()) return std::nullopt;
  return it->second;
}

std::optional<Tag> Lexicon::open(const std::string& word) const {
  auto it = open_.find(word);
  if (it == open_.end()) return std::nullopt;
  return it->second;
}

bool Lexicon::open_has(const std::string& word, Tag tag) const {
  auto it = open_.find(word);
  return it != open_.end() && it->second == tag;
}

std::optional<std::string> Lexicon::irregular(const std::string& word) const {
  auto it = irregular_.find(word);
  if (it == irregular_.end()) return std::nullopt;
  return it->second;
}

}  // namespace capsg::text
