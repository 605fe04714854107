#include "capsg/text/textgraph.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <unordered_map>

#include "capsg/error.hpp"

namespace capsg::text {

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

bool all_digits(const std::string& w) {
  for (char c : w)
    if (!std::isdigit(static_cast<unsigned char>(c))) return false;
  return !w.empty();
}

bool ends_with(const std::string& w, const char* suffix) {
  const std::size_t n = std::char_traits<char>::length(suffix);
  return w.size() >= n && w.compare(w.size() - n, n, suffix) == 0;
}

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

// Consonants that typically double before -ing/-ed (sit -> sitting).
bool doubling_consonant(char c) {
  switch (c) {
    case 'b': case 'd': case 'g': case 'm':
    case 'n': case 'p': case 'r': case 't':
      return true;
    default:
      return false;
  }
}

bool has_doubled_tail(const std::string& s) {
  return s.size() >= 2 && s[s.size() - 1] == s[s.size() - 2] &&
         !is_vowel(s.back()) && doubling_consonant(s.back());
}

Tag tag_word(const std::string& w, const Lexicon& lex) {
  if (auto c = lex.closed(w)) return c->tag;
  if (auto o = lex.open(w)) return *o;
  if (all_digits(w)) return Tag::NUM;
  if (ends_with(w, "ing") && w.size() >= 5) return Tag::VERB;
  if (ends_with(w, "ed") && w.size() >= 4) return Tag::VERB;
  if (w.back() == 's' && w.size() >= 3) {
    // Tag by the stem when we know it: "sits" -> sit/VERB, "cats" -> cat/NOUN.
    if (ends_with(w, "ies") && w.size() > 4) {
      if (auto t = lex.open(w.substr(0, w.size() - 3) + "y")) return *t;
    }
    if (ends_with(w, "es")) {
      if (auto t = lex.open(w.substr(0, w.size() - 2))) return *t;
    }
    if (!ends_with(w, "ss")) {
      if (auto t = lex.open(w.substr(0, w.size() - 1))) return *t;
    }
    return Tag::NOUN;
  }
  return Tag::NOUN;
}

std::string lemma_noun(const std::string& w, const Lexicon& lex) {
  if (ends_with(w, "ies") && w.size() > 4) return w.substr(0, w.size() - 3) + "y";
  if (ends_with(w, "es") && w.size() >= 4) {
    const std::string drop_s = w.substr(0, w.size() - 1);
    const std::string drop_es = w.substr(0, w.size() - 2);
    // "horses" -> horse, "boxes" -> box; the lexicon decides when both fit.
    if (lex.open_has(drop_s, Tag::NOUN)) return drop_s;
    if (lex.open_has(drop_es, Tag::NOUN)) return drop_es;
    if (ends_with(w, "ses") || ends_with(w, "xes") || ends_with(w, "zes") ||
        ends_with(w, "ches") || ends_with(w, "shes") || ends_with(w, "oes"))
      return drop_es;
  }
  if (w.size() >= 4 && w.back() == 's' && !ends_with(w, "ss") &&
      !ends_with(w, "us") && !ends_with(w, "is"))
    return w.substr(0, w.size() - 1);
  return w;
}

std::string lemma_verb(const std::string& w, const Lexicon& lex) {
  auto verb_in_lex = [&](const std::string& s) { return lex.open_has(s, Tag::VERB); };
  auto any_in_lex = [&](const std::string& s) { return lex.open(s).has_value(); };

  if (ends_with(w, "ing") && w.size() >= 5) {
    const std::string stem = w.substr(0, w.size() - 3);
    std::vector<std::string> cands = {stem};
    if (has_doubled_tail(stem)) cands.push_back(stem.substr(0, stem.size() - 1));
    cands.push_back(stem + "e");
    for (const auto& c : cands)
      if (verb_in_lex(c)) return c;
    for (const auto& c : cands)
      if (any_in_lex(c)) return c;
    if (has_doubled_tail(stem)) return stem.substr(0, stem.size() - 1);
    return stem;
  }
  if (ends_with(w, "ied") && w.size() >= 5) return w.substr(0, w.size() - 3) + "y";
  if (ends_with(w, "ed") && w.size() >= 4) {
    const std::string drop_d = w.substr(0, w.size() - 1);   // "moved" -> "move"
    const std::string drop_ed = w.substr(0, w.size() - 2);  // "walked" -> "walk"
    std::vector<std::string> cands = {drop_ed};
    if (has_doubled_tail(drop_ed)) cands.push_back(drop_ed.substr(0, drop_ed.size() - 1));
    cands.push_back(drop_d);
    for (const auto& c : cands)
      if (verb_in_lex(c)) return c;
    for (const auto& c : cands)
      if (any_in_lex(c)) return c;
    if (has_doubled_tail(drop_ed)) return drop_ed.substr(0, drop_ed.size() - 1);
    return drop_ed;
  }
  if (ends_with(w, "ies") && w.size() > 4) return w.substr(0, w.size() - 3) + "y";
  if (ends_with(w, "es") && w.size() >= 4) {
    const std::string drop_es = w.substr(0, w.size() - 2);
    const std::string drop_s = w.substr(0, w.size() - 1);
    if (verb_in_lex(drop_es)) return drop_es;
    if (verb_in_lex(drop_s)) return drop_s;
    if (ends_with(w, "ses") || ends_with(w, "xes") || ends_with(w, "zes") ||
        ends_with(w, "ches") || ends_with(w, "shes"))
      return drop_es;
    return drop_s;
  }
  if (w.size() >= 3 && w.back() == 's' && !ends_with(w, "ss"))
    return w.substr(0, w.size() - 1);
  return w;
}

}  // namespace

std::vector<Token> tokenize(const std::string& caption, const Lexicon& lex) {
  std::vector<Token> tokens;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    Token t;
    t.text = cur;
    t.index = tokens.size();
    t.tag = tag_word(cur, lex);
    tokens.push_back(std::move(t));
    cur.clear();
  };
  for (char raw : caption) {
    if (is_word_char(raw)) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(raw))));
    } else {
      flush();
    }
  }
  flush();
  return tokens;
}

std::string lemmatize(const std::string& word, Tag tag, const Lexicon& lex) {
  switch (tag) {
    case Tag::DET:
    case Tag::ADP:
    case Tag::CONJ:
    case Tag::PRON:
    case Tag::NUM:
    case Tag::OTHER:
      return word;
    default:
      break;
  }
  if (auto irr = lex.irregular(word)) return *irr;
  if (tag == Tag::NOUN) return lemma_noun(word, lex);
  if (tag == Tag::VERB) return lemma_verb(word, lex);
  return word;  // ADJ
}

namespace {

struct PredicateMatch {
  bool matched = false;
  bool conjunction = false;
  std::string phrase;
  std::string lemma;
};

// Patterns over the tokens strictly between two consecutive entities, after
// dropping determiners, numerals, pronouns and auxiliary verbs:
//   (a) VERB ADP{0,2}   predicate = verb phrase, lemma via the head verb
//   (b) ADP{1,2}        predicate = preposition(s)
// A lone "and" links the entities into a conjunction group instead.
PredicateMatch match_between(const std::vector<Token>& tokens, std::size_t begin,
                             std::size_t end, const Lexicon& lex) {
  PredicateMatch out;
  std::vector<const Token*> kept;
  for (std::size_t i = begin; i < end; ++i) {
    const Token& t = tokens[i];
    if (t.tag == Tag::DET || t.tag == Tag::NUM || t.tag == Tag::PRON) continue;
    if (t.tag == Tag::VERB) {
      auto c = lex.closed(t.text);
      if (c && c->aux) continue;
    }
    kept.push_back(&t);
  }
  if (kept.size() == 1 && kept[0]->tag == Tag::CONJ && kept[0]->text == "and") {
    out.conjunction = true;
    return out;
  }
  if (kept.empty() || kept.size() > 3) return out;

  auto all_adp_after = [&](std::size_t from) {
    for (std::size_t i = from; i < kept.size(); ++i)
      if (kept[i]->tag != Tag::ADP) return false;
    return true;
  };

  if (kept[0]->tag == Tag::VERB && all_adp_after(1)) {
    out.matched = true;
    out.phrase = kept[0]->text;
    out.lemma = lemmatize(kept[0]->text, Tag::VERB, lex);
    for (std::size_t i = 1; i < kept.size(); ++i) {
      out.phrase += " " + kept[i]->text;
      out.lemma += " " + kept[i]->text;
    }
    return out;
  }
  if (kept.size() <= 2 && all_adp_after(0)) {
    out.matched = true;
    out.phrase = kept[0]->text;
    out.lemma = kept[0]->text;
    if (kept.size() == 2) {
      out.phrase += " " + kept[1]->text;
      out.lemma += " " + kept[1]->text;
    }
    return out;
  }
  return out;
}

}  // namespace

TextGraph parse_caption(const std::string& caption_id, const std::string& caption,
                        const Lexicon& lex) {
  TextGraph g;
  g.caption_id = caption_id;
  g.tokens = tokenize(caption, lex);

  // Entity chunks: maximal ADJ/NOUN runs trimmed to their last noun.
  std::size_t i = 0;
  while (i < g.tokens.size()) {
    if (g.tokens[i].tag != Tag::ADJ && g.tokens[i].tag != Tag::NOUN) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < g.tokens.size() &&
           (g.tokens[j].tag == Tag::ADJ || g.tokens[j].tag == Tag::NOUN))
      ++j;
    std::size_t last_noun = j;
    for (std::size_t k = j; k-- > i;) {
      if (g.tokens[k].tag == Tag::NOUN) {
        last_noun = k;
        break;
      }
    }
    if (last_noun != j) {
      Entity e;
      e.id = static_cast<int>(g.entities.size());
      e.span_begin = i;
      e.span_end = last_noun;
      e.head_text = g.tokens[last_noun].text;
      e.lemma = lemmatize(e.head_text, Tag::NOUN, lex);
      g.entities.push_back(std::move(e));
    }
    i = j;
  }

  std::set<std::tuple<int, std::string, int>> edge_keys;
  std::vector<int> group;  // conjunction group ending at the previous entity
  if (!g.entities.empty()) group.push_back(g.entities[0].id);
  for (std::size_t e = 0; e + 1 < g.entities.size(); ++e) {
    const Entity& a = g.entities[e];
    const Entity& b = g.entities[e + 1];
    PredicateMatch m = match_between(g.tokens, a.span_end + 1, b.span_begin, lex);
    if (m.conjunction) {
      group.push_back(b.id);
      continue;
    }
    if (m.matched) {
      for (int subject : group) {
        if (subject == b.id) continue;
        auto key = std::make_tuple(subject, m.lemma, b.id);
        if (edge_keys.insert(key).second)
          g.edges.push_back(Edge{subject, m.phrase, m.lemma, b.id});
      }
    }
    group.clear();
    group.push_back(b.id);
  }
  return g;
}

TextGraph merge_text_graphs(const std::vector<TextGraph>& graphs) {
  TextGraph out;
  if (graphs.empty()) return out;
  out.caption_id = image_id_of(graphs.front().caption_id);

  std::unordered_map<std::string, int> lemma_to_id;
  std::vector<std::unordered_map<int, int>> remap(graphs.size());
  std::size_t token_offset = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const TextGraph& g = graphs[gi];
    for (const Token& t : g.tokens) {
      Token copy = t;
      copy.index = token_offset + t.index;
      out.tokens.push_back(std::move(copy));
    }
    for (const Entity& e : g.entities) {
      auto it = lemma_to_id.find(e.lemma);
      if (it == lemma_to_id.end()) {
        Entity copy = e;
        copy.id = static_cast<int>(out.entities.size());
        copy.span_begin = e.span_begin + token_offset;
        copy.span_end = e.span_end + token_offset;
        lemma_to_id.emplace(e.lemma, copy.id);
        remap[gi][e.id] = copy.id;
        out.entities.push_back(std::move(copy));
      } else {
        remap[gi][e.id] = it->second;
      }
    }
    token_offset += g.tokens.size();
  }

  std::set<std::tuple<int, std::string, int>> edge_keys;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    for (const Edge& e : graphs[gi].edges) {
      const int sub = remap[gi].at(e.subject);
      const int obj = remap[gi].at(e.object);
      if (sub == obj) continue;
      auto key = std::make_tuple(sub, e.lemma, obj);
      if (edge_keys.insert(key).second)
        out.edges.push_back(Edge{sub, e.predicate, e.lemma, obj});
    }
  }
  return out;
}

bool structurally_equal(const TextGraph& a, const TextGraph& b) {
  if (a.entities.size() != b.entities.size()) return false;
  for (std::size_t i = 0; i < a.entities.size(); ++i)
    if (a.entities[i].lemma != b.entities[i].lemma) return false;
  auto key_set = [](const TextGraph& g) {
    std::set<std::tuple<std::string, std::string, std::string>> keys;
    for (const Edge& e : g.edges)
      keys.emplace(g.entities[static_cast<std::size_t>(e.subject)].lemma, e.lemma,
                   g.entities[static_cast<std::size_t>(e.object)].lemma);
    return keys;
  };
  return key_set(a) == key_set(b);
}

std::string image_id_of(const std::string& caption_id) {
  const auto pos = caption_id.find('#');
  return pos == std::string::npos ? caption_id : caption_id.substr(0, pos);
}

}  // namespace capsg::text
