#include <algorithm>
#include <cctype>
#include <optional>

#include "convgrade/corpus.hpp"

namespace convgrade {

namespace {

bool contains(const std::vector<std::string>& list, std::string_view t) {
  return std::find(list.begin(), list.end(), t) != list.end();
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_word_char(unsigned char c) { return c >= 0x80 || std::isalnum(c); }

}  // namespace

std::vector<std::string> tokenize(std::string_view raw_text, const TokenizerConfig& cfg) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < raw_text.size()) {
    while (i < raw_text.size() && std::isspace(static_cast<unsigned char>(raw_text[i]))) ++i;
    std::size_t j = i;
    while (j < raw_text.size() && !std::isspace(static_cast<unsigned char>(raw_text[j]))) ++j;
    if (j == i) break;
    const std::string chunk = lower(raw_text.substr(i, j - i));
    i = j;
    if (contains(cfg.filled_pauses, chunk)) {
      tokens.push_back(chunk);
      continue;
    }
    std::string word;
    for (unsigned char c : chunk) {
      if (is_word_char(c)) {
        word.push_back(static_cast<char>(c));
      } else {
        if (!word.empty()) tokens.push_back(std::move(word));
        word.clear();
        tokens.emplace_back(1, static_cast<char>(c));
      }
    }
    if (!word.empty()) tokens.push_back(std::move(word));
  }
  return tokens;
}

const Lexicon& Lexicon::english() {
  static const Lexicon lex{
      {"a",     "an",    "the",   "and",  "or",    "but",   "of",    "to",    "in",    "on",   "at",   "for",
       "with",  "from",  "by",    "as",   "is",    "am",    "are",   "was",   "were",  "be",   "been", "being",
       "i",     "you",   "he",    "she",  "it",    "we",    "they",  "me",    "him",   "her",  "us",   "them",
       "my",    "your",  "his",   "its",  "our",   "their", "this",  "that",  "these", "those", "do",  "does",
       "did",   "so",    "very",  "not",  "no",    "yes",   "too",   "also",  "then",  "there", "here", "what",
       "how",   "why",   "when",  "where", "who",  "which", "if",    "because", "about", "just", "oh",  "ok",
       "okay",  "really", "well", "s",    "t",     "can",   "could", "would", "will",  "have", "has",  "had"},
      {"i", "you", "he", "she", "it", "we", "they", "this", "that", "there", "people", "everyone", "someone"},
      {"like",  "likes",   "liked",   "love",    "loves",    "loved",  "go",     "goes",     "went",   "play",
       "plays", "played",  "eat",     "eats",    "ate",      "have",   "has",    "had",      "want",   "wants",
       "wanted", "see",    "saw",     "watch",   "watched",  "read",   "make",   "made",     "get",    "got",
       "take",  "took",    "visit",   "visited", "enjoy",    "enjoyed", "think", "thought",  "know",   "knew",
       "study", "studied", "work",    "worked",  "live",     "lived",  "is",     "am",       "are",    "was",
       "were",  "buy",     "bought",  "cook",    "cooked",   "need",   "needed", "use",      "used",   "meet",
       "met",   "call",    "called",  "bring",   "brought",  "find",   "found",  "prefer",   "preferred"},
      {"uh", "um", "er", "mm"}};
  return lex;
}

bool Lexicon::is_stopword(std::string_view t) const { return contains(stopwords, t); }
bool Lexicon::is_pronoun(std::string_view t) const { return contains(pronouns, t); }
bool Lexicon::is_verb(std::string_view t) const { return contains(verbs, t); }
bool Lexicon::is_filled_pause(std::string_view t) const { return contains(filled_pauses, t); }

bool Lexicon::is_punct(std::string_view t) const {
  return !t.empty() && std::none_of(t.begin(), t.end(), [](char c) { return is_word_char(static_cast<unsigned char>(c)); });
}

bool Lexicon::is_content(std::string_view t) const {
  return !t.empty() && !is_stopword(t) && !is_filled_pause(t) && !is_punct(t);
}

std::vector<SpoTriplet> extract_spo_naive(const std::vector<std::string>& tokens, const Lexicon& lex) {
  std::vector<SpoTriplet> out;
  std::size_t seg = 0;
  for (std::size_t v = 0; v < tokens.size(); ++v) {
    if (!lex.is_verb(tokens[v])) continue;
    std::optional<std::size_t> subj;
    for (std::size_t s = seg; s < v; ++s) {
      const auto& t = tokens[s];
      if (lex.is_pronoun(t) || (lex.is_content(t) && !lex.is_verb(t))) {
        subj = s;
        break;
      }
    }
    if (!subj) continue;
    std::optional<std::size_t> obj;
    for (std::size_t o = v + 1; o < tokens.size(); ++o) {
      if (lex.is_content(tokens[o]) && !lex.is_verb(tokens[o])) {
        obj = o;
        break;
      }
    }
    if (!obj) continue;
    out.push_back({{*subj, *subj + 1}, {v, v + 1}, {*obj, *obj + 1}});
    seg = *obj + 1;
    v = *obj;
  }
  return out;
}

std::vector<DiscourseLink> infer_links_fallback(const Conversation& conv) {
  std::vector<DiscourseLink> links;
  for (std::size_t i = 0; i + 1 < conv.responses.size(); ++i) {
    const bool qap = conv.responses[i].speaker == Speaker::Interlocutor &&
                     conv.responses[i + 1].speaker == Speaker::Candidate;
    links.push_back({i, i + 1, qap ? "QAP" : "Continuation"});
  }
  return links;
}

std::vector<DiscourseLink> effective_links(const Conversation& conv) {
  const bool annotated = std::any_of(conv.responses.begin(), conv.responses.end(),
                                     [](const Response& r) { return r.out_links.has_value(); });
  if (!annotated) return infer_links_fallback(conv);
  std::vector<DiscourseLink> links;
  for (const auto& r : conv.responses) {
    if (r.out_links) links.insert(links.end(), r.out_links->begin(), r.out_links->end());
  }
  return links;
}

std::vector<SpoTriplet> effective_spo(const Response& r, bool interlocutor_spo, const Lexicon& lex) {
  if (r.spo) return *r.spo;
  if (r.speaker == Speaker::Interlocutor && !interlocutor_spo) return {};
  return extract_spo_naive(r.tokens, lex);
}

}  // namespace convgrade
