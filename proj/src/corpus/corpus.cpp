#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "convgrade/corpus.hpp"

namespace convgrade {

using json = nlohmann::ordered_json;

std::string_view to_string(Speaker s) { return s == Speaker::Interlocutor ? "I" : "C"; }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "train";
}

RelationVocab::RelationVocab()
    : labels_{"QAP",         "Continuation", "Elaboration", "Acknowledgement", "Clarification-Q", "Comment",
              "Contrast",    "Correction",   "Explanation", "Narration",       "Parallel",        "Q-Elab",
              "Result",      "Alternation",  "Background",  "Conditional"} {}

RelationVocab::RelationVocab(std::vector<std::string> labels) : labels_(std::move(labels)) {
  if (labels_.empty()) throw ConfigError("relation vocabulary is empty");
}

std::optional<std::size_t> RelationVocab::index(std::string_view label) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] == label) return i;
  }
  return std::nullopt;
}

CefrMap::CefrMap() : groups_{"A1", "A1", "A2", "A2", "B1", "B1", "B2", "B2", "C1"} {}

CefrMap::CefrMap(std::array<std::string, 9> groups) : groups_(std::move(groups)) {
  for (const auto& g : groups_) {
    if (g.empty()) throw ConfigError("CEFR map leaves a score unmapped");
  }
}

CefrMap CefrMap::parse(std::string_view text) {
  std::array<std::string, 9> groups;
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("bad CEFR map entry: " + item);
    int score = 0;
    try {
      score = std::stoi(item.substr(0, colon));
    } catch (const std::exception&) {
      throw ConfigError("bad CEFR map entry: " + item);
    }
    if (score < 1 || score > 9) throw ConfigError("CEFR map score out of range: " + item);
    groups[static_cast<std::size_t>(score - 1)] = item.substr(colon + 1);
  }
  return CefrMap(std::move(groups));
}

const std::string& CefrMap::group(int score) const {
  if (score < 1 || score > 9) throw ContractError("score out of [1,9]: " + std::to_string(score));
  return groups_[static_cast<std::size_t>(score - 1)];
}

std::vector<std::string> CefrMap::labels() const {
  std::vector<std::string> out;
  for (const auto& g : groups_) {
    if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
  }
  return out;
}

std::size_t CefrMap::group_index(int score) const {
  const auto l = labels();
  return static_cast<std::size_t>(std::find(l.begin(), l.end(), group(score)) - l.begin());
}

CorpusError::CorpusError(std::size_t line, const std::string& msg)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}

namespace {

void check(bool ok, std::size_t line, const std::string& id, const std::string& msg) {
  if (!ok) throw CorpusError(line, "record '" + id + "': " + msg);
}

void validate_at(const Conversation& conv, const RelationVocab& relations, std::size_t line) {
  const std::string& id = conv.id;
  check(!conv.responses.empty(), line, id, "conversation has no responses");
  check(conv.sst_score >= 1 && conv.sst_score <= 9, line, id,
        "score " + std::to_string(conv.sst_score) + " outside [1,9]");
  const std::size_t n = conv.responses.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Response& r = conv.responses[i];
    check(r.index == i, line, id, "response indices are not contiguous at " + std::to_string(i));
    if (r.spo) {
      for (const auto& t : *r.spo) {
        for (const TokenSpan& s : {t.subject, t.predicate, t.object}) {
          check(s.start < s.end && s.end <= r.tokens.size(), line, id,
                "SPO span [" + std::to_string(s.start) + "," + std::to_string(s.end) + ") invalid in response " +
                    std::to_string(i));
        }
      }
    }
    if (r.out_links) {
      for (const auto& l : *r.out_links) {
        check(l.src == i, line, id, "link source " + std::to_string(l.src) + " listed on response " + std::to_string(i));
        check(l.dst < n, line, id,
              "link " + std::to_string(l.src) + "->" + std::to_string(l.dst) + " dangles (only " + std::to_string(n) +
                  " responses)");
        check(l.src != l.dst, line, id, "self link on response " + std::to_string(i));
        check(relations.contains(l.relation), line, id, "unknown discourse relation '" + l.relation + "'");
      }
    }
  }
}

TokenSpan parse_span(const json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_unsigned() || !j[1].is_number_unsigned()) {
    throw std::invalid_argument("span must be [start,end] of non-negative integers");
  }
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>()};
}

Conversation parse_record(const std::string& text, std::size_t line, const CorpusOptions& opts) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CorpusError(line, std::string("malformed record: ") + e.what());
  }
  Conversation conv;
  try {
    if (!j.is_object()) throw std::invalid_argument("record is not an object");
    conv.id = j.at("id").get<std::string>();
    const json& score = j.at("score");
    if (!score.is_number_integer()) throw std::invalid_argument("score must be an integer");
    conv.sst_score = score.get<int>();
    if (j.contains("split")) {
      const auto s = j["split"].get<std::string>();
      if (s == "train") conv.split = Split::Train;
      else if (s == "dev") conv.split = Split::Dev;
      else if (s == "test") conv.split = Split::Test;
      else throw std::invalid_argument("unknown split '" + s + "'");
    }
    const json& responses = j.at("responses");
    if (!responses.is_array()) throw std::invalid_argument("responses must be an array");
    for (const json& rj : responses) {
      Response r;
      r.index = conv.responses.size();
      const auto speaker = rj.at("speaker").get<std::string>();
      if (speaker == "I") r.speaker = Speaker::Interlocutor;
      else if (speaker == "C") r.speaker = Speaker::Candidate;
      else throw std::invalid_argument("speaker must be \"I\" or \"C\", got \"" + speaker + "\"");
      r.raw_text = rj.at("text").get<std::string>();
      r.tokens = tokenize(r.raw_text, opts.tokenizer);
      if (rj.contains("spo")) {
        r.spo.emplace();
        for (const json& t : rj["spo"]) {
          if (!t.is_array() || t.size() != 3) throw std::invalid_argument("spo entry must be [s,p,o]");
          r.spo->push_back({parse_span(t[0]), parse_span(t[1]), parse_span(t[2])});
        }
      }
      if (rj.contains("links")) {
        r.out_links.emplace();
        for (const json& l : rj["links"]) {
          if (!l.is_array() || l.size() != 3 || !l[0].is_number_unsigned() || !l[1].is_number_unsigned() ||
              !l[2].is_string()) {
            throw std::invalid_argument("link must be [src,dst,\"REL\"]");
          }
          r.out_links->push_back({l[0].get<std::size_t>(), l[1].get<std::size_t>(), l[2].get<std::string>()});
        }
      }
      conv.responses.push_back(std::move(r));
    }
  } catch (const CorpusError&) {
    throw;
  } catch (const std::exception& e) {
    throw CorpusError(line, std::string("malformed record") + (conv.id.empty() ? "" : " '" + conv.id + "'") + ": " +
                                e.what());
  }
  validate_at(conv, opts.relations, line);
  return conv;
}

json span_json(const TokenSpan& s) { return json::array({s.start, s.end}); }

}  // namespace

void validate(const Conversation& conv, const RelationVocab& relations) { validate_at(conv, relations, 0); }

std::vector<Conversation> parse_corpus(std::istream& in, const CorpusOptions& opts) {
  std::vector<Conversation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(line, lineno, opts));
  }
  return out;
}

std::vector<Conversation> load_corpus(const std::string& path, const CorpusOptions& opts) {
  std::ifstream in(path);
  if (!in) throw CorpusError(0, "cannot open corpus file " + path);
  return parse_corpus(in, opts);
}

std::string serialize_record(const Conversation& conv) {
  json j;
  j["id"] = conv.id;
  j["score"] = conv.sst_score;
  j["split"] = std::string(to_string(conv.split));
  json responses = json::array();
  for (const auto& r : conv.responses) {
    json rj;
    rj["speaker"] = std::string(to_string(r.speaker));
    rj["text"] = r.raw_text;
    if (r.spo) {
      json spo = json::array();
      for (const auto& t : *r.spo) spo.push_back(json::array({span_json(t.subject), span_json(t.predicate), span_json(t.object)}));
      rj["spo"] = spo;
    }
    if (r.out_links) {
      json links = json::array();
      for (const auto& l : *r.out_links) links.push_back(json::array({l.src, l.dst, l.relation}));
      rj["links"] = links;
    }
    responses.push_back(std::move(rj));
  }
  j["responses"] = std::move(responses);
  return j.dump();
}

void serialize_corpus(std::ostream& out, const std::vector<Conversation>& convs) {
  for (const auto& c : convs) out << serialize_record(c) << '\n';
}

void save_corpus(const std::string& path, const std::vector<Conversation>& convs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw CorpusError(0, "cannot write corpus file " + path);
  serialize_corpus(out, convs);
}

}  // namespace convgrade
