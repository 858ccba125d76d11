#pragma once

// Small conversation builders shared by the unit suites.

#include <string>
#include <utility>
#include <vector>

#include "convgrade/corpus.hpp"
#include "convgrade/model.hpp"

namespace fixtures {

using convgrade::Conversation;
using convgrade::DiscourseLink;
using convgrade::Speaker;

constexpr Speaker I = Speaker::Interlocutor;
constexpr Speaker C = Speaker::Candidate;

inline Conversation make_conv(const std::vector<std::pair<Speaker, std::string>>& turns, int score = 5,
                              std::string id = "fixture") {
  Conversation c;
  c.id = std::move(id);
  c.sst_score = score;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    convgrade::Response r;
    r.index = i;
    r.speaker = turns[i].first;
    r.raw_text = turns[i].second;
    r.tokens = convgrade::tokenize(r.raw_text);
    c.responses.push_back(std::move(r));
  }
  return c;
}

/// Attaches explicit links; every response gets a (possibly empty) list.
inline void set_links(Conversation& c, const std::vector<DiscourseLink>& links) {
  for (auto& r : c.responses) r.out_links = std::vector<DiscourseLink>{};
  for (const auto& l : links) c.responses.at(l.src).out_links->push_back(l);
}

inline std::vector<Conversation> synth(std::size_t n, std::uint64_t seed) {
  convgrade::SynthConfig cfg;
  cfg.n_conversations = n;
  cfg.rng_seed = seed;
  return convgrade::synth_generate(cfg);
}

/// Every width small enough for exhaustive finite differences.
inline convgrade::ModelConfig tiny_model(std::size_t dim = 4) {
  convgrade::ModelConfig m;
  m.dim = dim;
  m.encoder.lstm_hidden = 3;
  m.encoder.max_tokens = 160;
  m.encoder.window_len = 16;
  m.encoder.window_stride = 8;
  m.nodes.word_dim = 3;
  m.nodes.ngram_embed = 3;
  m.nodes.ngram_filters = 2;
  m.nodes.ngram_widths = {2};
  m.nodes.ngram_hidden = 2;
  m.gat.heads = 2;
  m.gat.layers = 1;
  m.gat.ffn_dim = 5;
  m.reg_heads = 2;
  m.finalize();
  return m;
}

/// Two responses joined by one discourse link, with an extractable triple.
inline Conversation two_response_fixture(int score = 6) {
  Conversation c = make_conv({{I, "what do you usually eat for lunch ?"}, {C, "i eat sushi with my friends ."}}, score,
                             "two");
  set_links(c, {{0, 1, "QAP"}});
  return c;
}

}  // namespace fixtures
