#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "convgrade/errors.hpp"

namespace convgrade {

enum class Speaker { Interlocutor, Candidate };
enum class Split { Train, Dev, Test };

std::string_view to_string(Speaker s);
std::string_view to_string(Split s);

/// Half-open token range [start, end) inside one response.
struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct SpoTriplet {
  TokenSpan subject;
  TokenSpan predicate;
  TokenSpan object;
  friend bool operator==(const SpoTriplet&, const SpoTriplet&) = default;
};

struct DiscourseLink {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::string relation;
  friend bool operator==(const DiscourseLink&, const DiscourseLink&) = default;
};

struct Response {
  std::size_t index = 0;
  Speaker speaker = Speaker::Candidate;
  std::string raw_text;
  std::vector<std::string> tokens;
  std::optional<std::vector<SpoTriplet>> spo;
  std::optional<std::vector<DiscourseLink>> out_links;
  friend bool operator==(const Response&, const Response&) = default;
};

struct Conversation {
  std::string id;
  std::vector<Response> responses;
  int sst_score = 1;
  Split split = Split::Train;
  friend bool operator==(const Conversation&, const Conversation&) = default;
};

/// Closed set of discourse relation labels.
class RelationVocab {
 public:
  RelationVocab();  // the 16 default dialogue-discourse labels
  explicit RelationVocab(std::vector<std::string> labels);

  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::optional<std::size_t> index(std::string_view label) const;
  bool contains(std::string_view label) const { return index(label).has_value(); }

 private:
  std::vector<std::string> labels_;
};

/// SST score (1..9) to CEFR group.
class CefrMap {
 public:
  CefrMap();  // 1,2:A1 3,4:A2 5,6:B1 7,8:B2 9:C1
  explicit CefrMap(std::array<std::string, 9> groups);
  /// "1:A1,2:A1,..." covering every score 1..9.
  static CefrMap parse(std::string_view text);

  const std::string& group(int score) const;
  /// Distinct groups in ascending score order.
  std::vector<std::string> labels() const;
  std::size_t group_index(int score) const;

 private:
  std::array<std::string, 9> groups_;
};

struct TokenizerConfig {
  std::vector<std::string> filled_pauses{"uh", "um", "er", "mm"};
};

/// Lowercases, splits on whitespace and at every punctuation character.
/// Whitespace-delimited chunks equal to a filled pause are kept verbatim.
std::vector<std::string> tokenize(std::string_view raw_text, const TokenizerConfig& cfg = {});

/// Word lists used by the naive extractors and graph construction.
struct Lexicon {
  std::vector<std::string> stopwords;
  std::vector<std::string> pronouns;
  std::vector<std::string> verbs;
  std::vector<std::string> filled_pauses;

  static const Lexicon& english();
  bool is_stopword(std::string_view t) const;
  bool is_pronoun(std::string_view t) const;
  bool is_verb(std::string_view t) const;
  bool is_filled_pause(std::string_view t) const;
  bool is_punct(std::string_view t) const;
  /// Not a stopword, filled pause or punctuation.
  bool is_content(std::string_view t) const;
};

/// Rule-based triplets: subject = first pronoun/noun-like token before a listed
/// verb, predicate = the verb, object = first content token after it.
std::vector<SpoTriplet> extract_spo_naive(const std::vector<std::string>& tokens, const Lexicon& lex = Lexicon::english());

/// Chain i -> i+1; "QAP" for interlocutor->candidate pairs, else "Continuation".
std::vector<DiscourseLink> infer_links_fallback(const Conversation& conv);

/// Annotated links when any response carries a links field, else the fallback chain.
std::vector<DiscourseLink> effective_links(const Conversation& conv);

/// Annotated triplets when present; else naive extraction (skipped for the
/// interlocutor when `interlocutor_spo` is false).
std::vector<SpoTriplet> effective_spo(const Response& r, bool interlocutor_spo = true,
                                      const Lexicon& lex = Lexicon::english());

class CorpusError : public std::runtime_error {
 public:
  CorpusError(std::size_t line, const std::string& msg);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct CorpusOptions {
  TokenizerConfig tokenizer;
  RelationVocab relations;
};

/// One JSON record per line; blank lines are skipped. Errors carry the 1-based line number.
std::vector<Conversation> parse_corpus(std::istream& in, const CorpusOptions& opts = {});
std::vector<Conversation> load_corpus(const std::string& path, const CorpusOptions& opts = {});
/// Checks every invariant of an in-memory conversation; throws CorpusError with line 0.
void validate(const Conversation& conv, const RelationVocab& relations = {});

std::string serialize_record(const Conversation& conv);
void serialize_corpus(std::ostream& out, const std::vector<Conversation>& convs);
void save_corpus(const std::string& path, const std::vector<Conversation>& convs);

struct SynthConfig {
  std::size_t n_conversations = 200;
  std::size_t min_responses = 4;
  std::size_t max_responses = 8;
  std::size_t min_tokens = 4;  // candidate response length range, before punctuation
  std::size_t max_tokens = 9;
  std::size_t vocab_size = 200;
  double lexical_weight = 6.0;
  double link_weight = 2.5;
  double noise_sigma = 0.5;
  std::uint64_t rng_seed = 1;

  void validate() const;
};

/// distinct / total over candidate tokens (0 when the candidate never speaks).
double lexical_diversity(const Conversation& conv);
/// |effective links| / |responses|
double link_density(const Conversation& conv);
/// clamp(round(w1 * diversity + w2 * density + noise), 1, 9)
int synth_score(double diversity, double density, double noise, const SynthConfig& cfg);

std::vector<Conversation> synth_generate(const SynthConfig& cfg);

struct SplitResult {
  std::vector<Conversation> train;
  std::vector<Conversation> dev;
  std::vector<Conversation> test;
};

/// Exhaustive, disjoint split stratified by score. Overall sizes follow the
/// largest-remainder rounding of n * ratios.
SplitResult split_dataset(const std::vector<Conversation>& convs, std::array<double, 3> ratios, std::uint64_t seed);

/// Largest-remainder apportionment of n items over ratios (ties go to the lower index).
std::array<std::size_t, 3> apportion(std::size_t n, std::array<double, 3> ratios);

}  // namespace convgrade
