#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "convgrade/corpus.hpp"
#include "convgrade/params.hpp"

namespace convgrade {

namespace {

constexpr std::array<const char*, 16> kSyllables = {"ka", "mi", "ro", "tu", "ne", "sa", "po", "li",
                                                    "da", "vo", "re", "ku", "be", "ta", "zo", "mu"};
constexpr std::array<const char*, 4> kPronouns = {"i", "we", "they", "you"};
constexpr std::array<const char*, 8> kVerbs = {"like", "went", "play", "want", "visited", "enjoy", "made", "saw"};
constexpr std::array<const char*, 6> kQuestions = {
    "What do you like to do?", "Tell me about your weekend.", "Why?", "And then what happened?",
    "How was it?",             "Do you have any plans?"};

std::string pseudo_word(std::size_t k) {
  std::string w = std::string(kSyllables[(k / 16) % 16]) + kSyllables[k % 16];
  for (std::size_t rest = k / 256; rest > 0; rest /= 16) w += kSyllables[rest % 16];
  return w;
}

template <typename Seq>
const char* pick(const Seq& seq, Rng& rng) {
  return seq[std::uniform_int_distribution<std::size_t>(0, seq.size() - 1)(rng)];
}

}  // namespace

void SynthConfig::validate() const {
  if (n_conversations == 0) throw ConfigError("synth: n_conversations must be positive");
  if (min_responses == 0 || min_responses > max_responses) throw ConfigError("synth: bad responses_per_conv range");
  if (min_tokens < 3 || min_tokens > max_tokens) throw ConfigError("synth: bad token range (minimum 3)");
  if (vocab_size < 10) throw ConfigError("synth: vocab_size must be at least 10, got " + std::to_string(vocab_size));
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise sigma must be >= 0");
}

double lexical_diversity(const Conversation& conv) {
  std::set<std::string> distinct;
  std::size_t total = 0;
  for (const auto& r : conv.responses) {
    if (r.speaker != Speaker::Candidate) continue;
    for (const auto& t : r.tokens) {
      distinct.insert(t);
      ++total;
    }
  }
  return total ? static_cast<double>(distinct.size()) / static_cast<double>(total) : 0.0;
}

double link_density(const Conversation& conv) {
  if (conv.responses.empty()) return 0.0;
  return static_cast<double>(effective_links(conv).size()) / static_cast<double>(conv.responses.size());
}

int synth_score(double diversity, double density, double noise, const SynthConfig& cfg) {
  const double raw = cfg.lexical_weight * diversity + cfg.link_weight * density + noise;
  return static_cast<int>(std::clamp(std::round(raw), 1.0, 9.0));
}

std::vector<Conversation> synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.rng_seed);
  const RelationVocab relations;
  std::vector<std::string> vocab;
  for (std::size_t k = 0; k < cfg.vocab_size; ++k) vocab.push_back(pseudo_word(k));

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0.0 ? cfg.noise_sigma : 1.0);
  std::vector<Conversation> out;
  for (std::size_t c = 0; c < cfg.n_conversations; ++c) {
    Conversation conv;
    conv.id = "synth-" + std::to_string(cfg.rng_seed) + "-" + std::to_string(c);
    const auto n = std::uniform_int_distribution<std::size_t>(cfg.min_responses, cfg.max_responses)(rng);
    const double richness = unit(rng);
    const double link_rate = unit(rng);

    const std::size_t cap = std::min<std::size_t>(cfg.vocab_size, 48);
    const auto pool_size = static_cast<std::size_t>(std::lround(2.0 + richness * static_cast<double>(cap - 2)));
    std::vector<std::size_t> order(cfg.vocab_size);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < pool_size; ++i) {
      std::swap(order[i], order[std::uniform_int_distribution<std::size_t>(i, order.size() - 1)(rng)]);
    }
    std::uniform_int_distribution<std::size_t> pool_pick(0, pool_size - 1);

    Speaker prev = Speaker::Interlocutor;
    for (std::size_t i = 0; i < n; ++i) {
      Response r;
      r.index = i;
      if (i == 0) r.speaker = Speaker::Interlocutor;
      else if (prev == Speaker::Interlocutor) r.speaker = Speaker::Candidate;
      else r.speaker = unit(rng) < 0.6 ? Speaker::Interlocutor : Speaker::Candidate;
      prev = r.speaker;

      if (r.speaker == Speaker::Interlocutor) {
        r.raw_text = pick(kQuestions, rng);
      } else {
        std::string text;
        if (unit(rng) < 0.15) text += "um ";
        text += pick(kPronouns, rng);
        text += ' ';
        text += pick(kVerbs, rng);
        const auto words = std::uniform_int_distribution<std::size_t>(cfg.min_tokens - 2, cfg.max_tokens - 2)(rng);
        for (std::size_t w = 0; w < words; ++w) text += " " + vocab[order[pool_pick(rng)]];
        text += '.';
        if (text.size() > 1 && text[0] != 'u') text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
        r.raw_text = std::move(text);
      }
      r.tokens = tokenize(r.raw_text);
      r.out_links.emplace();
      conv.responses.push_back(std::move(r));
    }

    auto other_relation = [&]() {
      return relations.labels()[std::uniform_int_distribution<std::size_t>(1, relations.size() - 1)(rng)];
    };
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (unit(rng) >= link_rate) continue;
      const bool qap = conv.responses[i].speaker == Speaker::Interlocutor &&
                       conv.responses[i + 1].speaker == Speaker::Candidate;
      conv.responses[i].out_links->push_back({i, i + 1, qap ? "QAP" : other_relation()});
    }
    for (std::size_t i = 0; i + 2 < n; ++i) {
      if (unit(rng) >= 0.7 * link_rate) continue;
      conv.responses[i].out_links->push_back({i, i + 2, other_relation()});
    }

    const double eps = cfg.noise_sigma > 0.0 ? noise(rng) : 0.0;
    conv.sst_score = synth_score(lexical_diversity(conv), link_density(conv), eps, cfg);
    out.push_back(std::move(conv));
  }
  return out;
}

std::array<std::size_t, 3> apportion(std::size_t n, std::array<double, 3> ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1, got " + std::to_string(total));
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t j = 0; j < 3; ++j) {
    const double exact = static_cast<double>(n) * ratios[j];
    counts[j] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    frac[j] = exact - static_cast<double>(counts[j]);
    assigned += counts[j];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < 3; ++j) {
      if (frac[j] > frac[best] + 1e-12) best = j;
    }
    ++counts[best];
    frac[best] = -1.0;
    ++assigned;
  }
  return counts;
}

SplitResult split_dataset(const std::vector<Conversation>& convs, std::array<double, 3> ratios, std::uint64_t seed) {
  const auto targets = apportion(convs.size(), ratios);
  Rng rng(seed);
  std::vector<std::size_t> order;
  for (int score = 1; score <= 9; ++score) {
    std::vector<std::size_t> group;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      if (convs[i].sst_score == score) group.push_back(i);
    }
    std::shuffle(group.begin(), group.end(), rng);
    order.insert(order.end(), group.begin(), group.end());
  }
  // Any out-of-range scores (unvalidated input) keep their relative order at the end.
  for (std::size_t i = 0; i < convs.size(); ++i) {
    if (convs[i].sst_score < 1 || convs[i].sst_score > 9) order.push_back(i);
  }

  std::vector<int> assignment(convs.size(), 0);
  std::array<std::size_t, 3> taken{};
  const double N = static_cast<double>(convs.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    std::ptrdiff_t best = -1;
    double best_deficit = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      if (taken[j] >= targets[j]) continue;
      const double deficit = static_cast<double>(targets[j]) * static_cast<double>(k + 1) / N - static_cast<double>(taken[j]);
      if (best < 0 || deficit > best_deficit + 1e-12) {
        best = static_cast<std::ptrdiff_t>(j);
        best_deficit = deficit;
      }
    }
    assignment[order[k]] = static_cast<int>(best);
    ++taken[static_cast<std::size_t>(best)];
  }

  SplitResult out;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    Conversation c = convs[i];
    switch (assignment[i]) {
      case 0: c.split = Split::Train; out.train.push_back(std::move(c)); break;
      case 1: c.split = Split::Dev; out.dev.push_back(std::move(c)); break;
      default: c.split = Split::Test; out.test.push_back(std::move(c)); break;
    }
  }
  return out;
}

}  // namespace convgrade
