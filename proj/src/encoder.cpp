#include "convgrade/encoder.hpp"

#include <fstream>

#include "convgrade/log.hpp"

namespace convgrade {

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
  add("<sep>");
}

Vocabulary Vocabulary::build(const std::vector<Conversation>& convs, std::size_t min_count) {
  std::unordered_map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const auto& c : convs)
    for (const auto& r : c.responses)
      for (const auto& tok : r.tokens)
        if (counts[tok]++ == 0) order.push_back(tok);
  Vocabulary v;
  for (const auto& tok : order)
    if (counts[tok] >= min_count) v.add(tok);
  return v;
}

std::size_t Vocabulary::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  index_.emplace(token, tokens_.size());
  tokens_.push_back(token);
  return tokens_.size() - 1;
}

std::size_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocabulary " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.size() < 3 || lines[0] != "<pad>" || lines[1] != "<unk>" || lines[2] != "<sep>") {
    throw ConfigError("vocabulary " + path.string() + " does not start with the reserved tokens");
  }
  Vocabulary v;
  for (std::size_t i = 3; i < lines.size(); ++i) {
    if (v.add(lines[i]) != i) throw ConfigError("duplicate token '" + lines[i] + "' in vocabulary " + path.string());
  }
  return v;
}

void EncoderConfig::validate() const {
  if (embed_dim == 0) throw ConfigError("encoder: embed_dim must be positive");
  if (lstm_hidden == 0) throw ConfigError("encoder: lstm_hidden must be positive");
  if (window_stride == 0 || window_stride > window_len || window_len > max_tokens) {
    throw ConfigError("encoder: need 0 < stride <= window_len <= max_tokens");
  }
  if (n_segments < 2) throw ConfigError("encoder: n_segments must be at least 2");
  if (vocab_size <= Vocabulary::kSep) throw ConfigError("encoder: vocabulary too small");
}

SequenceBatch assemble_sequence(const Conversation& conv, const Vocabulary& vocab, std::size_t max_tokens) {
  if (conv.responses.empty()) throw ContractError("assemble_sequence: conversation '" + conv.id + "' has no responses");
  if (max_tokens == 0) throw ContractError("assemble_sequence: max_tokens must be positive");
  SequenceBatch b;
  for (std::size_t i = 0; i < conv.responses.size(); ++i) {
    const Response& r = conv.responses[i];
    std::vector<std::size_t> ids;
    for (const auto& tok : r.tokens) ids.push_back(vocab.id(tok));
    if (ids.empty()) ids.push_back(Vocabulary::kUnk);
    const std::size_t seg = r.speaker == Speaker::Candidate ? 1 : 0;
    const std::size_t sep = i == 0 ? 0 : 1;
    if (b.length() + sep + ids.size() > max_tokens) {
      if (i == 0) {
        ids.resize(max_tokens);
        log_warn("conversation '" + conv.id + "': first response cut to " + std::to_string(max_tokens) + " tokens");
      } else {
        b.dropped_responses = conv.responses.size() - i;
        log_warn("conversation '" + conv.id + "': truncated to " + std::to_string(i) + " of " +
                 std::to_string(conv.responses.size()) + " responses (" + std::to_string(max_tokens) + " token limit)");
        break;
      }
    }
    if (sep) {
      b.token_ids.push_back(Vocabulary::kSep);
      b.segment_ids.push_back(b.segment_ids.back());
    }
    const std::size_t start = b.length();
    b.token_ids.insert(b.token_ids.end(), ids.begin(), ids.end());
    b.segment_ids.insert(b.segment_ids.end(), ids.size(), seg);
    b.spans.emplace_back(start, b.length());
  }
  return b;
}

std::vector<Window> window_layout(std::size_t T, std::size_t window_len, std::size_t stride) {
  if (window_len == 0 || stride == 0) throw ContractError("window_layout: zero window or stride");
  std::vector<Window> out;
  for (std::size_t start = 0;; start += stride) {
    out.push_back({start, std::min(T, start + window_len)});
    if (start + window_len >= T) break;
  }
  return out;
}

SequenceEncoder::SequenceEncoder(const EncoderConfig& cfg, ParamStore& store, Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t D = cfg.embed_dim;
  tok_ = store.add(prefix + ".tok_emb", normal_init({cfg.vocab_size, D}, 0.1, rng));
  seg_ = store.add(prefix + ".seg_emb", normal_init({cfg.n_segments, D}, 0.1, rng));
  if (cfg.position_embeddings) pos_ = store.add(prefix + ".pos_emb", normal_init({cfg.window_len, D}, 0.1, rng));
  fwd_ = LstmParams::create(store, prefix + ".lstm.fwd", D, cfg.lstm_hidden, rng);
  bwd_ = LstmParams::create(store, prefix + ".lstm.bwd", D, cfg.lstm_hidden, rng);
  proj_ = Linear::create(store, prefix + ".proj", 2 * cfg.lstm_hidden, D, rng);
}

Var SequenceEncoder::encode(Tape& t, const ParamStore& store, const SequenceBatch& batch) const {
  const std::size_t T = batch.length();
  if (T == 0) throw ContractError("encode: empty sequence");
  if (T > cfg_.max_tokens) {
    throw ContractError("encode: sequence of " + std::to_string(T) + " tokens exceeds max_tokens " +
                        std::to_string(cfg_.max_tokens));
  }
  if (batch.segment_ids.size() != T) throw ContractError("encode: segment ids do not match tokens");
  for (std::size_t s : batch.segment_ids) {
    if (s >= cfg_.n_segments) throw ContractError("encode: segment id " + std::to_string(s) + " out of range");
  }
  const std::size_t D = cfg_.embed_dim;
  Var tok_table = t.param(store, tok_);
  Var seg_table = t.param(store, seg_);
  const auto windows = window_layout(T, cfg_.window_len, cfg_.window_stride);
  const LstmWeights fw = fwd_.bind(t, store), bw = bwd_.bind(t, store);

  std::vector<Var> outs;
  std::vector<double> cover(T, 0.0);
  for (const Window& w : windows) {
    std::span<const std::size_t> ids(batch.token_ids.data() + w.begin, w.end - w.begin);
    std::span<const std::size_t> segs(batch.segment_ids.data() + w.begin, w.end - w.begin);
    Var x = add(embedding_lookup(tok_table, ids), embedding_lookup(seg_table, segs));
    if (cfg_.position_embeddings) x = add(x, slice(t.param(store, pos_), 0, 0, w.end - w.begin));
    Var h = proj_(t, store, bilstm(x, fw, bw));
    outs.push_back(windows.size() == 1 ? h : pad_rows(h, w.begin, T));
    for (std::size_t r = w.begin; r < w.end; ++r) cover[r] += 1.0;
  }
  if (outs.size() == 1) return outs[0];
  Var total = outs[0];
  for (std::size_t k = 1; k < outs.size(); ++k) total = add(total, outs[k]);
  Tensor inv(Shape{T, D});
  for (std::size_t r = 0; r < T; ++r)
    for (std::size_t c = 0; c < D; ++c) inv.at(r, c) = 1.0 / cover[r];
  return mul(total, t.constant(std::move(inv)));
}

Var mean_pool(Var hb) {
  if (hb.shape().size() != 2 || hb.shape()[0] == 0) throw ContractError("mean_pool: needs a non-empty (T, D) matrix");
  return mean(hb, 0);
}

Var slice_span(Var hb, std::size_t p_start, std::size_t p_end) {
  const Shape& s = hb.shape();
  if (s.size() != 2 || p_start >= p_end || p_end > s[0]) {
    throw ContractError("slice_span: [" + std::to_string(p_start) + "," + std::to_string(p_end) + ") outside " +
                        shape_str(s));
  }
  return slice(hb, 0, p_start, p_end);
}

}  // namespace convgrade
