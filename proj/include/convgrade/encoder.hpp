#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "convgrade/corpus.hpp"
#include "convgrade/layers.hpp"

namespace convgrade {

/// Token inventory shared by the sequence encoder and the n-gram encoder.
/// Ids 0, 1, 2 are reserved for padding, unknown and separator.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kSep = 2;

  Vocabulary();

  /// Every token seen in `convs` with at least `min_count` occurrences,
  /// in order of first appearance.
  static Vocabulary build(const std::vector<Conversation>& convs, std::size_t min_count = 1);

  std::size_t add(const std::string& token);
  /// kUnk for unknown tokens.
  std::size_t id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const noexcept { return tokens_.size(); }

  /// One token per line; line number (0-based) is the id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 64;  // D_H
  std::size_t max_tokens = 1600;
  std::size_t window_len = 256;
  std::size_t window_stride = 128;
  std::size_t n_segments = 2;
  std::size_t lstm_hidden = 64;  // per direction
  bool position_embeddings = true;

  void validate() const;
};

struct SequenceBatch {
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> segment_ids;
  /// Half-open [start, end) per kept response.
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  /// Responses dropped from the tail to respect max_tokens.
  std::size_t dropped_responses = 0;

  std::size_t length() const noexcept { return token_ids.size(); }
};

/// Concatenates responses with one separator between neighbours. Segment ids
/// follow the speaker (0 interlocutor, 1 candidate; separators take the
/// segment of the response before them). An empty response contributes a
/// single unknown token so that every span is non-empty. Sequences over
/// `max_tokens` lose whole responses from the end, with a warning.
SequenceBatch assemble_sequence(const Conversation& conv, const Vocabulary& vocab, std::size_t max_tokens);

struct Window {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Windows start at k * stride until one reaches T; the last is cut at T.
std::vector<Window> window_layout(std::size_t T, std::size_t window_len, std::size_t stride);

/// Token + segment (+ position) embeddings, one BiLSTM per window, projection
/// to D_H, then rows averaged over the windows that cover them.
class SequenceEncoder {
 public:
  SequenceEncoder() = default;
  SequenceEncoder(const EncoderConfig& cfg, ParamStore& store, Rng& rng, const std::string& prefix = "enc");

  const EncoderConfig& config() const noexcept { return cfg_; }
  /// H^B, shape (T, D_H).
  Var encode(Tape& t, const ParamStore& store, const SequenceBatch& batch) const;

  ParamId token_table() const noexcept { return tok_; }
  ParamId segment_table() const noexcept { return seg_; }
  ParamId position_table() const noexcept { return pos_; }
  const LstmParams& forward_lstm() const noexcept { return fwd_; }
  const LstmParams& backward_lstm() const noexcept { return bwd_; }
  const Linear& projection() const noexcept { return proj_; }

 private:
  EncoderConfig cfg_;
  ParamId tok_ = 0;
  ParamId seg_ = 0;
  ParamId pos_ = 0;
  LstmParams fwd_;
  LstmParams bwd_;
  Linear proj_;
};

/// Mean over rows: (T, D) -> (D).
Var mean_pool(Var hb);
/// Rows [p_start, p_end) of H^B.
Var slice_span(Var hb, std::size_t p_start, std::size_t p_end);

}  // namespace convgrade
