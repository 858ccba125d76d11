#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "convgrade/config.hpp"
#include "convgrade/encoder.hpp"
#include "convgrade/gnn.hpp"
#include "convgrade/hiergraph.hpp"
#include "convgrade/scorer.hpp"

namespace convgrade {

/// Architecture settings. `dim` is D_H for every component.
struct ModelConfig {
  std::size_t dim = 64;
  EncoderConfig encoder;
  NodeInitConfig nodes;
  GatConfig gat;
  std::size_t reg_heads = 4;

  // Score inventory members: B = pooled sequence states, C/A/D = graph readouts.
  bool use_b = true;
  bool use_c = true;
  bool use_a = true;
  bool use_d = true;
  Fusion fusion = Fusion::Mean;
  bool pool_separators = true;
  bool interlocutor_spo = true;

  std::string word_vectors;  // empty: seeded random table over the vocabulary
  std::uint64_t word_seed = 7;
  std::size_t min_count = 1;
  std::vector<std::string> relations = RelationVocab().labels();

  /// Inventory names in fixed order B, C, A, D.
  std::vector<std::string> inventory() const;
  bool uses_graphs() const noexcept { return use_c || use_a || use_d; }
  /// "B+CDA" style label; graph letters in C, D, A order.
  std::string variant() const;
  /// Sets the use_* flags from a label such as "B+CD" or "C+D+A".
  void set_variant(const std::string& label);
  /// Copies `dim` into the sub-configs and checks them.
  void finalize();
  void validate() const;
};

/// Reads model keys (prefix "model.") from `kv`, starting from `base`.
ModelConfig read_model_config(const KeyValues& kv, ModelConfig base = {});
/// Writes every model key with the "model." prefix.
void write_model_config(std::ostream& out, const ModelConfig& cfg);

/// Per-conversation inputs that do not depend on parameters.
struct PreparedConversation {
  std::string id;
  int score = 1;
  SequenceBatch sequence;
  std::vector<std::vector<std::size_t>> response_ids;
  std::vector<std::size_t> content_rows;  // non-separator rows of H^B
  GraphBundle bundle;
  InAdjacency adj_c, adj_a, adj_d;
  GraphFeatures feat_c, feat_a, feat_d;
};

/// Sequence encoder, node initializer, graph stacks and regressor over one ParamStore.
class GradingModel {
 public:
  GradingModel(ModelConfig cfg, Vocabulary vocab, std::uint64_t seed);

  /// Vocabulary from `train`, then a fresh model.
  static GradingModel create(const ModelConfig& cfg, const std::vector<Conversation>& train, std::uint64_t seed);
  /// Reads model.cfg, model.vocab and model.ckpt from `dir`.
  static GradingModel load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;

  const ModelConfig& config() const noexcept { return cfg_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }
  ParamStore& params() noexcept { return store_; }
  const ParamStore& params() const noexcept { return store_; }
  const Regressor& regressor() const noexcept { return reg_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Truncates to the responses that fit the sequence budget, then builds graphs and features.
  PreparedConversation prepare(const Conversation& conv) const;
  std::vector<PreparedConversation> prepare_all(const std::vector<Conversation>& convs) const;

  /// Scalar prediction on the tape. Dropout is active only when `dropout_rng` is given.
  Var forward(Tape& t, const PreparedConversation& p, Rng* dropout_rng = nullptr) const;
  /// Unclamped prediction.
  double predict(const PreparedConversation& p) const;

  /// Copies values of every parameter whose name starts with `prefix` from `other`.
  void copy_params_from(const GradingModel& other, const std::string& prefix);

 private:
  ModelConfig cfg_;
  Vocabulary vocab_;
  RelationVocab relations_;
  WordVecTable words_;
  std::uint64_t seed_;
  ParamStore store_;
  SequenceEncoder encoder_;
  NodeInitializer nodes_;
  BundleEncoder graphs_;
  Regressor reg_;
};

}  // namespace convgrade
