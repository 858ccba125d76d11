#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "convgrade/corpus.hpp"
#include "convgrade/layers.hpp"

namespace convgrade {

enum class NodeKind { Word, Response, Global, Subject, Predicate, Object, Intent, Discourse };
enum class EdgeKind { WordToResponse, ResponseToWord, SpoToIntent, IntentToResponse, ResponseToDiscourse, DiscourseToResponse, ToGlobal };
enum class GraphLevel { Semantic = 0, Action = 1, Discourse = 2 };

std::string_view to_string(NodeKind k);
std::string_view to_string(EdgeKind k);
std::string_view to_string(GraphLevel g);

inline constexpr std::size_t kNoResponse = std::numeric_limits<std::size_t>::max();

struct GraphNode {
  NodeKind kind = NodeKind::Word;
  /// Word: token. SPO: surface text. Discourse: relation label. Intent/Response: empty.
  std::string payload;
  /// Owning response for Response, SPO and Intent nodes.
  std::size_t response = kNoResponse;
  /// Token span inside the owning response (SPO nodes).
  TokenSpan span;
};

struct GraphEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  EdgeKind kind = EdgeKind::ToGlobal;
  friend bool operator==(const GraphEdge&, const GraphEdge&) = default;
};

/// Typed directed graph with exactly one global node once finalized.
class HeteroGraph {
 public:
  explicit HeteroGraph(GraphLevel level = GraphLevel::Semantic) : level_(level) {}

  std::size_t add_node(NodeKind kind, std::string payload = {}, std::size_t response = kNoResponse, TokenSpan span = {});
  /// Throws ContractError for self-loops, bad endpoints, duplicates, or edges after finalize().
  void add_edge(std::size_t src, std::size_t dst, EdgeKind kind);
  /// Appends the global node and an edge from every other node into it.
  std::size_t finalize();

  GraphLevel level() const noexcept { return level_; }
  bool finalized() const noexcept { return global_ != kNoResponse; }
  std::size_t global_node() const;
  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  const std::vector<GraphNode>& nodes() const noexcept { return nodes_; }
  const std::vector<GraphEdge>& edges() const noexcept { return edges_; }
  std::size_t count(NodeKind kind) const;

  /// In-edge lists (sources in edge insertion order) for attention.
  InAdjacency in_adjacency() const;
  std::vector<std::size_t> in_degree() const;
  std::vector<std::size_t> out_degree() const;

  /// Re-checks every structural invariant; throws ContractError naming the first violation.
  void validate() const;

 private:
  GraphLevel level_;
  std::vector<GraphNode> nodes_;
  std::vector<GraphEdge> edges_;
  std::unordered_map<std::uint64_t, std::vector<EdgeKind>> edge_index_;
  std::size_t global_ = kNoResponse;
};

struct GraphOptions {
  bool interlocutor_spo = true;
  const Lexicon* lexicon = &Lexicon::english();
};

/// Response nodes take ids 0..n-1 in every graph and the global node comes last.
HeteroGraph build_semantic_graph(const Conversation& conv, const GraphOptions& opts = {});
HeteroGraph build_action_graph(const Conversation& conv, const GraphOptions& opts = {});
/// Adds one Discourse node per link with edges src -> d -> dst.
void levi_transform(HeteroGraph& g, const std::vector<DiscourseLink>& links);
HeteroGraph build_discourse_graph(const Conversation& conv);

struct GraphBundle {
  HeteroGraph g_c{GraphLevel::Semantic};
  HeteroGraph g_a{GraphLevel::Action};
  HeteroGraph g_d{GraphLevel::Discourse};
  /// Node id of response i in each graph.
  std::vector<std::size_t> resp_c, resp_a, resp_d;

  std::size_t num_responses() const noexcept { return resp_c.size(); }
  const HeteroGraph& graph(GraphLevel l) const;
};

GraphBundle build_bundle(const Conversation& conv, const GraphOptions& opts = {});

/// Plain-text listing of nodes and edges, one per line.
void dump_graph(std::ostream& out, const HeteroGraph& g, std::string_view title);

/// Pretrained-style word vectors; unknown tokens fall back to the table mean.
class WordVecTable {
 public:
  WordVecTable() = default;
  explicit WordVecTable(std::size_t dim) : dim_(dim) {}

  /// "token v1 ... vD" per line.
  static WordVecTable load(const std::filesystem::path& path);
  /// Seeded N(0, 1/dim) vectors for the given tokens.
  static WordVecTable random(const std::vector<std::string>& tokens, std::size_t dim, std::uint64_t seed);

  void set(const std::string& token, std::vector<double> vec);
  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return index_.size(); }
  bool empty() const noexcept { return index_.empty(); }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  /// Vector of `token`, or the mean vector when it is unknown.
  std::span<const double> lookup(const std::string& token) const;
  std::span<const double> mean() const;

 private:
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> data_;
  std::vector<double> sum_;
  mutable std::vector<double> mean_;
  mutable bool mean_ready_ = false;
};

/// Constant per-graph inputs for node initialization, computed once per conversation.
struct GraphFeatures {
  Tensor word_vectors;  // (#Word, D_w) in node order
  Tensor spo_vectors;   // (#SPO, D_w): mean word vector over the span
  std::vector<std::size_t> spo_kinds;     // 0 subject, 1 predicate, 2 object
  std::vector<std::size_t> relation_ids;  // per Discourse node
  std::size_t intents = 0;
  /// Row of the stacked block matrix for each node id.
  std::vector<std::size_t> gather;
};

/// Throws ConfigError for an empty table (with word nodes present) or an unknown relation label.
GraphFeatures graph_features(const HeteroGraph& g, const Conversation& conv, const WordVecTable& table,
                             const RelationVocab& relations);

struct NodeInitConfig {
  std::size_t dim = 64;        // D_H
  std::size_t word_dim = 50;   // D_w
  std::size_t ngram_embed = 64;
  std::size_t ngram_filters = 32;  // per kernel width
  std::vector<std::size_t> ngram_widths{2, 3, 4};
  std::size_t ngram_hidden = 32;   // BiLSTM, per direction
};

/// CNN-BLSTM n-gram embedding of one response.
class NgramEncoder {
 public:
  NgramEncoder() = default;
  NgramEncoder(const NodeInitConfig& cfg, std::size_t vocab_size, ParamStore& store, Rng& rng,
               const std::string& prefix = "ngm");
  /// (D_H). Throws ContractError for an empty id list.
  Var embed(Tape& t, const ParamStore& store, std::span<const std::size_t> token_ids) const;

  ParamId embedding() const noexcept { return emb_; }
  const std::vector<ParamId>& kernels() const noexcept { return kernels_; }

 private:
  NodeInitConfig cfg_;
  ParamId emb_ = 0;
  std::vector<ParamId> kernels_, biases_;
  LstmParams fwd_, bwd_;
  Linear proj_;
};

/// Parameters that produce initial node states for all three graphs.
class NodeInitializer {
 public:
  NodeInitializer() = default;
  NodeInitializer(const NodeInitConfig& cfg, std::size_t vocab_size, std::size_t n_relations, ParamStore& store,
                  Rng& rng, const std::string& prefix = "node");

  const NodeInitConfig& config() const noexcept { return cfg_; }
  const NgramEncoder& ngram() const noexcept { return ngram_; }

  /// (k, D_w) -> (k, D_H)
  Var word_nodes(Tape& t, const ParamStore& store, const Tensor& word_vectors) const;
  /// One row per response: MLP(mean(H^B[span]) ++ ngm) + ngm.
  Var response_nodes(Tape& t, const ParamStore& store, Var hb,
                     const std::vector<std::pair<std::size_t, std::size_t>>& spans,
                     const std::vector<std::vector<std::size_t>>& response_token_ids) const;
  Var discourse_nodes(Tape& t, const ParamStore& store, std::span<const std::size_t> relation_ids) const;
  /// Full (N, D_H) state matrix of `g` in node order, given the shared response rows.
  Var initial_states(Tape& t, const ParamStore& store, const HeteroGraph& g, const GraphFeatures& f,
                     Var responses) const;

  ParamId relation_table() const noexcept { return rel_; }
  const Linear& mlp_in() const noexcept { return mlp1_; }
  const Linear& mlp_out() const noexcept { return mlp2_; }

 private:
  NodeInitConfig cfg_;
  NgramEncoder ngram_;
  Linear word_proj_;
  Linear mlp1_, mlp2_;
  ParamId spo_kind_ = 0;
  ParamId intent_ = 0;
  ParamId global_ = 0;
  ParamId rel_ = 0;
};

}  // namespace convgrade
