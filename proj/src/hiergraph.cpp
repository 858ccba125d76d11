#include "convgrade/hiergraph.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#include "convgrade/log.hpp"

namespace convgrade {

std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Word: return "Word";
    case NodeKind::Response: return "Response";
    case NodeKind::Global: return "Global";
    case NodeKind::Subject: return "Subject";
    case NodeKind::Predicate: return "Predicate";
    case NodeKind::Object: return "Object";
    case NodeKind::Intent: return "Intent";
    case NodeKind::Discourse: return "Discourse";
  }
  return "?";
}

std::string_view to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::WordToResponse: return "word->response";
    case EdgeKind::ResponseToWord: return "response->word";
    case EdgeKind::SpoToIntent: return "spo->intent";
    case EdgeKind::IntentToResponse: return "intent->response";
    case EdgeKind::ResponseToDiscourse: return "response->discourse";
    case EdgeKind::DiscourseToResponse: return "discourse->response";
    case EdgeKind::ToGlobal: return "->global";
  }
  return "?";
}

std::string_view to_string(GraphLevel g) {
  switch (g) {
    case GraphLevel::Semantic: return "semantic";
    case GraphLevel::Action: return "action";
    case GraphLevel::Discourse: return "discourse";
  }
  return "?";
}

// ---- HeteroGraph ----------------------------------------------------------

std::size_t HeteroGraph::add_node(NodeKind kind, std::string payload, std::size_t response, TokenSpan span) {
  if (finalized()) throw ContractError("add_node after finalize()");
  if (kind == NodeKind::Global) throw ContractError("the global node is added by finalize()");
  nodes_.push_back({kind, std::move(payload), response, span});
  return nodes_.size() - 1;
}

void HeteroGraph::add_edge(std::size_t src, std::size_t dst, EdgeKind kind) {
  if (finalized() && kind != EdgeKind::ToGlobal) throw ContractError("add_edge after finalize()");
  if (src >= nodes_.size() || dst >= nodes_.size()) {
    throw ContractError("edge " + std::to_string(src) + "->" + std::to_string(dst) + " has an invalid endpoint");
  }
  if (src == dst) throw ContractError("self-loop on node " + std::to_string(src));
  auto& kinds = edge_index_[(static_cast<std::uint64_t>(src) << 32) | dst];
  if (std::find(kinds.begin(), kinds.end(), kind) != kinds.end()) {
    throw ContractError("duplicate edge " + std::to_string(src) + "->" + std::to_string(dst));
  }
  kinds.push_back(kind);
  edges_.push_back({src, dst, kind});
}

std::size_t HeteroGraph::finalize() {
  if (finalized()) throw ContractError("graph already finalized");
  const std::size_t g = nodes_.size();
  nodes_.push_back({NodeKind::Global, {}, kNoResponse, {}});
  global_ = g;
  for (std::size_t i = 0; i < g; ++i) add_edge(i, g, EdgeKind::ToGlobal);
  return g;
}

std::size_t HeteroGraph::global_node() const {
  if (!finalized()) throw ContractError("graph has no global node yet");
  return global_;
}

std::size_t HeteroGraph::count(NodeKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [kind](const GraphNode& n) { return n.kind == kind; }));
}

InAdjacency HeteroGraph::in_adjacency() const {
  InAdjacency adj;
  adj.offsets.assign(nodes_.size() + 1, 0);
  for (const auto& e : edges_) ++adj.offsets[e.dst + 1];
  for (std::size_t i = 0; i < nodes_.size(); ++i) adj.offsets[i + 1] += adj.offsets[i];
  adj.sources.resize(edges_.size());
  std::vector<std::size_t> fill(adj.offsets.begin(), adj.offsets.end() - 1);
  for (const auto& e : edges_) adj.sources[fill[e.dst]++] = e.src;
  return adj;
}

std::vector<std::size_t> HeteroGraph::in_degree() const {
  std::vector<std::size_t> d(nodes_.size(), 0);
  for (const auto& e : edges_) ++d[e.dst];
  return d;
}

std::vector<std::size_t> HeteroGraph::out_degree() const {
  std::vector<std::size_t> d(nodes_.size(), 0);
  for (const auto& e : edges_) ++d[e.src];
  return d;
}

void HeteroGraph::validate() const {
  if (!finalized()) throw ContractError("graph is not finalized");
  if (count(NodeKind::Global) != 1) throw ContractError("graph must have exactly one global node");
  std::vector<bool> to_global(nodes_.size(), false);
  for (const auto& e : edges_) {
    if (e.src >= nodes_.size() || e.dst >= nodes_.size()) throw ContractError("edge endpoint out of range");
    if (e.src == e.dst) throw ContractError("self-loop");
    if (e.src == global_) throw ContractError("global node has an outgoing edge");
    if (e.dst == global_) to_global[e.src] = true;
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (i != global_ && !to_global[i]) throw ContractError("node " + std::to_string(i) + " has no edge to the global node");
  }
}

// ---- builders -------------------------------------------------------------

namespace {

HeteroGraph with_responses(GraphLevel level, const Conversation& conv) {
  HeteroGraph g(level);
  for (std::size_t i = 0; i < conv.responses.size(); ++i) g.add_node(NodeKind::Response, {}, i);
  return g;
}

std::string span_text(const Response& r, TokenSpan s) {
  std::string out;
  for (std::size_t k = s.start; k < s.end && k < r.tokens.size(); ++k) out += (out.empty() ? "" : " ") + r.tokens[k];
  return out;
}

}  // namespace

HeteroGraph build_semantic_graph(const Conversation& conv, const GraphOptions& opts) {
  HeteroGraph g = with_responses(GraphLevel::Semantic, conv);
  std::unordered_map<std::string, std::size_t> word_node;
  std::vector<std::vector<std::size_t>> word_responses;
  for (std::size_t i = 0; i < conv.responses.size(); ++i) {
    for (const auto& tok : conv.responses[i].tokens) {
      if (!opts.lexicon->is_content(tok)) continue;
      auto [it, fresh] = word_node.emplace(tok, g.num_nodes());
      if (fresh) {
        g.add_node(NodeKind::Word, tok);
        word_responses.emplace_back();
      }
      auto& rs = word_responses[it->second - conv.responses.size()];
      if (rs.empty() || rs.back() != i) rs.push_back(i);
    }
  }
  if (word_responses.empty()) log_warn("conversation '" + conv.id + "' has no content words");
  for (std::size_t w = 0; w < word_responses.size(); ++w) {
    const std::size_t node = conv.responses.size() + w;
    for (std::size_t r : word_responses[w]) {
      g.add_edge(node, r, EdgeKind::WordToResponse);
      g.add_edge(r, node, EdgeKind::ResponseToWord);
    }
  }
  g.finalize();
  return g;
}

HeteroGraph build_action_graph(const Conversation& conv, const GraphOptions& opts) {
  HeteroGraph g = with_responses(GraphLevel::Action, conv);
  for (std::size_t i = 0; i < conv.responses.size(); ++i) {
    const Response& r = conv.responses[i];
    for (const SpoTriplet& t : effective_spo(r, opts.interlocutor_spo, *opts.lexicon)) {
      const std::size_t s = g.add_node(NodeKind::Subject, span_text(r, t.subject), i, t.subject);
      const std::size_t p = g.add_node(NodeKind::Predicate, span_text(r, t.predicate), i, t.predicate);
      const std::size_t o = g.add_node(NodeKind::Object, span_text(r, t.object), i, t.object);
      const std::size_t intent = g.add_node(NodeKind::Intent, {}, i);
      g.add_edge(s, intent, EdgeKind::SpoToIntent);
      g.add_edge(p, intent, EdgeKind::SpoToIntent);
      g.add_edge(o, intent, EdgeKind::SpoToIntent);
      g.add_edge(intent, i, EdgeKind::IntentToResponse);
    }
  }
  g.finalize();
  return g;
}

void levi_transform(HeteroGraph& g, const std::vector<DiscourseLink>& links) {
  for (const auto& l : links) {
    if (l.src >= g.num_nodes() || l.dst >= g.num_nodes() || g.nodes()[l.src].kind != NodeKind::Response ||
        g.nodes()[l.dst].kind != NodeKind::Response) {
      throw ContractError("discourse link " + std::to_string(l.src) + "->" + std::to_string(l.dst) +
                          " does not join two response nodes");
    }
    const std::size_t d = g.add_node(NodeKind::Discourse, l.relation);
    g.add_edge(l.src, d, EdgeKind::ResponseToDiscourse);
    g.add_edge(d, l.dst, EdgeKind::DiscourseToResponse);
  }
}

HeteroGraph build_discourse_graph(const Conversation& conv) {
  HeteroGraph g = with_responses(GraphLevel::Discourse, conv);
  levi_transform(g, effective_links(conv));
  g.finalize();
  return g;
}

const HeteroGraph& GraphBundle::graph(GraphLevel l) const {
  switch (l) {
    case GraphLevel::Semantic: return g_c;
    case GraphLevel::Action: return g_a;
    case GraphLevel::Discourse: return g_d;
  }
  return g_c;
}

GraphBundle build_bundle(const Conversation& conv, const GraphOptions& opts) {
  GraphBundle b;
  b.g_c = build_semantic_graph(conv, opts);
  b.g_a = build_action_graph(conv, opts);
  b.g_d = build_discourse_graph(conv);
  for (std::size_t i = 0; i < conv.responses.size(); ++i) {
    b.resp_c.push_back(i);
    b.resp_a.push_back(i);
    b.resp_d.push_back(i);
  }
  return b;
}

void dump_graph(std::ostream& out, const HeteroGraph& g, std::string_view title) {
  out << "graph " << title << " level=" << to_string(g.level()) << " nodes=" << g.num_nodes()
      << " edges=" << g.edges().size() << " global=" << g.global_node() << '\n';
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    const GraphNode& n = g.nodes()[i];
    out << "node " << i << ' ' << to_string(n.kind);
    if (n.response != kNoResponse) out << " r=" << n.response;
    if (!n.payload.empty()) out << " \"" << n.payload << '"';
    out << '\n';
  }
  for (const auto& e : g.edges()) out << "edge " << e.src << ' ' << e.dst << ' ' << to_string(e.kind) << '\n';
}

// ---- word vectors ---------------------------------------------------------

void WordVecTable::set(const std::string& token, std::vector<double> vec) {
  if (dim_ == 0) dim_ = vec.size();
  if (vec.size() != dim_ || dim_ == 0) {
    throw ConfigError("word vector for '" + token + "' has dimension " + std::to_string(vec.size()) + ", expected " +
                      std::to_string(dim_));
  }
  if (sum_.empty()) sum_.assign(dim_, 0.0);
  auto it = index_.find(token);
  if (it == index_.end()) {
    it = index_.emplace(token, data_.size() / dim_).first;
    data_.resize(data_.size() + dim_, 0.0);
  } else {
    for (std::size_t k = 0; k < dim_; ++k) sum_[k] -= data_[it->second * dim_ + k];
  }
  std::copy(vec.begin(), vec.end(), data_.begin() + static_cast<std::ptrdiff_t>(it->second * dim_));
  for (std::size_t k = 0; k < dim_; ++k) sum_[k] += vec[k];
  mean_ready_ = false;
}

WordVecTable WordVecTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open word-vector file " + path.string());
  WordVecTable t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    std::vector<double> v;
    for (double x; ls >> x;) v.push_back(x);
    if (!ls.eof()) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    t.set(token, std::move(v));
  }
  if (t.empty()) throw ConfigError("word-vector file " + path.string() + " is empty");
  return t;
}

WordVecTable WordVecTable::random(const std::vector<std::string>& tokens, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ConfigError("word-vector dimension must be positive");
  WordVecTable t(dim);
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (const auto& tok : tokens) {
    std::vector<double> v(dim);
    for (auto& x : v) x = n(rng);
    t.set(tok, std::move(v));
  }
  return t;
}

std::span<const double> WordVecTable::mean() const {
  if (empty()) throw ConfigError("word-vector table is empty");
  if (!mean_ready_) {
    mean_ = sum_;
    for (auto& x : mean_) x /= static_cast<double>(size());
    mean_ready_ = true;
  }
  return mean_;
}

std::span<const double> WordVecTable::lookup(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return mean();
  return {data_.data() + it->second * dim_, dim_};
}

// ---- node features ----------------------------------------------------------

GraphFeatures graph_features(const HeteroGraph& g, const Conversation& conv, const WordVecTable& table,
                             const RelationVocab& relations) {
  GraphFeatures f;
  const std::size_t n_resp = g.count(NodeKind::Response);
  const std::size_t n_word = g.count(NodeKind::Word);
  const std::size_t n_spo = g.count(NodeKind::Subject) + g.count(NodeKind::Predicate) + g.count(NodeKind::Object);
  f.intents = g.count(NodeKind::Intent);
  const std::size_t n_disc = g.count(NodeKind::Discourse);
  if ((n_word || n_spo) && table.empty()) throw ConfigError("word-vector table is empty");
  const std::size_t Dw = table.dim();
  if (n_word) f.word_vectors = Tensor(Shape{n_word, Dw});
  if (n_spo) f.spo_vectors = Tensor(Shape{n_spo, Dw});

  // Stacked block order: responses, words, spo, intents, discourse, global.
  const std::size_t base_word = n_resp, base_spo = base_word + n_word, base_intent = base_spo + n_spo,
                    base_disc = base_intent + f.intents, base_global = base_disc + n_disc;
  std::size_t iw = 0, is = 0, ii = 0, id = 0;
  f.gather.resize(g.num_nodes());
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    const GraphNode& n = g.nodes()[v];
    switch (n.kind) {
      case NodeKind::Response:
        if (n.response >= n_resp) throw ContractError("response node order is not 0..n-1");
        f.gather[v] = n.response;
        break;
      case NodeKind::Word: {
        const auto vec = table.lookup(n.payload);
        std::copy(vec.begin(), vec.end(), f.word_vectors.row(iw).begin());
        f.gather[v] = base_word + iw++;
        break;
      }
      case NodeKind::Subject:
      case NodeKind::Predicate:
      case NodeKind::Object: {
        if (n.response >= conv.responses.size()) throw ContractError("SPO node without a valid response");
        const Response& r = conv.responses[n.response];
        auto row = f.spo_vectors.row(is);
        const std::size_t len = n.span.end - n.span.start;
        for (std::size_t k = n.span.start; k < n.span.end; ++k) {
          const auto vec = table.lookup(r.tokens.at(k));
          for (std::size_t c = 0; c < Dw; ++c) row[c] += vec[c] / static_cast<double>(len);
        }
        f.spo_kinds.push_back(n.kind == NodeKind::Subject ? 0 : n.kind == NodeKind::Predicate ? 1 : 2);
        f.gather[v] = base_spo + is++;
        break;
      }
      case NodeKind::Intent: f.gather[v] = base_intent + ii++; break;
      case NodeKind::Discourse: {
        const auto rel = relations.index(n.payload);
        if (!rel) throw ConfigError("unknown discourse relation '" + n.payload + "'");
        f.relation_ids.push_back(*rel);
        f.gather[v] = base_disc + id++;
        break;
      }
      case NodeKind::Global: f.gather[v] = base_global; break;
    }
  }
  return f;
}

// ---- n-gram encoder ---------------------------------------------------------

NgramEncoder::NgramEncoder(const NodeInitConfig& cfg, std::size_t vocab_size, ParamStore& store, Rng& rng,
                           const std::string& prefix)
    : cfg_(cfg) {
  if (cfg.ngram_widths.empty()) throw ConfigError("n-gram encoder needs at least one kernel width");
  emb_ = store.add(prefix + ".emb", normal_init({vocab_size, cfg.ngram_embed}, 0.1, rng));
  for (std::size_t w : cfg.ngram_widths) {
    kernels_.push_back(store.add(prefix + ".conv" + std::to_string(w) + ".w",
                                 glorot(w * cfg.ngram_embed, cfg.ngram_filters, rng)));
    biases_.push_back(store.add(prefix + ".conv" + std::to_string(w) + ".b", Tensor(Shape{cfg.ngram_filters})));
  }
  const std::size_t pooled = cfg.ngram_filters * cfg.ngram_widths.size();
  fwd_ = LstmParams::create(store, prefix + ".lstm.fwd", pooled, cfg.ngram_hidden, rng);
  bwd_ = LstmParams::create(store, prefix + ".lstm.bwd", pooled, cfg.ngram_hidden, rng);
  proj_ = Linear::create(store, prefix + ".proj", 2 * cfg.ngram_hidden, cfg.dim, rng);
}

Var NgramEncoder::embed(Tape& t, const ParamStore& store, std::span<const std::size_t> token_ids) const {
  if (token_ids.empty()) throw ContractError("ngram_embed: empty response");
  Var x = embedding_lookup(t.param(store, emb_), token_ids);
  std::vector<Var> ks, bs;
  for (std::size_t k = 0; k < kernels_.size(); ++k) {
    ks.push_back(t.param(store, kernels_[k]));
    bs.push_back(t.param(store, biases_[k]));
  }
  // Max over time per filter; widths stay side by side.
  Var pooled = max_rows(relu(conv1d(x, ks, bs, cfg_.ngram_widths)));
  Var step = reshape(pooled, {1, pooled.shape()[0]});
  Var h = bilstm(step, fwd_.bind(t, store), bwd_.bind(t, store));
  return proj_(t, store, reshape(h, {h.shape()[1]}));
}

// ---- node initializer -------------------------------------------------------

NodeInitializer::NodeInitializer(const NodeInitConfig& cfg, std::size_t vocab_size, std::size_t n_relations,
                                 ParamStore& store, Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
  const std::size_t D = cfg.dim;
  ngram_ = NgramEncoder(cfg, vocab_size, store, rng, "ngm");
  word_proj_ = Linear::create(store, prefix + ".word_proj", cfg.word_dim, D, rng);
  mlp1_ = Linear::create(store, prefix + ".resp_mlp1", 2 * D, D, rng);
  mlp2_ = Linear::create(store, prefix + ".resp_mlp2", D, D, rng);
  spo_kind_ = store.add(prefix + ".spo_kind", normal_init({3, D}, 0.1, rng));
  intent_ = store.add(prefix + ".intent", normal_init({1, D}, 0.1, rng));
  global_ = store.add(prefix + ".global", normal_init({3, D}, 0.1, rng));
  rel_ = store.add(prefix + ".rel_emb", normal_init({n_relations, D}, 0.1, rng));
}

Var NodeInitializer::word_nodes(Tape& t, const ParamStore& store, const Tensor& word_vectors) const {
  if (word_vectors.rank() != 2 || word_vectors.cols() != cfg_.word_dim) {
    throw ShapeError("word_nodes: vectors " + shape_str(word_vectors.shape()) + " do not have width " +
                     std::to_string(cfg_.word_dim));
  }
  return word_proj_(t, store, t.constant(word_vectors));
}

Var NodeInitializer::response_nodes(Tape& t, const ParamStore& store, Var hb,
                                    const std::vector<std::pair<std::size_t, std::size_t>>& spans,
                                    const std::vector<std::vector<std::size_t>>& response_token_ids) const {
  if (spans.size() != response_token_ids.size()) {
    throw ContractError("response_nodes: " + std::to_string(response_token_ids.size()) + " responses but " +
                        std::to_string(spans.size()) + " spans");
  }
  if (spans.empty()) throw ContractError("response_nodes: no responses");
  std::vector<Var> pooled, ngm;
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto [s, e] = spans[i];
    if (s >= e || e > hb.shape()[0]) throw ContractError("response_nodes: span of response " + std::to_string(i) + " is invalid");
    Var span_mean = mean(slice(hb, 0, s, e), 0);
    pooled.push_back(reshape(span_mean, {1, cfg_.dim}));
    Var g = ngram_.embed(t, store, response_token_ids[i]);
    ngm.push_back(reshape(g, {1, cfg_.dim}));
  }
  Var P = pooled.size() == 1 ? pooled[0] : concat(pooled, 0);
  Var G = ngm.size() == 1 ? ngm[0] : concat(ngm, 0);
  Var hidden = relu(mlp1_(t, store, concat({P, G}, 1)));
  return add(mlp2_(t, store, hidden), G);
}

Var NodeInitializer::discourse_nodes(Tape& t, const ParamStore& store, std::span<const std::size_t> relation_ids) const {
  return embedding_lookup(t.param(store, rel_), relation_ids);
}

Var NodeInitializer::initial_states(Tape& t, const ParamStore& store, const HeteroGraph& g, const GraphFeatures& f,
                                    Var responses) const {
  std::vector<Var> blocks{responses};
  if (f.word_vectors.size()) blocks.push_back(word_nodes(t, store, f.word_vectors));
  if (f.spo_vectors.size()) {
    Var kinds = embedding_lookup(t.param(store, spo_kind_), f.spo_kinds);
    blocks.push_back(add(word_proj_(t, store, t.constant(f.spo_vectors)), kinds));
  }
  if (f.intents) {
    std::vector<std::size_t> zeros(f.intents, 0);
    blocks.push_back(embedding_lookup(t.param(store, intent_), zeros));
  }
  if (!f.relation_ids.empty()) blocks.push_back(discourse_nodes(t, store, f.relation_ids));
  blocks.push_back(slice(t.param(store, global_), 0, static_cast<std::size_t>(g.level()),
                         static_cast<std::size_t>(g.level()) + 1));
  Var stacked = concat(blocks, 0);
  if (f.gather.size() != g.num_nodes()) throw ContractError("graph features do not match the graph");
  bool identity = true;
  for (std::size_t v = 0; v < f.gather.size(); ++v) identity = identity && f.gather[v] == v;
  return identity ? stacked : embedding_lookup(stacked, f.gather);
}

}  // namespace convgrade
