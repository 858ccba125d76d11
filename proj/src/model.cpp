#include "convgrade/model.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

#include "convgrade/log.hpp"

namespace convgrade {

std::vector<std::string> ModelConfig::inventory() const {
  std::vector<std::string> out;
  if (use_b) out.push_back("B");
  if (use_c) out.push_back("C");
  if (use_a) out.push_back("A");
  if (use_d) out.push_back("D");
  return out;
}

std::string ModelConfig::variant() const {
  std::string graphs;
  if (use_c) graphs += "C";
  if (use_d) graphs += "D";
  if (use_a) graphs += "A";
  if (!use_b) {
    std::string out;
    for (char c : graphs) {
      if (!out.empty()) out += "+";
      out += c;
    }
    return out;
  }
  return graphs.empty() ? "B" : "B+" + graphs;
}

void ModelConfig::set_variant(const std::string& label) {
  bool b = false, c = false, a = false, d = false;
  for (char ch : label) {
    bool* flag = nullptr;
    switch (ch) {
      case 'B': flag = &b; break;
      case 'C': flag = &c; break;
      case 'A': flag = &a; break;
      case 'D': flag = &d; break;
      case '+':
      case ' ': continue;
      default: throw ConfigError("variant '" + label + "': unknown member '" + std::string(1, ch) + "'");
    }
    if (*flag) throw ConfigError("variant '" + label + "' repeats '" + std::string(1, ch) + "'");
    *flag = true;
  }
  if (!(b || c || a || d)) throw ConfigError("variant '" + label + "' names no inventory member");
  use_b = b;
  use_c = c;
  use_a = a;
  use_d = d;
}

void ModelConfig::finalize() {
  encoder.embed_dim = dim;
  nodes.dim = dim;
  gat.dim = dim;
  validate();
}

void ModelConfig::validate() const {
  if (dim == 0) throw ConfigError("model.dim must be positive");
  if (encoder.embed_dim != dim || nodes.dim != dim || gat.dim != dim) {
    throw ConfigError("model: component widths disagree with model.dim");
  }
  if (reg_heads == 0) throw ConfigError("model.reg_heads must be positive");
  if (!(use_b || use_c || use_a || use_d)) throw ConfigError("model: the score inventory is empty");
  if (relations.empty()) throw ConfigError("model.relations is empty");
  gat.validate();
}

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (auto s : v) out += (out.empty() ? "" : ",") + std::to_string(s);
  return out;
}

}  // namespace

ModelConfig read_model_config(const KeyValues& kv, ModelConfig cfg) {
  cfg.dim = kv.get_size("model.dim", cfg.dim);
  auto& e = cfg.encoder;
  e.max_tokens = kv.get_size("model.max_tokens", e.max_tokens);
  e.window_len = kv.get_size("model.window_len", e.window_len);
  e.window_stride = kv.get_size("model.window_stride", e.window_stride);
  e.lstm_hidden = kv.get_size("model.lstm_hidden", e.lstm_hidden);
  e.position_embeddings = kv.get_bool("model.position_embeddings", e.position_embeddings);
  auto& n = cfg.nodes;
  n.word_dim = kv.get_size("model.word_dim", n.word_dim);
  n.ngram_embed = kv.get_size("model.ngram_embed", n.ngram_embed);
  n.ngram_filters = kv.get_size("model.ngram_filters", n.ngram_filters);
  n.ngram_hidden = kv.get_size("model.ngram_hidden", n.ngram_hidden);
  if (kv.has("model.ngram_widths")) {
    n.ngram_widths.clear();
    for (double w : kv.get_doubles("model.ngram_widths", {})) {
      if (w < 1 || w != static_cast<double>(static_cast<std::size_t>(w))) {
        throw ConfigError("model.ngram_widths entries must be positive integers");
      }
      n.ngram_widths.push_back(static_cast<std::size_t>(w));
    }
  }
  auto& g = cfg.gat;
  g.heads = kv.get_size("model.gat_heads", g.heads);
  g.layers = kv.get_size("model.gat_layers", g.layers);
  g.ffn_dim = kv.get_size("model.ffn_dim", g.ffn_dim);
  g.slope = kv.get_double("model.slope", g.slope);
  g.dropout = kv.get_double("model.dropout", g.dropout);
  cfg.reg_heads = kv.get_size("model.reg_heads", cfg.reg_heads);
  if (kv.has("model.variant")) cfg.set_variant(kv.get_string("model.variant", ""));
  cfg.use_b = kv.get_bool("model.use_b", cfg.use_b);
  cfg.use_c = kv.get_bool("model.use_c", cfg.use_c);
  cfg.use_a = kv.get_bool("model.use_a", cfg.use_a);
  cfg.use_d = kv.get_bool("model.use_d", cfg.use_d);
  const std::string fusion = kv.get_string("model.fusion", cfg.fusion == Fusion::Mean ? "mean" : "concat");
  if (fusion == "mean") {
    cfg.fusion = Fusion::Mean;
  } else if (fusion == "concat") {
    cfg.fusion = Fusion::ConcatProject;
  } else {
    throw ConfigError("model.fusion must be 'mean' or 'concat', got '" + fusion + "'");
  }
  cfg.pool_separators = kv.get_bool("model.pool_separators", cfg.pool_separators);
  cfg.interlocutor_spo = kv.get_bool("model.interlocutor_spo", cfg.interlocutor_spo);
  cfg.word_vectors = kv.get_string("model.word_vectors", cfg.word_vectors);
  cfg.word_seed = static_cast<std::uint64_t>(kv.get_size("model.word_seed", cfg.word_seed));
  cfg.min_count = kv.get_size("model.min_count", cfg.min_count);
  cfg.relations = kv.get_strings("model.relations", cfg.relations);
  cfg.finalize();
  return cfg;
}

void write_model_config(std::ostream& out, const ModelConfig& cfg) {
  out << "model.dim = " << cfg.dim << "\n"
      << "model.max_tokens = " << cfg.encoder.max_tokens << "\n"
      << "model.window_len = " << cfg.encoder.window_len << "\n"
      << "model.window_stride = " << cfg.encoder.window_stride << "\n"
      << "model.lstm_hidden = " << cfg.encoder.lstm_hidden << "\n"
      << "model.position_embeddings = " << (cfg.encoder.position_embeddings ? "true" : "false") << "\n"
      << "model.word_dim = " << cfg.nodes.word_dim << "\n"
      << "model.ngram_embed = " << cfg.nodes.ngram_embed << "\n"
      << "model.ngram_filters = " << cfg.nodes.ngram_filters << "\n"
      << "model.ngram_widths = " << join_sizes(cfg.nodes.ngram_widths) << "\n"
      << "model.ngram_hidden = " << cfg.nodes.ngram_hidden << "\n"
      << "model.gat_heads = " << cfg.gat.heads << "\n"
      << "model.gat_layers = " << cfg.gat.layers << "\n"
      << "model.ffn_dim = " << cfg.gat.ffn_dim << "\n";
  std::ostringstream num;
  num.precision(17);
  num << "model.slope = " << cfg.gat.slope << "\nmodel.dropout = " << cfg.gat.dropout << "\n";
  out << num.str() << "model.reg_heads = " << cfg.reg_heads << "\n"
      << "model.variant = " << cfg.variant() << "\n"
      << "model.fusion = " << (cfg.fusion == Fusion::Mean ? "mean" : "concat") << "\n"
      << "model.pool_separators = " << (cfg.pool_separators ? "true" : "false") << "\n"
      << "model.interlocutor_spo = " << (cfg.interlocutor_spo ? "true" : "false") << "\n"
      << "model.word_vectors = \"" << cfg.word_vectors << "\"\n"
      << "model.word_seed = " << cfg.word_seed << "\n"
      << "model.min_count = " << cfg.min_count << "\n"
      << "model.relations = " << join(cfg.relations) << "\n";
}

GradingModel::GradingModel(ModelConfig cfg, Vocabulary vocab, std::uint64_t seed)
    : cfg_(std::move(cfg)), vocab_(std::move(vocab)), relations_(cfg_.relations), seed_(seed) {
  if (!cfg_.word_vectors.empty()) {
    words_ = WordVecTable::load(cfg_.word_vectors);
    cfg_.nodes.word_dim = words_.dim();
  } else {
    std::vector<std::string> tokens;
    for (std::size_t i = Vocabulary::kSep + 1; i < vocab_.size(); ++i) tokens.push_back(vocab_.token(i));
    words_ = WordVecTable::random(tokens, cfg_.nodes.word_dim, cfg_.word_seed);
  }
  cfg_.encoder.vocab_size = vocab_.size();
  cfg_.finalize();

  Rng rng(seed);
  encoder_ = SequenceEncoder(cfg_.encoder, store_, rng, "enc");
  if (cfg_.uses_graphs()) {
    nodes_ = NodeInitializer(cfg_.nodes, vocab_.size(), relations_.size(), store_, rng, "node");
    BundleOptions opts{cfg_.use_c, cfg_.use_a, cfg_.use_d, cfg_.fusion};
    graphs_ = BundleEncoder(cfg_.gat, opts, store_, rng, "gnn");
  }
  reg_ = Regressor(cfg_.inventory(), cfg_.dim, cfg_.reg_heads, store_, rng, "reg");
}

GradingModel GradingModel::create(const ModelConfig& cfg, const std::vector<Conversation>& train, std::uint64_t seed) {
  return GradingModel(cfg, Vocabulary::build(train, cfg.min_count), seed);
}

void GradingModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "model.cfg");
    if (!out) throw CheckpointError("cannot write " + (dir / "model.cfg").string());
    write_model_config(out, cfg_);
    out << "seed = " << seed_ << "\n";
  }
  vocab_.save(dir / "model.vocab");
  save_params(store_, dir / "model.ckpt");
}

GradingModel GradingModel::load(const std::filesystem::path& dir) {
  const auto kv = KeyValues::load(dir / "model.cfg");
  ModelConfig cfg = read_model_config(kv);
  const auto seed = static_cast<std::uint64_t>(kv.get_size("seed", 0));
  kv.reject_unused();
  GradingModel m(cfg, Vocabulary::load(dir / "model.vocab"), seed);
  load_params(m.store_, dir / "model.ckpt");
  return m;
}

PreparedConversation GradingModel::prepare(const Conversation& conv) const {
  PreparedConversation p;
  p.id = conv.id;
  p.score = conv.sst_score;
  p.sequence = assemble_sequence(conv, vocab_, cfg_.encoder.max_tokens);
  const std::size_t kept = p.sequence.spans.size();

  Conversation cut = conv;
  if (kept < conv.responses.size()) {
    cut.responses.resize(kept);
    for (auto& r : cut.responses) {
      if (!r.out_links) continue;
      auto& links = *r.out_links;
      links.erase(std::remove_if(links.begin(), links.end(), [&](const DiscourseLink& l) { return l.dst >= kept; }),
                  links.end());
    }
  }

  std::vector<bool> separator(p.sequence.length(), true);
  for (auto [s, e] : p.sequence.spans) {
    p.response_ids.emplace_back(p.sequence.token_ids.begin() + static_cast<std::ptrdiff_t>(s),
                                p.sequence.token_ids.begin() + static_cast<std::ptrdiff_t>(e));
    for (std::size_t i = s; i < e; ++i) separator[i] = false;
  }
  for (std::size_t i = 0; i < separator.size(); ++i)
    if (!separator[i]) p.content_rows.push_back(i);

  if (cfg_.uses_graphs()) {
    GraphOptions opts;
    opts.interlocutor_spo = cfg_.interlocutor_spo;
    p.bundle = build_bundle(cut, opts);
    p.adj_c = p.bundle.g_c.in_adjacency();
    p.adj_a = p.bundle.g_a.in_adjacency();
    p.adj_d = p.bundle.g_d.in_adjacency();
    if (cfg_.use_c) p.feat_c = graph_features(p.bundle.g_c, cut, words_, relations_);
    if (cfg_.use_a) p.feat_a = graph_features(p.bundle.g_a, cut, words_, relations_);
    if (cfg_.use_d) p.feat_d = graph_features(p.bundle.g_d, cut, words_, relations_);
  }
  return p;
}

std::vector<PreparedConversation> GradingModel::prepare_all(const std::vector<Conversation>& convs) const {
  std::vector<PreparedConversation> out;
  out.reserve(convs.size());
  for (const auto& c : convs) out.push_back(prepare(c));
  return out;
}

Var GradingModel::forward(Tape& t, const PreparedConversation& p, Rng* dropout_rng) const {
  Var hb = encoder_.encode(t, store_, p.sequence);
  std::vector<NamedEmbedding> inventory;
  if (cfg_.use_b) {
    Var pooled = cfg_.pool_separators ? mean_pool(hb) : mean_pool(embedding_lookup(hb, p.content_rows));
    inventory.push_back({"B", pooled});
  }
  if (cfg_.uses_graphs()) {
    const std::size_t n = p.sequence.spans.size();
    Var responses = nodes_.response_nodes(t, store_, hb, p.sequence.spans, p.response_ids);
    GraphInputs c{&p.bundle.g_c, &p.adj_c, {}};
    GraphInputs a{&p.bundle.g_a, &p.adj_a, {}};
    GraphInputs d{&p.bundle.g_d, &p.adj_d, {}};
    if (cfg_.use_c) c.states = nodes_.initial_states(t, store_, p.bundle.g_c, p.feat_c, responses);
    if (cfg_.use_a) a.states = nodes_.initial_states(t, store_, p.bundle.g_a, p.feat_a, responses);
    if (cfg_.use_d) d.states = nodes_.initial_states(t, store_, p.bundle.g_d, p.feat_d, responses);
    const GraphReadouts r = graphs_.encode(t, store_, n, c, a, d, dropout_rng);
    if (r.c) inventory.push_back({"C", *r.c});
    if (r.a) inventory.push_back({"A", *r.a});
    if (r.d) inventory.push_back({"D", *r.d});
  }
  return reg_.regress(t, store_, inventory);
}

double GradingModel::predict(const PreparedConversation& p) const {
  Tape t;
  return forward(t, p).value()[0];
}

void GradingModel::copy_params_from(const GradingModel& other, const std::string& prefix) {
  for (ParamId i = 0; i < store_.size(); ++i) {
    const std::string& name = store_.name(i);
    if (name.rfind(prefix, 0) != 0) continue;
    if (!other.store_.contains(name)) throw ContractError("copy_params_from: source lacks '" + name + "'");
    const Tensor& src = other.store_.value(other.store_.id(name));
    if (src.shape() != store_.value(i).shape()) throw ShapeError("copy_params_from: shape mismatch for '" + name + "'");
    store_.value(i) = src;
  }
}

}  // namespace convgrade
