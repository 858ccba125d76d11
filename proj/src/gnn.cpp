#include "convgrade/gnn.hpp"

namespace convgrade {

void GatConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("gat: dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (layers == 0) throw ConfigError("gat: layers must be >= 1");
  if (!(slope > 0.0)) throw ConfigError("gat: leaky relu slope must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("gat: dropout must be in [0, 1)");
}

Ffn::Ffn(std::size_t dim, std::size_t hidden, ParamStore& store, Rng& rng, const std::string& name)
    : l1_(Linear::create(store, name + ".ffn1", dim, hidden, rng)),
      l2_(Linear::create(store, name + ".ffn2", hidden, dim, rng)) {}

Var Ffn::forward(Tape& t, const ParamStore& store, Var states) const {
  return add(states, l2_(t, store, relu(l1_(t, store, states))));
}

GatLayer::GatLayer(const GatConfig& cfg, ParamStore& store, Rng& rng, const std::string& name) : cfg_(cfg) {
  cfg.validate();
  const std::size_t dh = cfg.dim / cfg.heads;
  w_ = store.add(name + ".w", glorot(cfg.dim, cfg.dim, rng));
  a_ = store.add(name + ".attn", glorot(cfg.heads, 2 * dh, rng));
  ffn_ = Ffn(cfg.dim, cfg.ffn_width(), store, rng, name);
}

Var GatLayer::attend(Tape& t, const ParamStore& store, Var states, const InAdjacency& adj) const {
  if (states.shape().size() != 2 || states.shape()[1] != cfg_.dim) {
    throw ShapeError("gat_layer: states " + shape_str(states.shape()) + " do not have width " + std::to_string(cfg_.dim));
  }
  Var projected = matmul(states, t.param(store, w_));
  return add(states, graph_attention(projected, t.param(store, a_), adj, cfg_.slope));
}

Var GatLayer::forward(Tape& t, const ParamStore& store, Var states, const InAdjacency& adj, Rng* dropout_rng) const {
  Var h = attend(t, store, states, adj);
  if (dropout_rng && cfg_.dropout > 0.0) h = dropout(h, cfg_.dropout, *dropout_rng);
  return ffn_.forward(t, store, h);
}

GatStack::GatStack(const GatConfig& cfg, ParamStore& store, Rng& rng, const std::string& name) {
  for (std::size_t l = 0; l < cfg.layers; ++l) layers_.emplace_back(cfg, store, rng, name + ".l" + std::to_string(l));
}

Var GatStack::forward(Tape& t, const ParamStore& store, Var states, const InAdjacency& adj, Rng* dropout_rng) const {
  for (const auto& l : layers_) states = l.forward(t, store, states, adj, dropout_rng);
  return states;
}

BundleEncoder::BundleEncoder(const GatConfig& cfg, const BundleOptions& opts, ParamStore& store, Rng& rng,
                             const std::string& prefix)
    : cfg_(cfg), opts_(opts) {
  cfg.validate();
  if (opts.use_c) c_ = GatStack(cfg, store, rng, prefix + ".c");
  if (opts.use_a) a_ = GatStack(cfg, store, rng, prefix + ".a");
  if (opts.use_d) {
    d_ = GatStack(cfg, store, rng, prefix + ".d");
    if (opts.fusion == Fusion::ConcatProject && opts.use_c && opts.use_a) {
      fuse_ = Linear::create(store, prefix + ".fuse", 2 * cfg.dim, cfg.dim, rng);
    }
  }
}

namespace {

Var global_row(const GraphInputs& g, Var states) {
  const std::size_t k = g.graph->global_node();
  return reshape(slice(states, 0, k, k + 1), {states.shape()[1]});
}

void check_inputs(const GraphInputs& g, std::size_t n_responses, const char* which) {
  if (!g.graph || !g.adj || !g.states.valid()) throw ContractError(std::string("encode_bundle: missing ") + which + " graph");
  if (g.states.shape()[0] != g.graph->num_nodes()) throw ContractError(std::string("encode_bundle: ") + which + " state rows do not match nodes");
  if (g.graph->count(NodeKind::Response) != n_responses) {
    throw ContractError(std::string("encode_bundle: ") + which + " graph lacks the response correspondence");
  }
  for (std::size_t i = 0; i < n_responses; ++i) {
    const GraphNode& n = g.graph->nodes()[i];
    if (n.kind != NodeKind::Response || n.response != i) {
      throw ContractError(std::string("encode_bundle: ") + which + " graph does not map response " + std::to_string(i) +
                          " to node " + std::to_string(i));
    }
  }
}

}  // namespace

GraphReadouts BundleEncoder::encode(Tape& t, const ParamStore& store, std::size_t n_responses, const GraphInputs& c,
                                    const GraphInputs& a, const GraphInputs& d, Rng* dropout_rng) const {
  GraphReadouts out;
  std::optional<Var> refined_c, refined_a;
  if (opts_.use_c) {
    check_inputs(c, n_responses, "semantic");
    Var s = c_.forward(t, store, c.states, *c.adj, dropout_rng);
    out.c = global_row(c, s);
    refined_c = slice(s, 0, 0, n_responses);
  }
  if (opts_.use_a) {
    check_inputs(a, n_responses, "action");
    Var s = a_.forward(t, store, a.states, *a.adj, dropout_rng);
    out.a = global_row(a, s);
    refined_a = slice(s, 0, 0, n_responses);
  }
  if (opts_.use_d) {
    check_inputs(d, n_responses, "discourse");
    Var states = d.states;
    std::optional<Var> fused;
    if (refined_c && refined_a) {
      fused = opts_.fusion == Fusion::Mean ? scale(add(*refined_c, *refined_a), 0.5)
                                           : fuse_(t, store, concat({*refined_c, *refined_a}, 1));
    } else if (refined_c) {
      fused = refined_c;
    } else if (refined_a) {
      fused = refined_a;
    }
    if (fused) {
      const std::size_t N = d.graph->num_nodes();
      states = N > n_responses ? concat({*fused, slice(d.states, 0, n_responses, N)}, 0) : *fused;
    }
    Var s = d_.forward(t, store, states, *d.adj, dropout_rng);
    out.d = global_row(d, s);
  }
  return out;
}

}  // namespace convgrade
