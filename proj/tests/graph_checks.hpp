#pragma once

// Structural invariants of the three conversation graphs, recomputed from the
// raw edge lists. Each check returns an empty string or the first violation.

#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "convgrade/hiergraph.hpp"

namespace graph_checks {

using convgrade::HeteroGraph;
using convgrade::NodeKind;

struct Degrees {
  std::vector<std::size_t> in, out;
};

inline Degrees degrees(const HeteroGraph& g) {
  Degrees d{std::vector<std::size_t>(g.num_nodes(), 0), std::vector<std::size_t>(g.num_nodes(), 0)};
  for (const auto& e : g.edges()) {
    ++d.out[e.src];
    ++d.in[e.dst];
  }
  return d;
}

inline std::string basic(const HeteroGraph& g) {
  std::size_t globals = 0;
  for (const auto& n : g.nodes()) globals += n.kind == NodeKind::Global;
  if (globals != 1) return "expected one global node, found " + std::to_string(globals);
  const std::size_t G = g.global_node();
  std::set<std::tuple<std::size_t, std::size_t, int>> seen;
  std::vector<bool> feeds_global(g.num_nodes(), false);
  for (const auto& e : g.edges()) {
    if (e.src >= g.num_nodes() || e.dst >= g.num_nodes()) return "edge endpoint out of range";
    if (e.src == e.dst) return "self-loop on node " + std::to_string(e.src);
    if (!seen.insert({e.src, e.dst, static_cast<int>(e.kind)}).second) return "duplicate edge";
    if (e.src == G) return "global node has an outgoing edge";
    if (e.dst == G) feeds_global[e.src] = true;
  }
  for (std::size_t v = 0; v < g.num_nodes(); ++v)
    if (v != G && !feeds_global[v]) return "node " + std::to_string(v) + " has no edge to the global node";
  return {};
}

inline std::string semantic(const HeteroGraph& g) {
  if (auto b = basic(g); !b.empty()) return b;
  const std::size_t G = g.global_node();
  for (const auto& n : g.nodes()) {
    if (n.kind != NodeKind::Word && n.kind != NodeKind::Response && n.kind != NodeKind::Global)
      return "unexpected node kind in the word graph";
  }
  for (const auto& e : g.edges()) {
    if (e.dst == G) continue;
    const auto a = g.nodes()[e.src].kind, b = g.nodes()[e.dst].kind;
    const bool ok = (a == NodeKind::Word && b == NodeKind::Response) || (a == NodeKind::Response && b == NodeKind::Word);
    if (!ok) return "word graph edge is not between a word and a response";
  }
  return {};
}

inline std::string action(const HeteroGraph& g) {
  if (auto b = basic(g); !b.empty()) return b;
  const std::size_t G = g.global_node();
  const Degrees d = degrees(g);
  std::vector<std::size_t> to_intent(g.num_nodes(), 0), to_response(g.num_nodes(), 0);
  for (const auto& e : g.edges()) {
    if (e.dst == G) continue;
    const auto b = g.nodes()[e.dst].kind;
    if (b == NodeKind::Intent) ++to_intent[e.src];
    if (b == NodeKind::Response) ++to_response[e.src];
  }
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    const auto k = g.nodes()[v].kind;
    if (k == NodeKind::Word || k == NodeKind::Discourse) return "unexpected node kind in the action graph";
    if (k == NodeKind::Subject || k == NodeKind::Predicate || k == NodeKind::Object) {
      if (to_intent[v] != 1 || d.out[v] != 2) return "SPO node " + std::to_string(v) + " breaks the intent out-degree rule";
    }
    if (k == NodeKind::Intent) {
      if (to_response[v] != 1 || d.out[v] != 2) return "intent node " + std::to_string(v) + " does not reach exactly one response";
      if (d.in[v] != 3) return "intent node " + std::to_string(v) + " does not absorb three SPO nodes";
    }
  }
  return {};
}

inline std::string discourse(const HeteroGraph& g, std::size_t n_responses, std::size_t n_links) {
  if (auto b = basic(g); !b.empty()) return b;
  if (g.num_nodes() != n_responses + n_links + 1) {
    return "discourse graph has " + std::to_string(g.num_nodes()) + " nodes, expected " +
           std::to_string(n_responses + n_links + 1);
  }
  const std::size_t G = g.global_node();
  const Degrees d = degrees(g);
  std::vector<std::size_t> resp_in(g.num_nodes(), 0), resp_out(g.num_nodes(), 0);
  for (const auto& e : g.edges()) {
    if (e.dst == G) continue;
    if (g.nodes()[e.src].kind == NodeKind::Response) ++resp_in[e.dst];
    if (g.nodes()[e.dst].kind == NodeKind::Response) ++resp_out[e.src];
  }
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    const auto k = g.nodes()[v].kind;
    if (k != NodeKind::Response && k != NodeKind::Discourse && k != NodeKind::Global)
      return "unexpected node kind in the discourse graph";
    if (k == NodeKind::Discourse) {
      if (d.in[v] != 1 || d.out[v] != 2 || resp_in[v] != 1 || resp_out[v] != 1)
        return "discourse node " + std::to_string(v) + " breaks the Levi degree rule";
    }
  }
  return {};
}

}  // namespace graph_checks
