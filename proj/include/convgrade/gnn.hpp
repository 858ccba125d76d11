#pragma once

#include <optional>
#include <string>
#include <vector>

#include "convgrade/hiergraph.hpp"
#include "convgrade/layers.hpp"

namespace convgrade {

struct GatConfig {
  std::size_t dim = 64;  // D_H
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_dim = 0;  // 0 means 4 * dim
  double slope = 0.2;
  double dropout = 0.0;  // training only

  std::size_t ffn_width() const noexcept { return ffn_dim ? ffn_dim : 4 * dim; }
  void validate() const;
};

/// Position-wise x + W2 relu(W1 x + b1) + b2.
class Ffn {
 public:
  Ffn() = default;
  Ffn(std::size_t dim, std::size_t hidden, ParamStore& store, Rng& rng, const std::string& name);
  Var forward(Tape& t, const ParamStore& store, Var states) const;

  const Linear& inner() const noexcept { return l1_; }
  const Linear& outer() const noexcept { return l2_; }

 private:
  Linear l1_, l2_;
};

/// Multi-head attention over in-neighbours with a residual connection, then the FFN.
///
/// Head h owns columns [h*dh, (h+1)*dh) of the shared projection W, which is
/// the same as one D x dh map per head. Attention parameters are (heads, 2*dh).
class GatLayer {
 public:
  GatLayer() = default;
  GatLayer(const GatConfig& cfg, ParamStore& store, Rng& rng, const std::string& name);

  /// Attention aggregate plus residual, before the FFN.
  Var attend(Tape& t, const ParamStore& store, Var states, const InAdjacency& adj) const;
  Var forward(Tape& t, const ParamStore& store, Var states, const InAdjacency& adj, Rng* dropout_rng = nullptr) const;

  ParamId projection() const noexcept { return w_; }
  ParamId attention() const noexcept { return a_; }
  const Ffn& ffn() const noexcept { return ffn_; }

 private:
  GatConfig cfg_;
  ParamId w_ = 0;
  ParamId a_ = 0;
  Ffn ffn_;
};

class GatStack {
 public:
  GatStack() = default;
  GatStack(const GatConfig& cfg, ParamStore& store, Rng& rng, const std::string& name);
  Var forward(Tape& t, const ParamStore& store, Var states, const InAdjacency& adj, Rng* dropout_rng = nullptr) const;
  const std::vector<GatLayer>& layers() const noexcept { return layers_; }

 private:
  std::vector<GatLayer> layers_;
};

enum class Fusion { Mean, ConcatProject };

/// Which graphs take part, and how refined response states enter the discourse graph.
struct BundleOptions {
  bool use_c = true;
  bool use_a = true;
  bool use_d = true;
  Fusion fusion = Fusion::Mean;
};

struct GraphInputs {
  const HeteroGraph* graph = nullptr;
  const InAdjacency* adj = nullptr;
  Var states;  // (N, D_H) initial states in node order
};

struct GraphReadouts {
  std::optional<Var> c, a, d;
};

/// Parameters of the three per-graph stacks and the optional fusion projection.
class BundleEncoder {
 public:
  BundleEncoder() = default;
  BundleEncoder(const GatConfig& cfg, const BundleOptions& opts, ParamStore& store, Rng& rng,
                const std::string& prefix = "gnn");

  const BundleOptions& options() const noexcept { return opts_; }

  /// Stage 1 runs the word and action graphs; stage 2 replaces the discourse
  /// graph's response rows with the fusion of their refined states (falling
  /// back to the initial rows when neither lower graph is enabled); stage 3
  /// runs the discourse graph. Readouts are the global-node rows.
  GraphReadouts encode(Tape& t, const ParamStore& store, std::size_t n_responses, const GraphInputs& c,
                       const GraphInputs& a, const GraphInputs& d, Rng* dropout_rng = nullptr) const;

 private:
  GatConfig cfg_;
  BundleOptions opts_;
  GatStack c_, a_, d_;
  Linear fuse_;
};

}  // namespace convgrade
