#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "convgrade/params.hpp"
#include "convgrade/tensor.hpp"

namespace convgrade {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records forward operations in topological order and replays them backwards.
///
/// Nodes are appended as operations execute, so the node vector is already a
/// topological order; backward() walks it once in reverse. Parameters are bound
/// by reference to a ParamStore and never copied.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t);
  /// Leaf that requires a gradient but is not a stored parameter.
  Var variable(Tensor t);
  Var param(const ParamStore& store, ParamId id);
  Var param(const ParamStore& store, std::string_view name);

  /// Appends an op node. `fn` receives the gradient w.r.t. the output and must
  /// push gradients into its inputs through grad_sink().
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient accumulator for node `id`, or nullptr when no gradient is needed.
  Tensor* grad_sink(std::size_t id);

  /// Reverse sweep from a scalar loss. `seed` multiplies the loss gradient.
  void backward(Var loss, double seed = 1.0);

  /// Gradient of the last backward() w.r.t. `v`; zeros when `v` was not reached.
  Tensor grad(Var v) const;
  /// out[param] += scale * d loss / d param, for every bound parameter.
  void accumulate_param_grads(Gradients& out, double scale = 1.0) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor grad;
    bool requires_grad = false;
    std::ptrdiff_t param = -1;
    BackwardFn backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  const ParamStore* store_ = nullptr;
  std::unordered_map<ParamId, std::size_t> bound_;
#ifdef NDEBUG
  bool check_finite_ = false;
#else
  bool check_finite_ = true;
#endif
};

/// Incoming-edge lists in CSR form: sources of node i are
/// sources[offsets[i] .. offsets[i+1]).
struct InAdjacency {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> sources;

  std::size_t num_nodes() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::span<const std::size_t> in(std::size_t i) const {
    return {sources.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
};

/// Weights of one LSTM direction: input map (In x 4H), recurrent map (H x 4H),
/// bias (4H). Gate column order is input, forget, cell, output.
struct LstmWeights {
  Var input;
  Var recurrent;
  Var bias;
};

// ---- forward primitives --------------------------------------------------

/// (n)x(n,k) -> (k); (m,n)x(n,k) -> (m,k)
Var matmul(Var a, Var b);
/// Elementwise sum; a rank-1 `b` of length cols(a) broadcasts over rows.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
Var tanh(Var a);
Var sigmoid(Var a);
Var softmax(Var a, std::size_t axis);
/// Mean along `axis`; drops that axis.
Var mean(Var a, std::size_t axis);
/// Sum of all elements, as a scalar.
Var sum(Var a);
Var square(Var a);
/// Half-open range [begin, end) along `axis`.
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
Var reshape(Var a, Shape shape);
/// Rows of `table` selected by `ids`; shape (|ids|, cols(table)).
Var embedding_lookup(Var table, std::span<const std::size_t> ids);
/// Places `a` at rows [offset, offset+rows(a)) of a zero (total, cols) matrix.
Var pad_rows(Var a, std::size_t offset, std::size_t total);
/// Column-wise max over rows: (T,C) -> (C).
Var max_rows(Var a);
/// Same-padded 1-D convolution over rows of x (T, In). Kernel k has shape
/// (width_k * In, F_k) and bias (F_k). Output (T, sum F_k), widths concatenated.
Var conv1d(Var x, std::span<const Var> kernels, std::span<const Var> biases, std::span<const std::size_t> widths);
/// Bidirectional LSTM over rows of x (T, In): (T, 2H), forward states first.
Var bilstm(Var x, const LstmWeights& fwd, const LstmWeights& bwd);
/// Multi-head attention aggregation over incoming edges.
///
/// `projected` is (N, D) with head h owning columns [h*dh, (h+1)*dh);
/// `attn` is (heads, 2*dh). For target i and source j the logit is
/// leaky_relu(attn[h, :dh] . p_i + attn[h, dh:] . p_j), normalised by softmax
/// over the in-neighbours of i; the output row is the weighted sum of p_j.
/// Nodes without in-edges get a zero row.
Var graph_attention(Var projected, Var attn, const InAdjacency& adj, double slope);
/// Inverted dropout; identity when rate == 0.
Var dropout(Var a, double rate, Rng& rng);

/// Attention coefficients computed by graph_attention for the given inputs,
/// indexed [head][edge position in adj.sources]. Forward-only helper.
std::vector<std::vector<double>> attention_weights(const Tensor& projected, const Tensor& attn, const InAdjacency& adj,
                                                   double slope);

}  // namespace convgrade
