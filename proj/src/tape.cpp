#include <string>

#include "convgrade/autodiff.hpp"

namespace convgrade {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("value() on an unbound Var");
  return tape_->value(id_);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor t) {
  Node n;
  n.owned = std::move(t);
  return push(std::move(n));
}

Var Tape::variable(Tensor t) {
  Node n;
  n.owned = std::move(t);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::param(const ParamStore& store, ParamId id) {
  if (store_ && store_ != &store) throw ContractError("a tape can bind parameters from one store only");
  store_ = &store;
  if (auto it = bound_.find(id); it != bound_.end()) return Var(this, it->second);
  Node n;
  n.ref = &store.value(id);
  n.requires_grad = true;
  n.param = static_cast<std::ptrdiff_t>(id);
  Var v = push(std::move(n));
  bound_.emplace(id, v.id());
  return v;
}

Var Tape::param(const ParamStore& store, std::string_view name) { return param(store, store.id(name)); }

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Tensor out, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  bool inputs_finite = true;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw ContractError("op mixes Vars from different tapes");
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
    if (check_finite_) inputs_finite = inputs_finite && value(in.id_).all_finite();
  }
  if (check_finite_ && inputs_finite && !out.all_finite()) {
    throw NumericError("non-finite output from finite inputs at tape node " + std::to_string(nodes_.size()));
  }
  n.owned = std::move(out);
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.ref ? *n.ref : n.owned;
}

Tensor* Tape::grad_sink(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor::zeros_like(value(id));
  return &n.grad;
}

void Tape::backward(Var loss, double seed) {
  if (loss.tape_ != this) throw ContractError("backward() on a Var from another tape");
  if (value(loss.id_).size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(value(loss.id_).shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id_].requires_grad) return;
  Tensor* g = grad_sink(loss.id_);
  (*g)[0] = seed;
  for (std::size_t k = loss.id_ + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id_];
  if (n.grad.empty()) return Tensor::zeros_like(value(v.id_));
  return n.grad;
}

void Tape::accumulate_param_grads(Gradients& out, double scale) const {
  for (const auto& [pid, node_id] : bound_) {
    const Node& n = nodes_[node_id];
    if (n.grad.empty()) continue;
    out[pid].axpy(scale, n.grad);
  }
}

}  // namespace convgrade
