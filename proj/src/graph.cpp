#include "consformer/graph.hpp"

#include "consformer/errors.hpp"

namespace cf {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (entries_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  Tensor grad(value.shape());
  auto [it, _] = entries_.emplace(name, Entry{std::move(value), std::move(grad)});
  return it->second.value;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw IndexError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw IndexError("unknown parameter '" + name + "'");
  return it->second.value;
}

Tensor& ParamStore::value(const std::string& name) { return entry(name).value; }

const Tensor& ParamStore::grad(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw IndexError("unknown parameter '" + name + "'");
  return it->second.grad;
}

Tensor& ParamStore::grad(const std::string& name) { return entry(name).grad; }

void ParamStore::zero_grad() {
  for (auto& [_, e] : entries_) e.grad.fill(0.0);
}

std::size_t ParamStore::numel() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.value.size();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::param(ParamStore& store, const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return Var{this, it->second};
  ParamStore::Entry& entry = store.entry(name);
  Node node;
  node.value = entry.value;
  node.needs_grad = true;
  node.param = &entry;
  nodes_.push_back(std::move(node));
  param_ids_.emplace(name, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (std::size_t p : parents) node.needs_grad = node.needs_grad || nodes_[p].needs_grad;
  node.parents = std::move(parents);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor* Graph::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.needs_grad) return nullptr;
  if (!node.grad_ready) {
    node.grad = Tensor(node.value.shape());
    node.grad_ready = true;
  }
  return &node.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw ContractError("backward: loss recorded on another graph");
  const Node& root = nodes_[loss.id];
  if (root.value.size() != 1 || root.value.rank() > 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + root.value.shape().str());
  }
  if (!root.needs_grad) return;
  grad_buffer(loss.id)->fill(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || !node.grad_ready) continue;
    if (node.backward) node.backward(*this, i);
    if (node.param != nullptr) node.param->grad.accumulate(node.grad);
  }
}

}  // namespace cf
