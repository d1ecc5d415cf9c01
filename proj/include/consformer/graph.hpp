#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "consformer/tensor.hpp"

namespace cf {

// Named parameters, each paired with a same-shaped gradient buffer.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
  };

  // Adds a parameter; throws ContractError if the name exists.
  Tensor& add(const std::string& name, Tensor value);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& value(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& grad(const std::string& name) const;
  Tensor& grad(const std::string& name);
  Entry& entry(const std::string& name);

  void zero_grad();
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;
  std::vector<std::string> names() const;

  // Name-ordered iteration; ordering is stable and used by checkpoints.
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::map<std::string, Entry> entries_;
};

class Graph;

// Handle to one value recorded on a Graph tape.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Backward hooks that tests can corrupt to check that gradient checking
// catches a broken rule.
enum class Fault {
  kNone,
  kBilinearWeight,  // pair-score gradient w.r.t. the bilinear matrix
  kLayerNormGain,
};

// Reverse-mode tape. Single writer: one forward/backward at a time.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a ParamStore entry. Repeated calls return the same node.
  Var param(ParamStore& store, const std::string& name);

  // Records an op output. The node needs a gradient when any parent does.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Gradient buffer of a parent, or nullptr when it needs none.
  Tensor* grad_buffer(std::size_t id);

  // Seeds d(loss)/d(loss) = 1, replays the tape, and adds leaf gradients into
  // the bound ParamStore entries. Throws ContractError unless loss is a scalar.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  void set_fault(Fault fault) { fault_ = fault; }
  Fault fault() const { return fault_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool grad_ready = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    ParamStore::Entry* param = nullptr;
  };

  // deque keeps value()/grad() references valid while the graph grows.
  std::deque<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  Fault fault_ = Fault::kNone;
};

}  // namespace cf
