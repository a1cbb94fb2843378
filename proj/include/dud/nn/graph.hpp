#pragma once

#include <functional>
#include <vector>

#include "dud/nn/tensor.hpp"

namespace dud::nn {

/// Handle to a node of a Graph.
struct Var {
  int id = -1;
};

/// Reverse-mode tape. Nodes are appended in topological order by the ops in ops.hpp;
/// backward() walks them in reverse. A graph built with `record = false` keeps values
/// only and cannot be differentiated (inference mode).
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  explicit Graph(bool record = true) : record_(record) {}

  bool recording() const noexcept { return record_; }

  /// Leaf that never receives gradient.
  Var constant(Tensor value);
  /// Leaf bound to store[index]; backward() accumulates into its grad.
  Var parameter(ParameterStore& store, std::size_t index);
  /// Read-only binding for inference graphs; throws if this graph records.
  Var parameter(const ParameterStore& store, std::size_t index);

  /// Append an op result. `parents` decide whether the node requires grad.
  Var push(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  /// Gradient buffer of a node, allocated (zeroed) on first access.
  Tensor& grad(Var v);
  Tensor& grad(int id) { return grad(Var{id}); }
  const Tensor& value(int id) const { return nodes_.at(id).value; }

  /// Seeds d(root)/d(root) = 1 for a scalar root, then propagates.
  void backward(Var root);
  /// Seeds with an explicit upstream gradient of root's shape.
  void backward(Var root, const Tensor& seed);

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  void run_backward(int root);

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace dud::nn
