#include "dud/nn/graph.hpp"

#include <algorithm>

namespace dud::nn {

Var Graph::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, false, false, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::parameter(ParameterStore& store, std::size_t index) {
  Node node{store[index].value, {}, false, record_, {}};
  if (record_) {
    ParameterStore* owner = &store;
    node.backward = [owner, index](Graph& g, int self) {
      auto& dst = (*owner)[index].grad.data;
      const auto& src = g.grad(self).data;
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
  }
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::parameter(const ParameterStore& store, std::size_t index) {
  if (record_) throw Error("recording graph needs a mutable parameter store");
  return constant(store[index].value);
}

Var Graph::push(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  bool needs = false;
  if (record_) {
    needs = std::any_of(parents.begin(), parents.end(), [this](Var p) { return nodes_.at(p.id).requires_grad; });
  }
  nodes_.push_back({std::move(value), {}, false, needs, needs ? std::move(backward) : BackwardFn{}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tensor& Graph::grad(Var v) {
  Node& node = nodes_.at(v.id);
  if (!node.has_grad) {
    node.grad = Tensor(node.value.n, node.value.h, node.value.w, node.value.c);
    node.has_grad = true;
  }
  return node.grad;
}

void Graph::backward(Var root) {
  const Tensor& v = value(root);
  if (v.size() != 1) throw ShapeError("backward: root must be a scalar, got " + v.shape_string());
  grad(root).data[0] += 1.0f;
  run_backward(root.id);
}

void Graph::backward(Var root, const Tensor& seed) {
  require_same_shape(value(root), seed, "backward seed");
  auto& g = grad(root).data;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed.data[i];
  run_backward(root.id);
}

void Graph::run_backward(int root) {
  if (!record_) throw Error("backward called on a graph built without recording");
  for (int id = root; id >= 0; --id) {
    Node& node = nodes_[id];
    if (!node.requires_grad || !node.has_grad || !node.backward) continue;
    node.backward(*this, id);
  }
}

}  // namespace dud::nn
