#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "hmcam/tensor.hpp"

namespace hmcam::ag {

using NodeId = std::size_t;

class Graph;

/// Handle to a node recorded on a Graph.
class Var {
 public:
  Var(Graph* graph, NodeId id) : graph_(graph), id_(id) {}

  NodeId id() const { return id_; }
  Graph& graph() const { return *graph_; }
  const Tensor& value() const;
  bool requires_grad() const;

 private:
  Graph* graph_;
  NodeId id_;
};

/// Computes parent gradients from the gradient flowing into a node.
/// `wanted[i]` is false for parents that need no gradient; their slot may be left empty.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<const bool> wanted,
                                      std::span<std::optional<Tensor>> parent_grads)>;

/// Gradients of a scalar root with respect to every gradient-requiring leaf.
class Gradients {
 public:
  const Tensor& of(const Var& leaf) const;
  bool contains(const Var& leaf) const { return grads_.contains(leaf.id()); }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Graph;
  std::unordered_map<NodeId, Tensor> grads_;
};

/// Append-only tape of tensor operations.
///
/// Nodes can only reference earlier nodes, so ids are a topological order
/// and the record graph is acyclic by construction.
class Graph {
 public:
  Graph() = default;
  // Backward closures refer to the graph by address.
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var record(Tensor value, std::vector<NodeId> parents, BackwardFn backward);

  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse-mode sweep from a scalar root. Does not modify the graph, so
  /// repeated calls return identical results. Leaves off every path to the
  /// root receive zero gradients.
  Gradients backward(const Var& root) const;

 private:
  struct Node {
    Tensor value;
    std::vector<NodeId> parents;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = true;
  };
  std::vector<Node> nodes_;
};

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var square(const Var& a);
Var sqrt(const Var& a);
/// Piecewise-constant; propagates zero gradient.
Var sign(const Var& a);
/// Subgradient at 0 is 0.
Var relu(const Var& a);
Var add_row_vector(const Var& a, const Var& bias);
Var sum(const Var& a);
Var abs_sum(const Var& a);
/// Sum over rows of softmax cross-entropy; gradient is softmax(logits) - onehot.
Var softmax_cross_entropy(const Var& logits, const Tensor& onehot);

}  // namespace hmcam::ag
