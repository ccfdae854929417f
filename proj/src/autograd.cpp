#include "hmcam/autograd.hpp"

#include <algorithm>
#include <memory>

#include "hmcam/errors.hpp"

namespace hmcam::ag {

namespace {

void same_graph(const Var& a, const Var& b) {
  if (&a.graph() != &b.graph()) throw ContractError("autograd: operands live on different graphs");
}

}  // namespace

const Tensor& Var::value() const { return graph_->value(id_); }
bool Var::requires_grad() const { return graph_->requires_grad(id_); }

const Tensor& Gradients::of(const Var& leaf) const {
  auto it = grads_.find(leaf.id());
  if (it == grads_.end()) throw ContractError("Gradients::of: node is not a gradient-requiring leaf");
  return it->second;
}

Var Graph::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, {}, requires_grad, true});
  return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::vector<NodeId> parents, BackwardFn backward) {
  bool needs = false;
  for (NodeId p : parents) {
    if (p >= nodes_.size()) throw ContractError("Graph::record: unknown parent");
    needs = needs || nodes_[p].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), needs, false});
  return Var(this, nodes_.size() - 1);
}

Gradients Graph::backward(const Var& root) const {
  if (&root.graph() != this) throw ContractError("Graph::backward: root belongs to another graph");
  if (!root.value().is_scalar()) {
    throw ContractError("Graph::backward: root must be scalar, got " + shape_to_string(root.value().shape()));
  }
  const NodeId top = root.id();
  std::vector<char> reachable(top + 1, 0);
  reachable[top] = 1;
  for (NodeId id = top + 1; id-- > 0;) {
    if (!reachable[id]) continue;
    for (NodeId p : nodes_[id].parents) reachable[p] = 1;
  }

  std::vector<std::optional<Tensor>> grads(top + 1);
  grads[top] = Tensor(root.value().shape(), {1.0});
  for (NodeId id = top + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (!reachable[id] || node.is_leaf || !node.requires_grad || !grads[id]) continue;
    const std::size_t np = node.parents.size();
    // std::vector<bool> is bit-packed and cannot back a span.
    std::unique_ptr<bool[]> flags(new bool[np]);
    for (std::size_t i = 0; i < np; ++i) flags[i] = nodes_[node.parents[i]].requires_grad;
    std::vector<std::optional<Tensor>> parent_grads(np);
    node.backward(*grads[id], std::span<const bool>(flags.get(), np), parent_grads);
    for (std::size_t i = 0; i < np; ++i) {
      if (!flags[i] || !parent_grads[i]) continue;
      auto& slot = grads[node.parents[i]];
      slot = slot ? add(*slot, *parent_grads[i]) : std::move(*parent_grads[i]);
    }
  }

  Gradients out;
  for (NodeId id = 0; id <= top; ++id) {
    const Node& node = nodes_[id];
    if (!node.is_leaf || !node.requires_grad) continue;
    out.grads_.emplace(id, grads[id] ? *grads[id] : Tensor::zeros_like(node.value));
  }
  // Leaves created after the root cannot lie on a path to it.
  for (NodeId id = top + 1; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (node.is_leaf && node.requires_grad) out.grads_.emplace(id, Tensor::zeros_like(node.value));
  }
  return out;
}

Var matmul(const Var& a, const Var& b) {
  same_graph(a, b);
  const Graph* graph = &a.graph();
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record(
      hmcam::matmul(a.value(), b.value()), {ia, ib},
      [graph, ia, ib](const Tensor& g, std::span<const bool> wanted, std::span<std::optional<Tensor>> out) {
        if (wanted[0]) out[0] = hmcam::matmul(g, transpose(graph->value(ib)));
        if (wanted[1]) out[1] = hmcam::matmul(transpose(graph->value(ia)), g);
      });
}

Var add(const Var& a, const Var& b) {
  same_graph(a, b);
  return a.graph().record(
      hmcam::add(a.value(), b.value()), {a.id(), b.id()},
      [](const Tensor& g, std::span<const bool>, std::span<std::optional<Tensor>> out) {
        out[0] = g;
        out[1] = g;
      });
}

Var sub(const Var& a, const Var& b) {
  same_graph(a, b);
  return a.graph().record(
      hmcam::sub(a.value(), b.value()), {a.id(), b.id()},
      [](const Tensor& g, std::span<const bool> wanted, std::span<std::optional<Tensor>> out) {
        out[0] = g;
        if (wanted[1]) out[1] = hmcam::scale(g, -1.0);
      });
}

Var mul(const Var& a, const Var& b) {
  same_graph(a, b);
  const Graph* graph = &a.graph();
  const NodeId ia = a.id(), ib = b.id();
  return a.graph().record(
      hmcam::mul(a.value(), b.value()), {ia, ib},
      [graph, ia, ib](const Tensor& g, std::span<const bool> wanted, std::span<std::optional<Tensor>> out) {
        if (wanted[0]) out[0] = hmcam::mul(g, graph->value(ib));
        if (wanted[1]) out[1] = hmcam::mul(g, graph->value(ia));
      });
}

Var scale(const Var& a, double factor) {
  return a.graph().record(
      hmcam::scale(a.value(), factor), {a.id()},
      [factor](const Tensor& g, std::span<const bool>, std::span<std::optional<Tensor>> out) {
        out[0] = hmcam::scale(g, factor);
      });
}

Var square(const Var& a) {
  const Graph* graph = &a.graph();
  const NodeId ia = a.id();
  return a.graph().record(
      hmcam::square(a.value()), {ia},
      [graph, ia](const Tensor& g, std::span<const bool>, std::span<std::optional<Tensor>> out) {
        out[0] = hmcam::mul(g, hmcam::scale(graph->value(ia), 2.0));
      });
}

Var sqrt(const Var& a) {
  Tensor root = hmcam::sqrt(a.value());
  return a.graph().record(
      root, {a.id()}, [root](const Tensor& g, std::span<const bool>, std::span<std::optional<Tensor>> out) {
        std::vector<double> d(g.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
          if (root[i] == 0.0) throw DomainError("sqrt: gradient undefined at 0");
          d[i] = g[i] * 0.5 / root[i];
        }
        out[0] = Tensor(g.shape(), std::move(d));
      });
}

Var sign(const Var& a) {
  return a.graph().record(
      hmcam::sign(a.value()), {a.id()},
      [](const Tensor& g, std::span<const bool>, std::span<std::optional<Tensor>> out) {
        out[0] = Tensor::zeros_like(g);
      });
}

Var relu(const Var& a) {
  const Graph* graph = &a.graph();
  const NodeId ia = a.id();
  return a.graph().record(
      hmcam::relu(a.value()), {ia},
      [graph, ia](const Tensor& g, std::span<const bool>, std::span<std::optional<Tensor>> out) {
        const Tensor& av = graph->value(ia);
        std::vector<double> d(g.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = av[i] > 0.0 ? g[i] : 0.0;
        out[0] = Tensor(g.shape(), std::move(d));
      });
}

Var add_row_vector(const Var& a, const Var& bias) {
  same_graph(a, bias);
  return a.graph().record(
      hmcam::add_row_vector(a.value(), bias.value()), {a.id(), bias.id()},
      [](const Tensor& g, std::span<const bool> wanted, std::span<std::optional<Tensor>> out) {
        out[0] = g;
        if (wanted[1]) {
          const std::size_t n = g.cols();
          std::vector<double> db(n, 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) db[i % n] += g[i];
          out[1] = Tensor::vector(std::move(db));
        }
      });
}

Var sum(const Var& a) {
  Tensor::Shape shape = a.value().shape();
  return a.graph().record(
      hmcam::sum(a.value()), {a.id()},
      [shape](const Tensor& g, std::span<const bool>, std::span<std::optional<Tensor>> out) {
        out[0] = Tensor::full(shape, g.item());
      });
}

Var abs_sum(const Var& a) {
  Tensor s = hmcam::sign(a.value());
  return a.graph().record(
      hmcam::abs_sum(a.value()), {a.id()},
      [s](const Tensor& g, std::span<const bool>, std::span<std::optional<Tensor>> out) {
        out[0] = hmcam::scale(s, g.item());
      });
}

Var softmax_cross_entropy(const Var& logits, const Tensor& onehot) {
  Tensor loss = hmcam::softmax_cross_entropy(logits.value(), onehot);
  Tensor residual = hmcam::sub(hmcam::softmax(logits.value()), onehot);
  return logits.graph().record(
      std::move(loss), {logits.id()},
      [residual](const Tensor& g, std::span<const bool>, std::span<std::optional<Tensor>> out) {
        out[0] = g.item() == 1.0 ? residual : hmcam::scale(residual, g.item());
      });
}

}  // namespace hmcam::ag
