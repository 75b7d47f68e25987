#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kpn/tensor.hpp"

namespace kpn {

/// Parameter groups receive separate learning rates.
enum class ParamGroup { kHead, kBackbone };

/// A trainable tensor together with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  ParamGroup group = ParamGroup::kHead;
  /// Frozen parameters never receive optimizer updates.
  bool trainable = true;

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    grad.fill(T(0));
  }
};

/// Handle to a node recorded in a Graph.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so replaying
/// them backwards is a valid topological order.
template <typename T>
class Graph {
 public:
  /// Called with the graph and the id of the node being differentiated.
  using BackwardFn = std::function<void(Graph&, Var)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var parameter(Parameter<T>& p) {
    const bool rg = grad_enabled_ && p.trainable;
    nodes_.push_back(Node{p.value, {}, rg, {}, rg ? &p : nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  /// Records an op output. `fn` is kept only when some input needs a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
  }
  Var record(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool rg = false;
    if (grad_enabled_) {
      for (Var in : inputs) rg = rg || node(in).requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(fn) : BackwardFn{}, nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool has_grad(Var v) const { return !node(v).grad.empty(); }

  /// Gradient buffer of `v`, zero-initialised on first access.
  Tensor<T>& grad(Var v) {
    Node& nd = node(v);
    if (nd.grad.empty()) nd.grad = Tensor<T>(nd.value.shape());
    return nd.grad;
  }

  /// Back-propagates from a scalar node with seed 1 and accumulates into
  /// the bound Parameter::grad tensors.
  void backward(Var loss) {
    if (value(loss).size() != 1) throw std::invalid_argument("backward() needs a scalar output");
    Tensor<T> seed(value(loss).shape(), T(1));
    backward(loss, std::move(seed));
  }

  void backward(Var out, Tensor<T> seed) {
    if (!grad_enabled_) throw std::logic_error("backward() on a graph without gradients");
    if (seed.shape() != value(out).shape()) throw std::invalid_argument("seed shape mismatch");
    if (!requires_grad(out)) return;
    node(out).grad = std::move(seed);
    for (int i = out.id; i >= 0; --i) {
      Node& nd = nodes_[static_cast<std::size_t>(i)];
      if (!nd.requires_grad || nd.grad.empty()) continue;
      if (nd.backward) nd.backward(*this, Var{i});
      if (nd.param != nullptr) {
        Tensor<T>& pg = nd.param->grad;
        if (pg.shape() != nd.value.shape()) pg = Tensor<T>(nd.value.shape());
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += nd.grad[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Node& node(Var v) {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw std::out_of_range("invalid graph variable");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& node(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw std::out_of_range("invalid graph variable");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
};

}  // namespace kpn
