#pragma once

// Reverse-mode autodiff over a recorded graph.
//
// A Graph<T> owns every intermediate produced while it is alive. Nodes are
// appended in creation order, which is already a topological order, so
// backward() just walks them in reverse. Ops are free functions in ops.hpp.

#include <functional>
#include <string>
#include <vector>

#include "yolod/tensor.hpp"

namespace yolod {

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Learnable tensor with its accumulated gradient.
template <typename T>
struct BasicParameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool decay = true;  // subject to weight decay

  BasicParameter() = default;
  BasicParameter(std::string n, BasicTensor<T> v, bool d = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), decay(d) {}
  void zero_grad() { grad = BasicTensor<T>(value.shape()); }
};

using Parameter = BasicParameter<float>;

template <typename T>
class Graph {
 public:
  using TensorT = BasicTensor<T>;
  using BackwardFn = std::function<void(Graph&, Var self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf without gradient.
  Var constant(TensorT value);
  // Leaf whose gradient is kept (for gradient checks on inputs).
  Var input(TensorT value);
  // Leaf bound to a parameter; backward() accumulates into param.grad.
  Var parameter(BasicParameter<T>& param);

  // Records an op output. `weighted` marks layers counted by path depth.
  Var record(std::string op, TensorT value, std::vector<Var> inputs, BackwardFn backward, bool weighted = false);

  const TensorT& value(Var v) const;
  // Gradient of the last backward() target w.r.t. v (zeros if unreached).
  const TensorT& grad(Var v) const;
  // Mutable gradient buffer, allocated on first use. Ops call this from their
  // backward closures.
  TensorT& grad_buffer(Var v);
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }
  const std::string& op_name(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).op; }

  // Scalar value accumulated in double by reductions; falls back to value(v)[0].
  double scalar(Var v) const;
  void set_precise_scalar(Var v, double s);

  // Seeds d(target)/d(target) = 1 (target must hold one element).
  void backward(Var target);
  // Seeds an arbitrary upstream gradient of the same shape as target.
  void backward(Var target, const TensorT& seed);

  // Weighted-layer depth along data paths. Leaves start at 0; parameters do
  // not contribute. mark_source() resets a node to depth 0 so depth can be
  // measured from a chosen frontier (e.g. backbone outputs).
  int depth(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).depth; }
  void mark_source(Var v) { nodes_.at(static_cast<std::size_t>(v.id)).depth = 0; }

  // When enabled (default), record() rejects non-finite op outputs.
  void set_check_finite(bool on) { check_finite_ = on; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::string op;
    TensorT value;
    TensorT grad;
    std::vector<Var> inputs;
    BackwardFn backward;
    BasicParameter<T>* param = nullptr;
    bool requires_grad = false;
    bool has_precise = false;
    double precise = 0.0;
    int depth = 0;
  };

  Node& node(Var v);
  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool check_finite_ = true;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace yolod
