#include "yolod/graph.hpp"

#include <algorithm>

#include "yolod/errors.hpp"

namespace yolod {

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw std::out_of_range("invalid graph variable");
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw std::out_of_range("invalid graph variable");
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
Var Graph<T>::constant(TensorT value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::input(TensorT value) {
  Var v = constant(std::move(value));
  node(v).op = "input";
  node(v).requires_grad = true;
  return v;
}

template <typename T>
Var Graph<T>::parameter(BasicParameter<T>& param) {
  if (param.grad.shape() != param.value.shape()) param.zero_grad();
  Node n;
  n.op = "parameter";
  n.param = &param;
  n.requires_grad = true;
  n.depth = -1;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::record(std::string op, TensorT value, std::vector<Var> inputs, BackwardFn backward, bool weighted) {
  if (check_finite_ && !value.all_finite()) {
    throw NumericError("op '" + op + "' produced non-finite values (shape " + to_string(value.shape()) + ")");
  }
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  int depth = -1;
  for (Var in : inputs) {
    const Node& src = node(in);
    n.requires_grad = n.requires_grad || src.requires_grad;
    depth = std::max(depth, src.depth);
  }
  n.depth = depth < 0 ? -1 : depth + (weighted ? 1 : 0);
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const typename Graph<T>::TensorT& Graph<T>::value(Var v) const {
  const Node& n = node(v);
  return n.param ? n.param->value : n.value;
}

template <typename T>
const typename Graph<T>::TensorT& Graph<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.param) return n.param->grad;
  if (n.grad.shape() != value(v).shape()) {
    static thread_local TensorT empty;
    empty = TensorT(value(v).shape());
    return empty;
  }
  return n.grad;
}

template <typename T>
typename Graph<T>::TensorT& Graph<T>::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.param) return n.param->grad;
  if (n.grad.shape() != n.value.shape()) n.grad = TensorT(n.value.shape());
  return n.grad;
}

template <typename T>
double Graph<T>::scalar(Var v) const {
  const Node& n = node(v);
  if (n.has_precise) return n.precise;
  const TensorT& val = value(v);
  if (val.numel() != 1) throw ShapeError("scalar() on tensor of shape " + to_string(val.shape()));
  return static_cast<double>(val[0]);
}

template <typename T>
void Graph<T>::set_precise_scalar(Var v, double s) {
  Node& n = node(v);
  n.has_precise = true;
  n.precise = s;
}

template <typename T>
void Graph<T>::backward(Var target) {
  if (value(target).numel() != 1) {
    throw ShapeError("backward() needs a scalar target, got shape " + to_string(value(target).shape()));
  }
  TensorT seed(value(target).shape(), T(1));
  backward(target, seed);
}

template <typename T>
void Graph<T>::backward(Var target, const TensorT& seed) {
  if (seed.shape() != value(target).shape()) {
    throw ShapeError("backward seed shape " + to_string(seed.shape()) + " differs from target " +
                     to_string(value(target).shape()));
  }
  for (Node& n : nodes_) {
    if (!n.param) n.grad = TensorT();
  }
  grad_buffer(target) = seed;
  for (int id = target.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || !n.backward) continue;
    if (n.grad.shape() != n.value.shape()) continue;  // not reached
    n.backward(*this, Var{id});
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace yolod
