#include "segkit/autodiff.hpp"

#include <sstream>

namespace segkit {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

template <typename T>
Var<T> Tape<T>::push_leaf(Tensor<T> value, bool needs_grad) {
  Node n;
  n.owned = std::move(value);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var<T>(this, it->second);
  Node n;
  n.external = &p.value;
  n.needs_grad = record_;
  n.sink = &p.grad;
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  bound_.emplace(&p, id);
  return Var<T>(this, id);
}

template <typename T>
const Tensor<T>* Tape<T>::grad(std::uint32_t id) const {
  const Node& n = nodes_[id];
  if (n.sink != nullptr) return n.sink;
  return n.has_grad ? &n.grad : nullptr;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.sink != nullptr) return *n.sink;
  if (!n.has_grad) {
    n.grad = Tensor<T>(value(id).shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
template <typename Range>
Var<T> Tape<T>::push_impl(Tensor<T> value, const Range& inputs, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  if (record_) {
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw InvalidArgument("op mixes Vars from different tapes");
      if (nodes_[in.id()].needs_grad) n.needs_grad = true;
    }
    if (n.needs_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
  return push_impl(std::move(value), inputs, std::move(backward));
}

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
  return push_impl(std::move(value), inputs, std::move(backward));
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) throw InvalidArgument("backward: loss belongs to another tape");
  if (!record_) throw InvalidArgument("backward: tape was created without recording");
  if (consumed_) throw InvalidArgument("backward: tape already consumed");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id()].needs_grad) return;
  grad_buffer(loss.id())[0] += T(1);
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward) continue;
    if (n.has_grad) n.backward(*this, static_cast<std::uint32_t>(i));
    n.backward = nullptr;
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace segkit
