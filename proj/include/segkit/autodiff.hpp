#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape records every op applied to Vars created from it. Vars are cheap
// handles (tape pointer + node index). Parameters live outside the tape and
// are bound per tape; their gradients accumulate directly into
// Parameter::grad. A tape built with record = false computes values only.

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "segkit/tensor.hpp"

namespace segkit {

template <typename T>
class Tape;

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool decay = true;  // subject to weight decay
};

// Owns a model's parameters in registration order.
template <typename T>
class ParameterSet {
 public:
  using Id = std::size_t;

  Id add(std::string name, Tensor<T> value, bool decay = true) {
    Parameter<T> p{std::move(name), std::move(value), {}, decay};
    p.grad = Tensor<T>(p.value.shape());
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  Parameter<T>& operator[](Id id) { return params_[id]; }
  const Parameter<T>& operator[](Id id) const { return params_[id]; }
  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>(), p.decay);
    return out;
  }

 private:
  std::vector<Parameter<T>> params_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) { return push_leaf(std::move(value), false); }
  // Leaf whose gradient is kept on the tape.
  Var<T> variable(Tensor<T> value) { return push_leaf(std::move(value), record_); }
  // Leaf aliasing a parameter; repeated binds of one parameter share a node.
  Var<T> parameter(Parameter<T>& p);

  const Tensor<T>& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.external != nullptr ? *n.external : n.owned;
  }

  // Gradient of a node after backward(); null when nothing flowed into it.
  const Tensor<T>* grad(std::uint32_t id) const;

  bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }

  // Adds into the gradient buffer of `id`, allocating zeros on first use.
  Tensor<T>& grad_buffer(std::uint32_t id);

  // Records an op result. `backward` runs only when some input needs grad.
  Var<T> push(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);
  Var<T> push(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule in
  // reverse order. The tape's rules are released afterwards.
  void backward(Var<T> loss);

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Tensor<T>* sink = nullptr;
    bool needs_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  Var<T> push_leaf(Tensor<T> value, bool needs_grad);
  template <typename Range>
  Var<T> push_impl(Tensor<T> value, const Range& inputs, BackwardFn backward);

  bool record_;
  bool consumed_ = false;
  std::deque<Node> nodes_;  // stable addresses: value() references survive later pushes
  std::unordered_map<const Parameter<T>*, std::uint32_t> bound_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace segkit
