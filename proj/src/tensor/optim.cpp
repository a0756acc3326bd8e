#include "segkit/optim.hpp"

#include <cmath>

namespace segkit {

template <typename T>
void AdamW<T>::step(ParameterSet<T>& params, double lr) {
  if (m_.empty() && params.size() > 0) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    }
  }
  if (m_.size() != params.size()) {
    throw ShapeError("adamw: optimizer state has " + std::to_string(m_.size()) +
                     " tensors, parameter set has " + std::to_string(params.size()));
  }
  ++step_;
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T eps = static_cast<T>(config_.eps);
  const T wd = static_cast<T>(config_.weight_decay);
  const T rate = static_cast<T>(lr);
  const T c1 = T(1) - static_cast<T>(std::pow(config_.beta1, static_cast<double>(step_)));
  const T c2 = T(1) - static_cast<T>(std::pow(config_.beta2, static_cast<double>(step_)));
  std::size_t i = 0;
  for (auto& p : params) {
    Tensor<T>& m = m_[i];
    Tensor<T>& v = v_[i];
    ++i;
    if (m.shape() != p.value.shape() || p.grad.shape() != p.value.shape()) {
      throw ShapeError("adamw: parameter " + p.name + " has shape " + to_string(p.value.shape()) +
                       " but state/grad shape " + to_string(m.shape()) + "/" + to_string(p.grad.shape()));
    }
    const bool decay = p.decay && wd != T(0);
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T g = p.grad[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      const T m_hat = m[j] / c1;
      const T v_hat = v[j] / c2;
      T update = m_hat / (std::sqrt(v_hat) + eps);
      if (decay) update += wd * p.value[j];
      p.value[j] -= rate * update;
    }
  }
}

double lr_schedule(std::int64_t step, double base_lr, std::int64_t warmup_steps,
                   std::int64_t total_steps, bool linear_decay) {
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  if (!linear_decay || total_steps <= warmup_steps) return base_lr;
  if (step >= total_steps) return 0.0;
  return base_lr * static_cast<double>(total_steps - step) /
         static_cast<double>(total_steps - warmup_steps);
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace segkit
