#pragma once

#include <cstdint>
#include <vector>

#include "segkit/autodiff.hpp"

namespace segkit {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.01;
};

// AdamW with bias-corrected moments. Weight decay is added to the update
// (not the gradient) and only for parameters whose `decay` flag is set.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  const AdamWConfig& config() const { return config_; }
  std::int64_t steps() const { return step_; }

  // Applies one update from the gradients stored in `params`. Moment buffers
  // are created on the first call; later calls require identical shapes.
  void step(ParameterSet<T>& params, double lr);

  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

 private:
  AdamWConfig config_;
  std::int64_t step_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

// Linear warmup from 0 to base_lr, then (when linear_decay) linear decay to 0
// at total_steps; otherwise constant after warmup.
double lr_schedule(std::int64_t step, double base_lr, std::int64_t warmup_steps,
                   std::int64_t total_steps, bool linear_decay = true);

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace segkit
