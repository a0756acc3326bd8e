#pragma once

// Central-difference gradient checks in double precision.

#include <functional>
#include <iosfwd>
#include <vector>

#include "segkit/autodiff.hpp"
#include "segkit/rng.hpp"

namespace segkit {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using GradFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Error per coordinate is |a - n| / max(1e-8, |a| + |n|). When `report` is
// set, one line per coordinate is written to it.
GradCheckResult grad_check(const GradFn& fn, std::vector<Tensor<double>> inputs, double h = 1e-5,
                           std::ostream* report = nullptr);

// Checks a sampled fraction of the scalars in `params` (at least one per
// tensor). `loss` must build a fresh forward pass on the given tape.
GradCheckResult grad_check_params(const std::function<Var<double>(Tape<double>&)>& loss,
                                  ParameterSet<double>& params, double fraction, Rng& rng,
                                  double h = 1e-5, std::ostream* report = nullptr);

}  // namespace segkit
