#include "segkit/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace segkit {
namespace {

double rel_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
}

void note(GradCheckResult& r, std::size_t input, std::size_t index, double analytic, double numeric,
          std::ostream* report) {
  const double err = rel_error(analytic, numeric);
  ++r.checked;
  if (report != nullptr) {
    *report << input << '\t' << index << '\t' << analytic << '\t' << numeric << '\t' << err << '\n';
  }
  if (err > r.max_rel_error || r.checked == 1) {
    r.max_rel_error = std::max(r.max_rel_error, err);
    r.worst_input = input;
    r.worst_index = index;
    r.worst_analytic = analytic;
    r.worst_numeric = numeric;
  }
}

double evaluate(const GradFn& fn, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape(false);
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return fn(tape, vars).value().item();
}

}  // namespace

GradCheckResult grad_check(const GradFn& fn, std::vector<Tensor<double>> inputs, double h,
                           std::ostream* report) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.variable(t));
    Var<double> loss = fn(tape, vars);
    tape.backward(loss);
    for (std::size_t i = 0; i < vars.size(); ++i) {
      const Tensor<double>* g = tape.grad(vars[i].id());
      analytic.push_back(g != nullptr ? *g : Tensor<double>(inputs[i].shape()));
    }
  }
  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double saved = inputs[i][j];
      inputs[i][j] = saved + h;
      const double up = evaluate(fn, inputs);
      inputs[i][j] = saved - h;
      const double down = evaluate(fn, inputs);
      inputs[i][j] = saved;
      note(result, i, j, analytic[i][j], (up - down) / (2.0 * h), report);
    }
  }
  return result;
}

GradCheckResult grad_check_params(const std::function<Var<double>(Tape<double>&)>& loss,
                                  ParameterSet<double>& params, double fraction, Rng& rng, double h,
                                  std::ostream* report) {
  params.zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  auto value_at = [&]() {
    Tape<double> tape(false);
    return loss(tape).value().item();
  };
  GradCheckResult result;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<double>& p = params[i];
    const std::size_t n = p.value.size();
    const std::size_t take = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * n)));
    std::vector<std::size_t> order(n);
    for (std::size_t j = 0; j < n; ++j) order[j] = j;
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t s = 0; s < std::min(take, n); ++s) {
      const std::size_t j = order[s];
      const double saved = p.value[j];
      p.value[j] = saved + h;
      const double up = value_at();
      p.value[j] = saved - h;
      const double down = value_at();
      p.value[j] = saved;
      note(result, i, j, p.grad[j], (up - down) / (2.0 * h), report);
    }
  }
  return result;
}

}  // namespace segkit
