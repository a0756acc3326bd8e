#include <doctest.h>

#include <cmath>

#include "segkit/optim.hpp"
#include "segkit/rng.hpp"

using namespace segkit;

TEST_CASE("lr schedule") {
  CHECK(lr_schedule(0, 5e-5, 100, 300) == 0.0);
  CHECK(lr_schedule(100, 5e-5, 100, 300) == 5e-5);
  CHECK(lr_schedule(50, 5e-5, 100, 300) == doctest::Approx(2.5e-5));
  CHECK(lr_schedule(200, 5e-5, 100, 300) == doctest::Approx(2.5e-5).epsilon(1e-12));
  CHECK(lr_schedule(300, 5e-5, 100, 300) == 0.0);
  CHECK(lr_schedule(200, 5e-5, 100, 300, false) == 5e-5);
  CHECK(lr_schedule(0, 1e-3, 0, 10) == 1e-3);
}

TEST_CASE("adamw zero grads and zero decay leave params unchanged") {
  ParameterSet<double> ps;
  ps.add("w", Tensor<double>({3}, {1.0, -2.0, 0.5}));
  const auto before = ps[0].value;
  AdamW<double> opt({0.9, 0.999, 1e-6, 0.0});
  for (int i = 0; i < 5; ++i) opt.step(ps, 1e-2);
  CHECK(ps[0].value == before);
  CHECK(opt.steps() == 5);
}

TEST_CASE("adamw first step with unit gradient") {
  ParameterSet<double> ps;
  ps.add("w", Tensor<double>({2}, 0.0));
  ps[0].grad.fill(1.0);
  AdamW<double> opt({0.9, 0.999, 1e-6, 0.0});
  opt.step(ps, 1e-3);
  // m_hat = v_hat = 1 at step one
  CHECK(ps[0].value[0] == doctest::Approx(-1e-3 / (1.0 + 1e-6)).epsilon(1e-12));
}

TEST_CASE("adamw decay with zero grads is a pure shrink") {
  ParameterSet<double> ps;
  ps.add("w", Tensor<double>({2}, {2.0, -4.0}));
  ps.add("b", Tensor<double>({1}, {3.0}), false);
  AdamW<double> opt({0.9, 0.999, 1e-6, 0.01});
  opt.step(ps, 0.1);
  CHECK(ps[0].value[0] == doctest::Approx(2.0 * (1 - 0.1 * 0.01)).epsilon(1e-15));
  CHECK(ps[0].value[1] == doctest::Approx(-4.0 * (1 - 0.1 * 0.01)).epsilon(1e-15));
  CHECK(ps[1].value[0] == 3.0);
}

TEST_CASE("adamw without decay equals adam bitwise") {
  Rng rng(31);
  ParameterSet<double> ps;
  ps.add("a", Tensor<double>({4, 3}));
  ps.add("b", Tensor<double>({5}));
  for (auto& p : ps) {
    for (auto& x : p.value.buffer()) x = rng.normal();
  }
  // independent Adam
  std::vector<std::vector<double>> theta, m, v;
  for (auto& p : ps) {
    theta.push_back(p.value.buffer());
    m.emplace_back(p.value.size(), 0.0);
    v.emplace_back(p.value.size(), 0.0);
  }
  AdamW<double> opt({0.9, 0.999, 1e-6, 0.0});
  for (int t = 1; t <= 8; ++t) {
    const double lr = 1e-3 * t;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (std::size_t j = 0; j < ps[i].grad.size(); ++j) ps[i].grad[j] = rng.normal();
    }
    opt.step(ps, lr);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (std::size_t j = 0; j < theta[i].size(); ++j) {
        const double g = ps[i].grad[j];
        m[i][j] = 0.9 * m[i][j] + (1 - 0.9) * g;
        v[i][j] = 0.999 * v[i][j] + (1 - 0.999) * g * g;
        const double mh = m[i][j] / (1 - std::pow(0.9, t));
        const double vh = v[i][j] / (1 - std::pow(0.999, t));
        theta[i][j] -= lr * (mh / (std::sqrt(vh) + 1e-6));
      }
      CHECK(ps[i].value.buffer() == theta[i]);
    }
  }
}

TEST_CASE("adamw rejects a changed parameter set") {
  ParameterSet<double> ps;
  ps.add("w", Tensor<double>({2}));
  AdamW<double> opt;
  opt.step(ps, 0.1);
  ps.add("extra", Tensor<double>({1}));
  CHECK_THROWS_AS(opt.step(ps, 0.1), ShapeError);
}
