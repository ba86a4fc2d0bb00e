#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pasnet/tape.hpp"
#include "pasnet/tensor.hpp"

namespace pasnet::testutil {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;
};

// Central-difference gradient check. `forward` rebuilds the computation from
// scratch on the given tape with one Var per parameter (bound in order) and
// returns the scalar loss. Parameters are perturbed in place.
template <typename F>
GradCheckResult grad_check(std::vector<std::pair<std::string, Tensor*>> params, F forward,
                           double h = 1e-5) {
  auto run = [&](Tape& tp) {
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (auto& [name, t] : params) vars.push_back(tp.param(*t));
    return std::pair{forward(tp, vars), vars};
  };

  Tape tp;
  auto [loss, vars] = run(tp);
  tp.backward(loss);
  std::vector<Tensor> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(tp.grad(vars[i]));

  auto loss_value = [&]() {
    Tape t2;
    auto [l, v] = run(t2);
    (void)v;
    return t2.val(l)[0];
  };

  GradCheckResult res;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = *params[i].second;
    // Elements with near-zero gradients are measured against the tensor's
    // gradient scale; their raw relative error is cancellation noise.
    const double gscale = std::max(analytic[i].max_abs(), 1e-8);
    for (std::size_t j = 0; j < t.size(); ++j) {
      const double saved = t[j];
      t[j] = saved + h;
      const double lp = loss_value();
      t[j] = saved - h;
      const double lm = loss_value();
      t[j] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double a = analytic[i][j];
      const double denom = std::max({std::fabs(a), std::fabs(fd), 0.01 * gscale});
      const double rel = std::fabs(a - fd) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = params[i].first + "[" + std::to_string(j) + "]";
      }
    }
  }
  return res;
}

}  // namespace pasnet::testutil
