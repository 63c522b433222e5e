#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mambarain/tensor.hpp"

namespace mambarain {

// Largest |analytic - central difference| / max(1, |central difference|)
// over every coordinate of every tensor in `inputs`. `f` must rebuild the
// scalar from the current values of `inputs` each time it is called.
inline double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double eps = 1e-6) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw DomainError("grad_check: eps must lie in [1e-7, 1e-3]");
  for (auto& t : inputs) {
    t.set_requires_grad();
    t.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f();
    if (y.size() != 1) throw ContractError("grad_check: f must return a scalar, got " + shape_str(y.shape()));
    tape.backward(y);
  }
  for (auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  NoGradScope no_grad;
  double worst = 0.0;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor& t = inputs[ti];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + eps;
      const double fp = f().item();
      t[i] = orig - eps;
      const double fm = f().item();
      t[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[ti][i] - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor input, double eps = 1e-6) {
  return grad_check([&]() { return f(input); }, std::vector<Tensor>{input}, eps);
}

}  // namespace mambarain
