#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vamp/ops.hpp"
#include "vamp/rng.hpp"
#include "vamp/tensor.hpp"

namespace vamp::testutil {

inline Tensor random_param(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor t = gaussian_tensor(std::move(shape), stddev, rng);
  t.set_requires_grad(true);
  return t;
}

// Largest relative error between backward and central differences over
// every coordinate of every input.
inline double max_grad_error(const std::function<Tensor(Tape*)>& loss_fn, const std::vector<Tensor*>& inputs,
                             double h = 1e-5, double floor = 1e-8) {
  Tape tape;
  Tensor loss = loss_fn(&tape);
  for (Tensor* t : inputs) t->zero_grad();
  tape.backward(loss);
  double worst = 0.0;
  for (Tensor* t : inputs) {
    const std::vector<double> analytic =
        t->has_grad() ? std::vector<double>(t->grad().begin(), t->grad().end()) : std::vector<double>(t->size(), 0.0);
    for (std::size_t i = 0; i < t->size(); ++i) {
      double& x = t->mutable_data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss_fn(nullptr).item();
      x = saved - h;
      const double down = loss_fn(nullptr).item();
      x = saved;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(analytic[i] - numeric) /
                                  std::max({std::abs(analytic[i]), std::abs(numeric), floor}));
    }
  }
  return worst;
}

// Fixed random projection to a scalar so every output coordinate matters.
inline Tensor weighted_sum(Tape* tape, const Tensor& y, const Tensor& w) { return sum(tape, mul(tape, y, w)); }

}  // namespace vamp::testutil
