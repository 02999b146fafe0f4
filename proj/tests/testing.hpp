#pragma once

// Test-only helpers: random arrays and a central finite-difference oracle that
// never touches the autodiff path it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "kmamba/array.hpp"
#include "kmamba/rng.hpp"
#include "kmamba/tensor.hpp"

namespace kmamba::testing {

inline Array random_array(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Array a(std::move(shape));
  for (double& v : a.data()) v = rng.uniform(lo, hi);
  return a;
}

using ScalarFn = std::function<ad::Tensor(std::span<const ad::Tensor>)>;

// Numerical gradients of fn with respect to each input, evaluated on
// constant tensors only.
inline std::vector<Array> finite_difference(const ScalarFn& fn, const std::vector<Array>& inputs,
                                            double h = 1e-6) {
  auto eval = [&](const std::vector<Array>& xs) {
    std::vector<ad::Tensor> ts;
    for (const auto& x : xs) ts.push_back(ad::Tensor::constant(x));
    return fn(ts).item();
  };
  std::vector<Array> grads;
  std::vector<Array> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Array g(inputs[k].shape());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      work[k][i] = x0 + h;
      const double fp = eval(work);
      work[k][i] = x0 - h;
      const double fm = eval(work);
      work[k][i] = x0;
      g[i] = (fp - fm) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

inline std::vector<Array> autodiff(const ScalarFn& fn, const std::vector<Array>& inputs) {
  std::vector<ad::Tensor> ts;
  for (const auto& x : inputs) ts.push_back(ad::Tensor::parameter(x));
  return ad::backward_grad(fn(ts), ts);
}

// max_i |a_i - b_i| / max(max_i |b_i|, floor)
inline double relative_error(const Array& got, const Array& ref, double floor = 1e-8) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    num = std::max(num, std::abs(got[i] - ref[i]));
    den = std::max(den, std::abs(ref[i]));
  }
  return num / std::max(den, floor);
}

// Relative error of the full gradient vector (all inputs concatenated):
// max |ad - fd| / max(max |fd|, 1e-8).
inline double gradient_check(const ScalarFn& fn, const std::vector<Array>& inputs,
                             double h = 1e-6) {
  auto ad_grads = autodiff(fn, inputs);
  auto fd_grads = finite_difference(fn, inputs, h);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      num = std::max(num, std::abs(ad_grads[k][i] - fd_grads[k][i]));
      den = std::max(den, std::abs(fd_grads[k][i]));
    }
  }
  return num / std::max(den, 1e-8);
}

// Reduces an arbitrary-shaped output to a scalar with fixed random weights so
// every output entry contributes to the checked gradient.
inline ad::Tensor weighted_sum(const ad::Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  Array w(y.shape());
  for (double& v : w.data()) v = rng.uniform(-1.0, 1.0);
  return ad::sum(ad::mul(y, ad::Tensor::constant(std::move(w))));
}

inline double max_abs_diff(const Array& a, const Array& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace kmamba::testing
