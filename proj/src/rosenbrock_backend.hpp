#pragma once

// Interface to the odeint Rosenbrock integrator. Kept C++17-clean: the
// implementation is compiled as C++17 because uBLAS in older Boost releases
// does not build as C++20.

#include <cstddef>
#include <functional>
#include <vector>

namespace kmamba::datagen::detail {

struct OdeProblem {
  std::size_t dim = 0;
  std::function<void(const double* x, double* dxdt)> rhs;
  std::function<void(const double* x, double* jac)> jacobian;  // row-major dim x dim
};

// Adaptive Rosenbrock (4th order) with dense output, observed at each entry
// of `times` (ascending, times[0] = initial time). Throws std::runtime_error
// on failure, with the last observed time in the message.
void integrate_dense(const OdeProblem& problem, std::vector<double> x0, const std::vector<double>& times,
                     double abs_tol, double rel_tol,
                     const std::function<void(std::size_t index, const double* x)>& observe);

}  // namespace kmamba::datagen::detail
