#include "rosenbrock_backend.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <boost/numeric/odeint.hpp>

namespace kmamba::datagen::detail {

namespace odeint = boost::numeric::odeint;
using state_type = boost::numeric::ublas::vector<double>;
using matrix_type = boost::numeric::ublas::matrix<double>;

void integrate_dense(const OdeProblem& problem, std::vector<double> x0, const std::vector<double>& times,
                     double abs_tol, double rel_tol,
                     const std::function<void(std::size_t, const double*)>& observe) {
  if (times.empty()) return;
  const std::size_t n = problem.dim;
  std::vector<double> scratch(n * n);
  auto sys = [&](const state_type& x, state_type& dx, double) { problem.rhs(&x[0], &dx[0]); };
  auto jac = [&](const state_type& x, matrix_type& j, double, state_type& dfdt) {
    problem.jacobian(&x[0], scratch.data());
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) j(r, c) = scratch[r * n + c];
      dfdt[r] = 0.0;
    }
  };
  state_type x(n);
  std::copy(x0.begin(), x0.end(), x.begin());

  std::size_t next = 0;
  double reached = times.front();
  auto observer = [&](const state_type& s, double t) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(s[i])) throw std::runtime_error("non-finite state at t = " + std::to_string(t));
    }
    observe(next++, &s[0]);
    reached = t;
  };
  const double first_step = times.size() > 1 ? std::min(times[1] - times[0], 1e-8) : 1e-8;
  try {
    auto stepper = odeint::make_dense_output(abs_tol, rel_tol, odeint::rosenbrock4<double>());
    odeint::integrate_times(stepper, std::make_pair(sys, jac), x, times.begin(), times.end(), first_step,
                            observer, odeint::max_step_checker(1000000));
  } catch (const std::exception& e) {
    throw std::runtime_error("integrator failed after t = " + std::to_string(reached) + ": " + e.what());
  }
}

}  // namespace kmamba::datagen::detail
