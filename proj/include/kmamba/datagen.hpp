#pragma once

#include <array>
#include <functional>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kmamba/array.hpp"
#include "kmamba/dataset.hpp"
#include "kmamba/rng.hpp"

// Ground-truth trajectories from small stiff mechanisms.
//
// robertson:          y1' = -k1 y1 + k3 y2 y3
//                     y2' =  k1 y1 - k3 y2 y3 - k2 y2^2
//                     y3' =  k2 y2^2
// one-step-ignition:  r = A Y_F exp(-T_a / T);  Y_F' = -r,  T' = q r,
//                     Y_P = 1 - Y_F

namespace kmamba::datagen {

enum class MechanismId { robertson, one_step_ignition };

struct MechanismSpec {
  MechanismId id = MechanismId::robertson;

  double k1 = 0.04, k2 = 3e7, k3 = 1e4;
  std::array<double, 2> y1_range{0.5, 1.0};
  std::array<double, 2> y2_range{0.0, 0.0};

  double pre_exponential = 1e8;
  double activation_temperature = 16000.0;
  double heat_release = 1000.0;
  std::array<double, 2> t0_range{600.0, 1400.0};
  std::array<double, 2> fuel_range{0.5, 1.0};

  double abs_tol = 1e-13;
  double rel_tol = 1e-8;

  static MechanismSpec robertson() { return {}; }
  static MechanismSpec one_step_ignition();

  std::vector<std::string> variables() const;
  std::vector<std::string> units() const;
  void validate() const;

  nlohmann::json to_json() const;
  // Unknown keys are rejected with ConfigError.
  static MechanismSpec from_json(const nlohmann::json& j);
};

MechanismId parse_mechanism(const std::string& name);
std::string mechanism_name(MechanismId id);

// Initial condition in variables() order.
std::vector<double> sample_initial_condition(const MechanismSpec& spec, Rng& rng);

// [n_t][p] sampled at t = k dt from the integrator's dense output; values are
// clamped nonnegative. Throws NumericalError on integrator failure with the
// time reached.
Array simulate(const MechanismSpec& spec, std::span<const double> ic, std::size_t n_t, double dt);

// Initial conditions are drawn sequentially from the seed, trajectories are
// then integrated on thread_count() threads; output does not depend on the
// thread count.
TrajectoryDataset generate_dataset(const MechanismSpec& spec, std::size_t n_samples, std::size_t n_t,
                                   double dt, std::uint64_t seed, const std::string& split = "train");

// KMAMBA_THREADS, else hardware concurrency (at least 1).
std::size_t thread_count();

// Runs body(i) for i in [0, n) on up to thread_count() threads. The first
// exception (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace kmamba::datagen
