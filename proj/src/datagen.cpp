#include "kmamba/datagen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "rosenbrock_backend.hpp"

namespace kmamba::datagen {

using nlohmann::json;

MechanismSpec MechanismSpec::one_step_ignition() {
  MechanismSpec s;
  s.id = MechanismId::one_step_ignition;
  s.abs_tol = 1e-10;
  return s;
}

MechanismId parse_mechanism(const std::string& name) {
  if (name == "robertson") return MechanismId::robertson;
  if (name == "one-step-ignition") return MechanismId::one_step_ignition;
  throw ConfigError("unknown mechanism '" + name + "' (robertson | one-step-ignition)");
}

std::string mechanism_name(MechanismId id) {
  return id == MechanismId::robertson ? "robertson" : "one-step-ignition";
}

std::vector<std::string> MechanismSpec::variables() const {
  if (id == MechanismId::robertson) return {"y1", "y2", "y3"};
  return {"T", "Y_F", "Y_P"};
}

std::vector<std::string> MechanismSpec::units() const {
  if (id == MechanismId::robertson) return {"-", "-", "-"};
  return {"K", "-", "-"};
}

namespace {

void check_range(const std::array<double, 2>& r, const char* name, double lo, double hi) {
  if (!(r[0] <= r[1]) || r[0] < lo || r[1] > hi) {
    throw ConfigError(std::string("mechanism: ") + name + " must satisfy " + std::to_string(lo) +
                      " <= min <= max <= " + std::to_string(hi));
  }
}

}  // namespace

void MechanismSpec::validate() const {
  if (!(abs_tol > 0.0) || !(rel_tol > 0.0)) throw ConfigError("mechanism: tolerances must be positive");
  if (id == MechanismId::robertson) {
    if (!(k1 > 0.0 && k2 > 0.0 && k3 > 0.0)) throw ConfigError("mechanism: rate constants must be positive");
    check_range(y1_range, "y1_range", 0.0, 1.0);
    check_range(y2_range, "y2_range", 0.0, 1.0);
    if (y1_range[1] + y2_range[1] > 1.0) throw ConfigError("mechanism: y1 + y2 may exceed 1");
    if (!(y1_range[0] > 0.0)) throw ConfigError("mechanism: y1_range must exclude 0");
  } else {
    if (!(pre_exponential > 0.0 && activation_temperature > 0.0 && heat_release > 0.0)) {
      throw ConfigError("mechanism: A, T_a and q must be positive");
    }
    check_range(t0_range, "t0_range", 1e-6, 1e6);
    check_range(fuel_range, "fuel_range", 0.0, 1.0);
  }
}

json MechanismSpec::to_json() const {
  json j{{"mechanism", mechanism_name(id)}, {"abs_tol", abs_tol}, {"rel_tol", rel_tol}};
  if (id == MechanismId::robertson) {
    j.update({{"k1", k1}, {"k2", k2}, {"k3", k3}, {"y1_range", y1_range}, {"y2_range", y2_range}});
  } else {
    j.update({{"pre_exponential", pre_exponential},
              {"activation_temperature", activation_temperature},
              {"heat_release", heat_release},
              {"t0_range", t0_range},
              {"fuel_range", fuel_range}});
  }
  return j;
}

MechanismSpec MechanismSpec::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("mechanism: expected an object");
  MechanismSpec s;
  s.id = parse_mechanism(j.value("mechanism", std::string("robertson")));
  std::set<std::string> allowed{"mechanism", "abs_tol", "rel_tol"};
  if (s.id == MechanismId::robertson) {
    allowed.insert({"k1", "k2", "k3", "y1_range", "y2_range"});
  } else {
    s = one_step_ignition();
    allowed.insert({"pre_exponential", "activation_temperature", "heat_release", "t0_range", "fuel_range"});
  }
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("mechanism: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("abs_tol", s.abs_tol);
    get("rel_tol", s.rel_tol);
    get("k1", s.k1);
    get("k2", s.k2);
    get("k3", s.k3);
    get("y1_range", s.y1_range);
    get("y2_range", s.y2_range);
    get("pre_exponential", s.pre_exponential);
    get("activation_temperature", s.activation_temperature);
    get("heat_release", s.heat_release);
    get("t0_range", s.t0_range);
    get("fuel_range", s.fuel_range);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mechanism: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<double> sample_initial_condition(const MechanismSpec& spec, Rng& rng) {
  if (spec.id == MechanismId::robertson) {
    const double y1 = rng.uniform(spec.y1_range[0], spec.y1_range[1]);
    const double y2 = std::min(rng.uniform(spec.y2_range[0], spec.y2_range[1]), 1.0 - y1);
    return {y1, y2, 1.0 - y1 - y2};
  }
  const double t0 = rng.uniform(spec.t0_range[0], spec.t0_range[1]);
  const double yf = rng.uniform(spec.fuel_range[0], spec.fuel_range[1]);
  return {t0, yf, 1.0 - yf};
}

namespace {

using detail::OdeProblem;

OdeProblem robertson_problem(const MechanismSpec& s) {
  OdeProblem p;
  p.dim = 3;
  p.rhs = [k1 = s.k1, k2 = s.k2, k3 = s.k3](const double* y, double* dy) {
    const double r1 = k1 * y[0], r2 = k2 * y[1] * y[1], r3 = k3 * y[1] * y[2];
    dy[0] = -r1 + r3;
    dy[1] = r1 - r3 - r2;
    dy[2] = r2;
  };
  p.jacobian = [k1 = s.k1, k2 = s.k2, k3 = s.k3](const double* y, double* j) {
    j[0] = -k1;
    j[1] = k3 * y[2];
    j[2] = k3 * y[1];
    j[3] = k1;
    j[4] = -k3 * y[2] - 2.0 * k2 * y[1];
    j[5] = -k3 * y[1];
    j[6] = 0.0;
    j[7] = 2.0 * k2 * y[1];
    j[8] = 0.0;
  };
  return p;
}

// state (T, Y_F)
OdeProblem ignition_problem(const MechanismSpec& s) {
  OdeProblem p;
  p.dim = 2;
  const double a = s.pre_exponential, ta = s.activation_temperature, q = s.heat_release;
  p.rhs = [=](const double* x, double* dx) {
    const double r = a * std::max(x[1], 0.0) * std::exp(-ta / x[0]);
    dx[0] = q * r;
    dx[1] = -r;
  };
  p.jacobian = [=](const double* x, double* j) {
    const double e = std::exp(-ta / x[0]);
    const double dr_dt = a * std::max(x[1], 0.0) * e * ta / (x[0] * x[0]);
    const double dr_dy = x[1] > 0.0 ? a * e : 0.0;
    j[0] = q * dr_dt;
    j[1] = q * dr_dy;
    j[2] = -dr_dt;
    j[3] = -dr_dy;
  };
  return p;
}

}  // namespace

Array simulate(const MechanismSpec& spec, std::span<const double> ic, std::size_t n_t, double dt) {
  spec.validate();
  if (!(dt > 0.0)) throw ConfigError("simulate: dt must be positive");
  const auto p = spec.variables().size();
  if (ic.size() != p) throw ShapeError("simulate: initial condition has wrong length");
  for (double v : ic) {
    if (!(v >= 0.0)) throw DomainError("simulate: initial condition must be nonnegative");
  }
  Array out({n_t, p});
  if (n_t == 0) return out;

  std::vector<double> times(n_t);
  for (std::size_t k = 0; k < n_t; ++k) times[k] = static_cast<double>(k) * dt;
  try {
    if (spec.id == MechanismId::robertson) {
      detail::integrate_dense(robertson_problem(spec), {ic.begin(), ic.end()}, times, spec.abs_tol, spec.rel_tol,
                              [&](std::size_t k, const double* y) {
                                for (std::size_t v = 0; v < 3; ++v) out.at(k, v) = std::max(y[v], 0.0);
                              });
    } else {
      if (!(ic[0] > 0.0)) throw DomainError("simulate: temperature must be positive");
      const double total = ic[1] + ic[2];
      detail::integrate_dense(ignition_problem(spec), {ic[0], ic[1]}, times, spec.abs_tol, spec.rel_tol,
                              [&](std::size_t k, const double* x) {
                                out.at(k, 0) = std::max(x[0], 0.0);
                                const double fuel = std::clamp(x[1], 0.0, total);
                                out.at(k, 1) = fuel;
                                out.at(k, 2) = total - fuel;
                              });
    }
  } catch (const Error&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw NumericalError(e.what());
  }
  return out;
}

std::size_t thread_count() {
  if (const char* env = std::getenv("KMAMBA_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) {
      throw ConfigError("KMAMBA_THREADS must be a positive integer, got '" + std::string(env) + "'");
    }
    return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_at = n;
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (i < failed_at) {
            failed_at = i;
            failure = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

TrajectoryDataset generate_dataset(const MechanismSpec& spec, std::size_t n_samples, std::size_t n_t, double dt,
                                   std::uint64_t seed, const std::string& split) {
  spec.validate();
  TrajectoryDataset ds;
  ds.manifest.n_samples = n_samples;
  ds.manifest.n_t = n_t;
  ds.manifest.dt = dt;
  ds.manifest.variables = spec.variables();
  ds.manifest.units = spec.units();
  ds.manifest.mechanism = spec.to_json();
  ds.manifest.seed = seed;
  ds.manifest.split = split;
  ds.manifest.validate();

  const std::size_t p = ds.manifest.variables.size();
  Rng rng(seed);
  std::vector<std::vector<double>> ics;
  for (std::size_t i = 0; i < n_samples; ++i) ics.push_back(sample_initial_condition(spec, rng));

  ds.data = Array({n_samples, n_t, p});
  parallel_for(n_samples, [&](std::size_t i) {
    try {
      Array traj = simulate(spec, ics[i], n_t, dt);
      std::copy(traj.data().begin(), traj.data().end(), &ds.data[i * n_t * p]);
    } catch (const Error& e) {
      throw NumericalError("sample " + std::to_string(i) + ": " + e.what());
    }
  });
  return ds;
}

}  // namespace kmamba::datagen
