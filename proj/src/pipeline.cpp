#include "kmamba/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

namespace kmamba::pipeline {

using nlohmann::json;

json NormStats::to_json() const {
  return json{{"variables", variables}, {"exponent", exponent}, {"traj_min", traj_min},
              {"traj_max", traj_max},   {"ic_min", ic_min},     {"ic_max", ic_max}};
}

NormStats NormStats::from_json(const json& j) {
  NormStats s;
  try {
    s.variables = j.at("variables").get<std::vector<std::string>>();
    s.exponent = j.at("exponent").get<double>();
    s.traj_min = j.at("traj_min").get<std::vector<double>>();
    s.traj_max = j.at("traj_max").get<std::vector<double>>();
    s.ic_min = j.at("ic_min").get<std::vector<double>>();
    s.ic_max = j.at("ic_max").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw IoError(std::string("norm stats: ") + e.what());
  }
  const std::size_t p = s.traj_min.size();
  if (s.traj_max.size() != p || s.ic_min.size() != p || s.ic_max.size() != p ||
      (!s.variables.empty() && s.variables.size() != p)) {
    throw IoError("norm stats: inconsistent lengths");
  }
  return s;
}

void WindowPlan::validate() const {
  if (window < 2) throw ConfigError("window length must be at least 2");
  if (segments < 1) throw ConfigError("segment count must be at least 1");
}

Array clamp_nonneg(const Array& x) {
  Array out = x;
  for (double& v : out.data()) v = std::max(v, 0.0);
  return out;
}

namespace {

double forward_power(double x, double e) {
  if (x < 0.0) throw DomainError("power transform of negative value " + std::to_string(x));
  return std::pow(x, e);
}

void check_last_axis(const Array& x, std::size_t p, const char* what) {
  if (x.rank() == 0 || x.shape().back() != p) {
    throw ShapeError(std::string(what) + ": last axis of " + shape_string(x.shape()) +
                     " does not match " + std::to_string(p) + " variables");
  }
}

}  // namespace

NormStats fit_stats(const Array& train, const std::vector<std::string>& variables, double exponent) {
  if (train.rank() != 3 || train.dim(0) == 0 || train.dim(1) == 0) {
    throw ShapeError("fit_stats: need non-empty [sample][time][variable], got " +
                     shape_string(train.shape()));
  }
  if (!(exponent > 0.0)) throw ConfigError("power exponent must be positive");
  const std::size_t ns = train.dim(0), nt = train.dim(1), p = train.dim(2);
  if (!variables.empty() && variables.size() != p) throw ShapeError("fit_stats: variable names");
  NormStats s;
  s.variables = variables;
  s.exponent = exponent;
  constexpr double inf = std::numeric_limits<double>::infinity();
  s.traj_min.assign(p, inf);
  s.traj_max.assign(p, -inf);
  s.ic_min.assign(p, inf);
  s.ic_max.assign(p, -inf);
  for (std::size_t i = 0; i < ns; ++i) {
    for (std::size_t t = 0; t < nt; ++t) {
      for (std::size_t v = 0; v < p; ++v) {
        const double x = forward_power(train.at(i, t, v), exponent);
        s.traj_min[v] = std::min(s.traj_min[v], x);
        s.traj_max[v] = std::max(s.traj_max[v], x);
        if (t == 0) {
          s.ic_min[v] = std::min(s.ic_min[v], x);
          s.ic_max[v] = std::max(s.ic_max[v], x);
        }
      }
    }
  }
  return s;
}

Array encode(const Array& x, const NormStats& stats, Which which) {
  const std::size_t p = stats.size();
  check_last_axis(x, p, "encode");
  const auto& lo = which == Which::trajectory ? stats.traj_min : stats.ic_min;
  const auto& hi = which == Which::trajectory ? stats.traj_max : stats.ic_max;
  Array out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t v = i % p;
    const double xt = forward_power(x[i], stats.exponent);
    const double range = hi[v] - lo[v];
    out[i] = range > 0.0 ? 2.0 * (xt - lo[v]) / range - 1.0 : 0.0;
  }
  return out;
}

Array decode(const Array& y, const NormStats& stats, Which which, std::size_t* clamped) {
  const std::size_t p = stats.size();
  check_last_axis(y, p, "decode");
  const auto& lo = which == Which::trajectory ? stats.traj_min : stats.ic_min;
  const auto& hi = which == Which::trajectory ? stats.traj_max : stats.ic_max;
  const double inv = 1.0 / stats.exponent;
  std::size_t n_clamped = 0;
  Array out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t v = i % p;
    double xt = (y[i] + 1.0) / 2.0 * (hi[v] - lo[v]) + lo[v];
    if (xt < 0.0) {
      xt = 0.0;
      ++n_clamped;
    }
    out[i] = std::pow(xt, inv);
  }
  if (clamped) *clamped = n_clamped;
  return out;
}

Array time_decompose(const Array& x, const WindowPlan& plan) {
  plan.validate();
  if (x.rank() != 3) throw ShapeError("time_decompose: expected [sample][time][variable]");
  const std::size_t ns = x.dim(0), nt = x.dim(1), p = x.dim(2);
  const std::size_t w = plan.window, S = plan.segments, stride = plan.stride();
  if (nt < plan.required_length()) {
    throw ShapeError("time_decompose: series of length " + std::to_string(nt) + " is shorter than " +
                     std::to_string(plan.required_length()) + " needed for " + std::to_string(S) +
                     " windows of " + std::to_string(w));
  }
  if (nt > plan.required_length()) {
    std::clog << "time_decompose: dropping " << nt - plan.required_length()
              << " trailing points per sample\n";
  }
  Array out({ns * S, w, p});
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t i = 0; i < S; ++i) {
      const double* src = &x[(s * nt + i * stride) * p];
      std::copy_n(src, w * p, &out[(s * S + i) * w * p]);
    }
  }
  return out;
}

Array tile_initial(const Array& x0, std::size_t w) {
  if (x0.rank() != 2) throw ShapeError("tile_initial: expected [sample][variable]");
  const std::size_t ns = x0.dim(0), p = x0.dim(1);
  Array out({ns, w, p});
  for (std::size_t s = 0; s < ns; ++s) {
    for (std::size_t t = 0; t < w; ++t) std::copy_n(&x0[s * p], p, &out[(s * w + t) * p]);
  }
  return out;
}

Array reconstruct(const Array& segments, const WindowPlan& plan) {
  plan.validate();
  if (segments.rank() != 3 || segments.dim(1) != plan.window ||
      segments.dim(0) % plan.segments != 0) {
    throw ShapeError("reconstruct: " + shape_string(segments.shape()) + " is not a stack of " +
                     std::to_string(plan.segments) + " windows of " + std::to_string(plan.window));
  }
  const std::size_t ns = segments.dim(0) / plan.segments;
  // segments are already laid out window after window per sample
  return segments.reshaped({ns, plan.segments * plan.window, segments.dim(2)});
}

Array first_points(const Array& windows) {
  if (windows.rank() != 3) throw ShapeError("first_points: expected [n][w][p]");
  const std::size_t n = windows.dim(0), w = windows.dim(1), p = windows.dim(2);
  Array out({n, p});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(&windows[i * w * p], p, &out[i * p]);
  return out;
}

Array append_time_channel(const Array& tiled) {
  if (tiled.rank() != 3) throw ShapeError("append_time_channel: expected [n][w][p]");
  const std::size_t n = tiled.dim(0), w = tiled.dim(1), p = tiled.dim(2);
  Array out({n, w, p + 1});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < w; ++t) {
      std::copy_n(&tiled[(i * w + t) * p], p, &out[(i * w + t) * (p + 1)]);
      out[(i * w + t) * (p + 1) + p] = w > 1 ? 2.0 * static_cast<double>(t) / (w - 1) - 1.0 : -1.0;
    }
  }
  return out;
}

}  // namespace kmamba::pipeline
