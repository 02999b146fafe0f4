#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "kmamba/array.hpp"

// Data preparation: clamping, power transform + min-max scaling, windowing,
// tiling of initial conditions and reconstruction of windowed predictions.

namespace kmamba::pipeline {

enum class Which { trajectory, initial };

// Min/max of x^exponent per variable, over all samples and times
// (trajectory) and over samples at time 0 (initial).
struct NormStats {
  std::vector<std::string> variables;
  double exponent = 0.2;
  std::vector<double> traj_min, traj_max;
  std::vector<double> ic_min, ic_max;

  std::size_t size() const { return traj_min.size(); }
  nlohmann::json to_json() const;
  static NormStats from_json(const nlohmann::json& j);
  friend bool operator==(const NormStats&, const NormStats&) = default;
};

struct WindowPlan {
  std::size_t window = 101;
  std::size_t segments = 99;

  std::size_t stride() const { return window - 1; }
  // Shortest source series that yields `segments` windows.
  std::size_t required_length() const { return segments * stride() + 1; }
  void validate() const;
};

// max(x, 0) elementwise.
Array clamp_nonneg(const Array& x);

// x: [s][t][p]. Throws DomainError on negative input.
NormStats fit_stats(const Array& train, const std::vector<std::string>& variables,
                    double exponent = 0.2);

// Maps the last axis through the selected normalizer. Variables with
// max == min encode to 0.
Array encode(const Array& x, const NormStats& stats, Which which);

// Exact inverse of encode. Values whose unscaled power lands below zero are
// clamped to 0; their count is written to *clamped when given.
Array decode(const Array& y, const NormStats& stats, Which which, std::size_t* clamped = nullptr);

// [s][n_t][p] -> [s*S][w][p]; trailing points beyond S*(w-1)+1 are dropped.
Array time_decompose(const Array& x, const WindowPlan& plan);

// [s][p] -> [s][w][p]
Array tile_initial(const Array& x0, std::size_t w);

// [s*S][w][p] -> [s][S*w][p], plain concatenation (shared boundary points
// appear twice).
Array reconstruct(const Array& segments, const WindowPlan& plan);

// First time point of each window: [n][w][p] -> [n][p].
Array first_points(const Array& windows);

// [n][w][p] -> [n][w][p+1] with the position in the window mapped to [-1, 1].
Array append_time_channel(const Array& tiled);

}  // namespace kmamba::pipeline
