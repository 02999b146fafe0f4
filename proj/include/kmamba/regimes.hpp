#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kmamba/array.hpp"
#include "kmamba/dataset.hpp"

// Ignition threshold: tau = max T(0) over profiles whose mean slope
// (T(last) - T(first)) / (n_t - 1) is below epsilon. T(0) <= tau is the
// non-igniting ("below") regime.

namespace kmamba::regimes {

enum class Regime { below, above };

struct RegimeThreshold {
  double tau = 0.0;
  double epsilon = 0.01;
  std::size_t n_t = 0;
  std::string variable = "T";

  nlohmann::json to_json() const;
  static RegimeThreshold from_json(const nlohmann::json& j);
};

// temperature: [n][n_t]. Throws DomainError when no profile is flat.
RegimeThreshold compute_tau(const Array& temperature, double epsilon);

// The named variable of every sample as [n][n_t].
Array profiles(const TrajectoryDataset& ds, const std::string& variable);

inline Regime route(double t0, double tau) { return t0 <= tau ? Regime::below : Regime::above; }

// Regime of each initial condition (rows of ics [n][p]); order preserved.
std::vector<Regime> route_batch(const Array& ics, std::size_t temperature_index, double tau);

struct Split {
  std::vector<std::size_t> below, above;
};

Split partition_indices(const TrajectoryDataset& ds, const RegimeThreshold& threshold);
std::pair<TrajectoryDataset, TrajectoryDataset> partition(const TrajectoryDataset& ds,
                                                          const RegimeThreshold& threshold);

}  // namespace kmamba::regimes
