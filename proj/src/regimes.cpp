#include "kmamba/regimes.hpp"

#include <limits>

namespace kmamba::regimes {

using nlohmann::json;

json RegimeThreshold::to_json() const {
  return {{"tau", tau}, {"epsilon", epsilon}, {"n_t", n_t}, {"variable", variable}};
}

RegimeThreshold RegimeThreshold::from_json(const json& j) {
  RegimeThreshold r;
  try {
    r.tau = j.at("tau").get<double>();
    r.epsilon = j.at("epsilon").get<double>();
    r.n_t = j.at("n_t").get<std::size_t>();
    r.variable = j.at("variable").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError(std::string("regime threshold: ") + e.what());
  }
  return r;
}

RegimeThreshold compute_tau(const Array& temperature, double epsilon) {
  if (temperature.rank() != 2) throw ShapeError("compute_tau: expected [n][n_t]");
  const std::size_t n = temperature.dim(0), nt = temperature.dim(1);
  if (nt < 2) throw DomainError("compute_tau: need n_t >= 2");
  if (!(epsilon > 0.0)) throw ConfigError("compute_tau: epsilon must be positive");
  double tau = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    const double slope = (temperature.at(i, nt - 1) - temperature.at(i, 0)) / static_cast<double>(nt - 1);
    if (slope < epsilon) {
      tau = std::max(tau, temperature.at(i, 0));
      any = true;
    }
  }
  if (!any) throw DomainError("compute_tau: no profile has slope below epsilon (no flat regime)");
  return {tau, epsilon, nt, "T"};
}

Array profiles(const TrajectoryDataset& ds, const std::string& variable) {
  const std::size_t v = ds.variable_index(variable);
  const std::size_t n = ds.samples(), nt = ds.steps(), p = ds.variables();
  Array out({n, nt});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < nt; ++t) out.at(i, t) = ds.data[(i * nt + t) * p + v];
  }
  return out;
}

std::vector<Regime> route_batch(const Array& ics, std::size_t temperature_index, double tau) {
  if (ics.rank() != 2 || temperature_index >= ics.dim(1)) throw ShapeError("route_batch: bad ics");
  std::vector<Regime> out;
  out.reserve(ics.dim(0));
  for (std::size_t i = 0; i < ics.dim(0); ++i) out.push_back(route(ics.at(i, temperature_index), tau));
  return out;
}

Split partition_indices(const TrajectoryDataset& ds, const RegimeThreshold& threshold) {
  const auto regimes = route_batch(ds.initial_conditions(), ds.variable_index(threshold.variable), threshold.tau);
  Split s;
  for (std::size_t i = 0; i < regimes.size(); ++i) {
    (regimes[i] == Regime::below ? s.below : s.above).push_back(i);
  }
  return s;
}

std::pair<TrajectoryDataset, TrajectoryDataset> partition(const TrajectoryDataset& ds,
                                                          const RegimeThreshold& threshold) {
  const Split s = partition_indices(ds, threshold);
  return {ds.subset(s.below), ds.subset(s.above)};
}

}  // namespace kmamba::regimes
