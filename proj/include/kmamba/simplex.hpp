#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kmamba/array.hpp"

// Bijection between m mass fractions summing to one and m-1 values in
// [0, 1]:  z_k = y_k / (1 - sum_{j != k, j <= m-1} y_j)  for k <= m-2,
//          z_{m-1} = y_{m-1}.

namespace kmamba::simplex {

inline constexpr double kFaceTolerance = 1e-12;

// y: [m], m >= 2. Throws DomainError when y is off the simplex (|sum - 1| >
// sum_tolerance or a negative entry) or a denominator is below kFaceTolerance.
std::vector<double> forward_map(std::span<const double> y, double sum_tolerance = 1e-9);

// z: [m-1]. Solves A d = b (A_kk = 1, A_kj = z_j, b_k = 1 - z_{m-1}) by LU
// with partial pivoting; y_k = z_k d_k, y_{m-1} = z_{m-1}, y_m = 1 - sum.
// Throws NumericalError on a singular system and DomainError when y_m < -1e-9.
std::vector<double> inverse_map(std::span<const double> z);

// Denominators d_k (k <= m-2) of the forward map.
std::vector<double> denominators(std::span<const double> y);

bool on_degenerate_face(std::span<const double> y);

// Which dataset variables form the species block. Encoded layout is the
// passthrough variables (original order) followed by z_1..z_{m-1}.
struct SpeciesLayout {
  std::vector<std::size_t> species;      // m >= 2 indices into the raw variables
  std::vector<std::size_t> passthrough;  // remaining indices, ascending
  std::size_t raw_size = 0;

  static SpeciesLayout from_names(const std::vector<std::string>& variables,
                                  const std::vector<std::string>& species_names);

  std::size_t encoded_size() const { return raw_size - 1; }
  std::vector<std::string> encoded_names(const std::vector<std::string>& variables) const;

  // [..., raw_size] -> [..., raw_size - 1]
  Array encode(const Array& raw, double sum_tolerance = 1e-9) const;
  // [..., raw_size - 1] -> [..., raw_size]. When clip is set the z entries are
  // clamped into [0, 1] first (model outputs can overshoot).
  Array decode(const Array& encoded, bool clip = true) const;

  nlohmann::json to_json() const;
  static SpeciesLayout from_json(const nlohmann::json& j);
};

}  // namespace kmamba::simplex
