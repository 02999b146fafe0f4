#pragma once

#include <vector>

#include <json.hpp>

#include "kmamba/array.hpp"

namespace kmamba::pca {

struct PcaBasis {
  std::vector<double> mean;         // [p]
  Array components;                 // [p][d], orthonormal columns
  std::vector<double> eigenvalues;  // [p], descending, clipped at 0

  std::size_t input_dim() const { return mean.size(); }
  std::size_t latent_dim() const { return components.rank() == 2 ? components.dim(1) : 0; }

  // Cumulative share of the eigenvalue sum for d = 1..p.
  std::vector<double> cumulative_explained() const;

  nlohmann::json to_json() const;
  static PcaBasis from_json(const nlohmann::json& j);
};

// x: [n][p] with n >= 2, 1 <= d <= p. Covariance (Xc^T Xc)/(n-1), symmetric
// eigendecomposition, top-d eigenvectors with their largest-magnitude entry
// made positive.
PcaBasis fit_pca(const Array& x, std::size_t d);

// [n][p] -> [n][d] (or [p] -> [d]): (x - mean) V_r
Array project(const Array& x, const PcaBasis& basis);

// Min-max scaling of projected training data to [-1, 1].
struct LatentScaler {
  std::vector<double> min, max;

  static LatentScaler fit(const Array& latent);
  Array encode(const Array& latent) const;
  Array decode(const Array& scaled) const;

  nlohmann::json to_json() const;
  static LatentScaler from_json(const nlohmann::json& j);
};

}  // namespace kmamba::pca
