#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "kmamba/array.hpp"

namespace kmamba {

struct DatasetManifest {
  std::size_t n_samples = 0;
  std::size_t n_t = 0;
  double dt = 0.0;  // seconds
  std::vector<std::string> variables;
  std::vector<std::string> units;
  nlohmann::json mechanism = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string split = "train";  // train | test | extrapolation | prediction

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
  // Throws ConfigError on duplicate names, dt <= 0, or unit count mismatch.
  void validate() const;
};

// [sample][time][variable] trajectories plus metadata.
struct TrajectoryDataset {
  DatasetManifest manifest;
  Array data;

  std::size_t samples() const { return data.rank() == 3 ? data.dim(0) : 0; }
  std::size_t steps() const { return data.rank() == 3 ? data.dim(1) : 0; }
  std::size_t variables() const { return data.rank() == 3 ? data.dim(2) : manifest.variables.size(); }

  // Index of a named variable; throws ConfigError when absent.
  std::size_t variable_index(const std::string& name) const;

  // Selected samples in the given order; manifest counts follow.
  TrajectoryDataset subset(const std::vector<std::size_t>& indices) const;

  // [sample][variable] values at time index 0.
  Array initial_conditions() const;
};

// Directory with manifest.json and data.bin (row-major float64 little-endian).
void write_dataset(const std::filesystem::path& dir, const TrajectoryDataset& ds);
TrajectoryDataset read_dataset(const std::filesystem::path& dir);

// Raw little-endian float64 helpers shared with the checkpoint format.
void append_f64_le(std::string& out, std::span<const double> values);
void read_f64_le(const char* bytes, std::span<double> out);

}  // namespace kmamba
