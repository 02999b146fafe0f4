#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "kmamba/array.hpp"

// Percent relative L2 error along time, per (sample, variable), and its
// sample / grand means.

namespace kmamba::metrics {

enum class Clip { off, epsilon_rule };

struct ErrorReport {
  Array matrix;                     // [M][p], percent
  std::vector<double> per_variable; // mean over samples
  double overall = 0.0;             // mean over samples and variables
  bool clipped = false;
  std::vector<double> epsilon;      // per variable, when clipped
  std::vector<std::string> variables;

  nlohmann::json to_json() const;
  // sample,variable,error rows (raw data for distribution plots)
  void write_csv(const std::filesystem::path& path) const;
  void write_summary_csv(const std::filesystem::path& path) const;
};

// pred, truth: [M][T][p]. With Clip::epsilon_rule the denominator is
// max(||truth||, eps_i), eps_i = 1e-3 * mean_j ||truth_{j,i}||. A zero
// denominator gives +inf (0 when the numerator is also 0).
ErrorReport rel_l2(const Array& pred, const Array& truth, Clip clip = Clip::off,
                   std::vector<std::string> variables = {});

struct Aggregate {
  std::vector<double> per_variable;
  double overall = 0.0;
};

Aggregate aggregate(const Array& matrix);

}  // namespace kmamba::metrics
