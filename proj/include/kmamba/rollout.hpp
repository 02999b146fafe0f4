#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kmamba/array.hpp"
#include "kmamba/pca.hpp"

// Inference drivers. Window i starts where window i-1 ended, so consecutive
// windows share one time point and a plan covers sum(w_i) - (k - 1) distinct
// indices while producing sum(w_i) points.

namespace kmamba::rollout {

enum class Mode { time_decomposed, recursive, adaptive };

std::string mode_name(Mode m);
Mode parse_mode(const std::string& name);

struct RolloutPlan {
  std::vector<std::size_t> windows;
  Mode mode = Mode::recursive;
  bool latent = false;

  static RolloutPlan fixed(std::size_t window, std::size_t count, Mode mode = Mode::recursive);
  std::size_t total() const;
  // Global time index of each window's first point.
  std::vector<std::size_t> starts() const;
  // Shortest ground-truth series that covers the plan.
  std::size_t span() const;
  void validate() const;
  nlohmann::json to_json() const;
};

// Initial conditions [n][p] and a window length -> predictions [n][w][p].
using WindowPredictor = std::function<Array(const Array& ics, std::size_t w)>;
// Latent inputs [n][d] -> full-space predictions [n][w][p].
using LatentPredictor = std::function<Array(const Array& latent, std::size_t w)>;
// Full-space points [n][p] -> latent inputs [n][d].
using Embedding = std::function<Array(const Array& full)>;

// Checks shapes and finiteness of one predictor call.
Array predict_windows(const Array& ics, const WindowPredictor& predictor, std::size_t w);

// ics [n][p] (or [p]) -> [n][total][p] (or [total][p]). Each window after the
// first is seeded with the previous window's last predicted point. Throws
// NumericalError naming the window on a non-finite prediction.
Array recursive_rollout(const Array& ics, const WindowPredictor& predictor, const RolloutPlan& plan);

// Seeds every window from the ground truth [n][n_t][p] instead.
Array teacher_forced_rollout(const Array& truth, const WindowPredictor& predictor, const RolloutPlan& plan);

// Recursive rollout through a latent model: each seed is embedded before the
// next window is predicted; outputs stay in full space.
Array latent_recursive_rollout(const Array& ics, const LatentPredictor& predictor, const Embedding& embed,
                               const RolloutPlan& plan);

// (x - mean) V_r, then the latent min-max scaler when given.
Embedding pca_embedding(const pca::PcaBasis& basis, const pca::LatentScaler* scaler = nullptr);

// Ground-truth segments [n][n_t][p] laid out like a rollout: [n][total][p].
Array plan_truth(const Array& truth, const RolloutPlan& plan);

struct WindowReport {
  std::vector<std::string> variables;
  std::vector<std::size_t> start, length;
  Array errors;               // [k][p] percent rel-L2, mean over samples
  std::vector<double> mean;   // [k] mean over variables
  // Largest |seed - first prediction| at each window start, scaled by the
  // truth range of the variable; 0 for the first window.
  std::vector<double> jump;
  std::vector<bool> flagged;  // jump > threshold
  double threshold = 0.0;

  nlohmann::json to_json() const;
  void write_csv(const std::filesystem::path& path) const;
};

// pred, truth: [n][total][p] laid out per `plan`.
WindowReport window_report(const Array& pred, const Array& truth, const RolloutPlan& plan,
                           std::vector<std::string> variables, double jump_threshold = 0.05);

}  // namespace kmamba::rollout
