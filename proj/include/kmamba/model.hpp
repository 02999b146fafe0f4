#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kmamba/array.hpp"
#include "kmamba/dataset.hpp"
#include "kmamba/pca.hpp"
#include "kmamba/pipeline.hpp"
#include "kmamba/regimes.hpp"
#include "kmamba/simplex.hpp"
#include "kmamba/ssm.hpp"
#include "kmamba/training.hpp"

// Surrogate models: fitted data transforms around one or two backbones.

namespace kmamba::model {

enum class Variant { standalone, mass_conserving, latent, regime_pair };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

nlohmann::json model_config_to_json(const ssm::ModelConfig& c);
// in_dim/out_dim are optional; fit() sets them from the data.
ssm::ModelConfig model_config_from_json(const nlohmann::json& j);

// Everything needed to fit and train a model from a dataset. JSON keys are
// checked strictly; see docs/config.md.
struct ExperimentConfig {
  Variant variant = Variant::standalone;
  ssm::ModelConfig network;
  std::uint64_t init_seed = 0;

  double exponent = 0.2;
  pipeline::WindowPlan plan;
  bool time_channel = false;

  std::vector<std::string> species;  // mass-conserving: the species block
  std::size_t latent_dim = 0;        // latent: 0 -> half the variables, rounded up

  double regime_epsilon = 0.01;      // regime-pair
  std::string regime_variable = "T";

  training::TrainConfig train;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

// Fitted transforms between raw physical trajectories and network tensors.
// Model space is the raw variables (standalone, latent) or the passthrough
// variables followed by z_1..z_{m-1} (mass-conserving).
struct Preprocessor {
  Variant variant = Variant::standalone;
  std::vector<std::string> variables;  // raw
  std::optional<simplex::SpeciesLayout> layout;
  pipeline::NormStats stats;           // model space
  std::optional<pca::PcaBasis> basis;
  std::optional<pca::LatentScaler> scaler;
  std::size_t window = 0;
  bool time_channel = false;

  // Statistics come from `train` only. Trajectory stats cover all points;
  // initial-condition stats cover the first point of every training window.
  static Preprocessor fit(const TrajectoryDataset& train, Variant variant, const ExperimentConfig& cfg);

  std::size_t raw_dim() const { return variables.size(); }
  std::size_t model_dim() const { return stats.size(); }
  std::size_t feature_dim() const;  // network input width
  std::vector<std::string> model_variables() const;

  // [..., p] -> [..., q] after clamping negatives; the reverse clips z into [0, 1].
  Array to_model_space(const Array& raw) const;
  Array to_raw_space(const Array& model) const;

  // Initial conditions [n][p] -> normalized (and for latent, projected) [n][f0].
  Array features(const Array& raw_ics) const;
  // Full-space initial conditions in model space [n][q] -> [n][f0].
  Array features_from_model(const Array& model_ics) const;
  // [n][f0] -> network input [n][w][f].
  Array network_input_from_features(const Array& features, std::size_t w) const;
  Array network_input(const Array& raw_ics, std::size_t w) const;
  // Raw windows [n][w][p] -> normalized model-space targets [n][w][q].
  Array targets(const Array& raw_windows) const;
  // Network output [n][w][q] -> raw [n][w][p].
  Array decode(const Array& output, std::size_t* clamped = nullptr) const;

  nlohmann::json to_json() const;
  static Preprocessor from_json(const nlohmann::json& j);
};

// Training windows for a dataset under a fitted preprocessor.
training::WindowSet make_windows(const TrajectoryDataset& ds, const Preprocessor& prep,
                                 const pipeline::WindowPlan& plan);

struct Surrogate {
  Preprocessor prep;
  ssm::Backbone net;

  // Raw initial conditions [n][p] -> raw predictions [n][w][p].
  Array predict(const Array& raw_ics, std::size_t w) const;
  // Latent variant only: latent inputs [n][d] -> raw predictions [n][w][p].
  Array predict_latent(const Array& latent, std::size_t w) const;
};

// One surrogate, or two routed by the initial value of the regime variable.
struct Model {
  Variant variant = Variant::standalone;
  std::vector<Surrogate> parts;  // regime pair: below, above
  std::optional<regimes::RegimeThreshold> threshold;
  ExperimentConfig config;

  const std::vector<std::string>& variables() const { return parts.at(0).prep.variables; }
  std::size_t window() const { return parts.at(0).prep.window; }
  Array predict(const Array& raw_ics, std::size_t w) const;
  // Route of each initial condition (all `below` for single models).
  std::vector<regimes::Regime> routes(const Array& raw_ics) const;
};

struct TrainProgress {
  std::string part;  // "", "below" or "above"
  std::size_t iteration = 0;
  const Model* model = nullptr;  // partially trained, valid during the call
};

struct FitResult {
  Model model;
  std::vector<training::TrainResult> curves;  // one per part
};

// Fits transforms on `train`, initializes the backbone(s) from init_seed and
// trains. on_checkpoint fires at the training checkpoint cadence.
FitResult fit(const TrajectoryDataset& train, const ExperimentConfig& cfg,
              const std::function<void(const TrainProgress&)>& on_checkpoint = {});

}  // namespace kmamba::model
