#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kmamba/array.hpp"
#include "kmamba/ssm.hpp"
#include "kmamba/tensor.hpp"

namespace kmamba::training {

// Mean over all elements of (pred - target)^2.
ad::Tensor mse_loss(const ad::Tensor& pred, const ad::Tensor& target);

enum class ScheduleKind { constant, linear, step };

// Multiplicative learning-rate factor as a function of the epoch.
struct Schedule {
  ScheduleKind kind = ScheduleKind::constant;
  double end_factor = 0.1;      // linear: factor reached at decay_epochs
  std::size_t decay_epochs = 0; // linear: 0 -> the whole run
  std::size_t step_size = 10;   // step: epochs between decays
  double gamma = 0.5;           // step: factor per decay

  double factor(std::size_t epoch, std::size_t total_epochs) const;
  nlohmann::json to_json() const;
  static Schedule from_json(const nlohmann::json& j);
};

struct TrainConfig {
  double lr = 1e-3;
  Schedule schedule;
  std::size_t batch_size = 256;
  std::size_t iterations = 1000;  // optimizer steps
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 500;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // One update of every parameter in place. grads aligned with params.
  void step(std::vector<ssm::NamedArray>& params, const std::vector<Array>& grads, double lr);

  std::size_t steps() const { return t_; }
  const std::vector<Array>& first_moment() const { return m_; }
  const std::vector<Array>& second_moment() const { return v_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Array> m_, v_;
};

// Network inputs [n][w][f] and normalized targets [n][w][q].
struct WindowSet {
  Array inputs;
  Array targets;
  std::size_t size() const { return inputs.rank() ? inputs.dim(0) : 0; }
  WindowSet subset(const std::vector<std::size_t>& rows) const;
};

// Loss and parameter gradients on the given rows.
struct LossGrad {
  double loss = 0.0;
  std::vector<Array> grads;
};
LossGrad loss_and_grad(const ssm::Backbone& net, const WindowSet& data,
                       const std::vector<std::size_t>& rows);

double evaluate_loss(const ssm::Backbone& net, const WindowSet& data, std::size_t batch_size = 256);

struct TrainResult {
  std::vector<double> loss;  // per iteration
  std::vector<double> lr;    // per iteration
};

// Called after iterations that are multiples of checkpoint_every and after
// the last one.
using CheckpointFn = std::function<void(std::size_t iteration, const ssm::Backbone& net)>;

// Adam on minibatches drawn from a per-epoch shuffle seeded by cfg.seed.
// Throws NumericalError naming the iteration and batch on a non-finite loss.
TrainResult train(ssm::Backbone& net, const WindowSet& data, const TrainConfig& cfg,
                  const CheckpointFn& on_checkpoint = {});

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result);

}  // namespace kmamba::training
