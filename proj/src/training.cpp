#include "kmamba/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "kmamba/rng.hpp"

namespace kmamba::training {

using nlohmann::json;

ad::Tensor mse_loss(const ad::Tensor& pred, const ad::Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: shapes " + shape_string(pred.shape()) + " and " +
                     shape_string(target.shape()) + " differ");
  }
  return ad::mean(ad::square(ad::sub(pred, target)));
}

namespace {

const char* schedule_name(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::constant: return "constant";
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::step: return "step";
  }
  return "constant";
}

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

double Schedule::factor(std::size_t epoch, std::size_t total_epochs) const {
  switch (kind) {
    case ScheduleKind::constant:
      return 1.0;
    case ScheduleKind::linear: {
      const std::size_t span = decay_epochs ? decay_epochs : std::max<std::size_t>(total_epochs, 1);
      const double frac = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(span));
      return 1.0 + (end_factor - 1.0) * frac;
    }
    case ScheduleKind::step:
      return std::pow(gamma, static_cast<double>(epoch / step_size));
  }
  return 1.0;
}

json Schedule::to_json() const {
  return {{"kind", schedule_name(kind)}, {"end_factor", end_factor}, {"decay_epochs", decay_epochs},
          {"step_size", step_size},      {"gamma", gamma}};
}

Schedule Schedule::from_json(const json& j) {
  reject_unknown(j, {"kind", "end_factor", "decay_epochs", "step_size", "gamma"}, "schedule");
  Schedule s;
  std::string kind = "constant";
  read_opt(j, "kind", kind, "schedule");
  if (kind == "constant") s.kind = ScheduleKind::constant;
  else if (kind == "linear") s.kind = ScheduleKind::linear;
  else if (kind == "step") s.kind = ScheduleKind::step;
  else throw ConfigError("schedule.kind: expected constant, linear or step, got '" + kind + "'");
  read_opt(j, "end_factor", s.end_factor, "schedule");
  read_opt(j, "decay_epochs", s.decay_epochs, "schedule");
  read_opt(j, "step_size", s.step_size, "schedule");
  read_opt(j, "gamma", s.gamma, "schedule");
  if (s.step_size == 0) throw ConfigError("schedule.step_size must be at least 1");
  if (!(s.gamma > 0.0) || !(s.end_factor >= 0.0)) throw ConfigError("schedule: factors must be positive");
  return s;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be a finite nonnegative number");
  if (batch_size < 1) throw ConfigError("train: batch_size must be at least 1");
  if (checkpoint_every < 1) throw ConfigError("train: checkpoint_every must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(adam_eps > 0.0)) {
    throw ConfigError("train: invalid Adam hyperparameters");
  }
}

json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"schedule", schedule.to_json()},
          {"batch_size", batch_size},
          {"iterations", iterations},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  reject_unknown(j, {"lr", "schedule", "batch_size", "iterations", "seed", "checkpoint_every", "beta1", "beta2",
                     "adam_eps"},
                 "train");
  TrainConfig c;
  read_opt(j, "lr", c.lr, "train");
  if (j.contains("schedule")) c.schedule = Schedule::from_json(j.at("schedule"));
  read_opt(j, "batch_size", c.batch_size, "train");
  read_opt(j, "iterations", c.iterations, "train");
  read_opt(j, "seed", c.seed, "train");
  read_opt(j, "checkpoint_every", c.checkpoint_every, "train");
  read_opt(j, "beta1", c.beta1, "train");
  read_opt(j, "beta2", c.beta2, "train");
  read_opt(j, "adam_eps", c.adam_eps, "train");
  c.validate();
  return c;
}

void Adam::step(std::vector<ssm::NamedArray>& params, const std::vector<Array>& grads, double lr) {
  if (grads.size() != params.size()) throw ShapeError("adam: gradient count does not match parameters");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = params[k].value;
    if (grads[k].shape() != w.shape()) throw ShapeError("adam: gradient shape mismatch for " + params[k].name);
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grads[k][i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

WindowSet WindowSet::subset(const std::vector<std::size_t>& rows) const {
  auto take = [&](const Array& a) {
    const std::size_t row = a.size() / a.dim(0);
    Shape shape = a.shape();
    shape[0] = rows.size();
    Array out(shape);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] >= a.dim(0)) throw ShapeError("window set: row index out of range");
      std::copy_n(a.data().begin() + rows[r] * row, row, out.data().begin() + r * row);
    }
    return out;
  };
  return {take(inputs), take(targets)};
}

LossGrad loss_and_grad(const ssm::Backbone& net, const WindowSet& data, const std::vector<std::size_t>& rows) {
  WindowSet batch = data.subset(rows);
  auto params = net.parameter_tensors();
  auto pred = net.forward(ad::Tensor::constant(std::move(batch.inputs)), params);
  auto loss = mse_loss(pred, ad::Tensor::constant(std::move(batch.targets)));
  LossGrad out;
  out.loss = loss.item();
  out.grads = ad::backward_grad(loss, params);
  return out;
}

double evaluate_loss(const ssm::Backbone& net, const WindowSet& data, std::size_t batch_size) {
  const std::size_t n = data.size();
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> rows(std::min(batch_size, n - start));
    std::iota(rows.begin(), rows.end(), start);
    WindowSet batch = data.subset(rows);
    Array pred = net.predict(batch.inputs);
    double sq = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred[i] - batch.targets[i];
      sq += d * d;
    }
    total += sq;
  }
  return total / static_cast<double>(data.targets.size());
}

TrainResult train(ssm::Backbone& net, const WindowSet& data, const TrainConfig& cfg,
                  const CheckpointFn& on_checkpoint) {
  cfg.validate();
  const std::size_t n = data.size();
  if (n == 0) throw ConfigError("train: no training windows");
  if (data.targets.rank() != 3 || data.targets.dim(0) != n) throw ShapeError("train: inputs and targets disagree");
  const auto& mc = net.config();
  if (data.inputs.dim(2) != mc.in_dim || data.targets.dim(2) != mc.out_dim) {
    throw ShapeError("train: data widths do not match the model");
  }

  const std::size_t batch = std::min(cfg.batch_size, n);
  const std::size_t per_epoch = (n + batch - 1) / batch;
  const std::size_t total_epochs = (cfg.iterations + per_epoch - 1) / per_epoch;

  Rng rng(cfg.seed);
  Adam opt(cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.loss.reserve(cfg.iterations);
  result.lr.reserve(cfg.iterations);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const std::size_t epoch = it / per_epoch;
    const std::size_t b = it % per_epoch;
    if (b == 0) rng.shuffle(order);
    const std::size_t begin = b * batch;
    std::vector<std::size_t> rows(order.begin() + begin, order.begin() + std::min(n, begin + batch));

    LossGrad lg;
    try {
      lg = loss_and_grad(net, data, rows);
    } catch (const NumericalError& e) {
      throw NumericalError("train: non-finite value at iteration " + std::to_string(it + 1) + ", batch " +
                           std::to_string(b) + ": " + e.what());
    }
    if (!std::isfinite(lg.loss)) {
      throw NumericalError("train: non-finite loss at iteration " + std::to_string(it + 1) + ", batch " +
                           std::to_string(b));
    }
    const double lr = cfg.lr * cfg.schedule.factor(epoch, total_epochs);
    opt.step(net.parameters(), lg.grads, lr);
    result.loss.push_back(lg.loss);
    result.lr.push_back(lr);

    const bool last = it + 1 == cfg.iterations;
    if (on_checkpoint && (last || (it + 1) % cfg.checkpoint_every == 0)) on_checkpoint(it + 1, net);
  }
  return result;
}

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f.precision(17);
  f << "iteration,loss,lr\n";
  for (std::size_t i = 0; i < result.loss.size(); ++i) {
    f << i + 1 << ',' << result.loss[i] << ',' << result.lr[i] << '\n';
  }
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace kmamba::training
