#include "kmamba/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "kmamba/metrics.hpp"

namespace kmamba::rollout {

using nlohmann::json;

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::time_decomposed: return "time-decomposed";
    case Mode::recursive: return "recursive";
    case Mode::adaptive: return "adaptive";
  }
  return "recursive";
}

Mode parse_mode(const std::string& name) {
  if (name == "time-decomposed") return Mode::time_decomposed;
  if (name == "recursive") return Mode::recursive;
  if (name == "adaptive") return Mode::adaptive;
  throw ConfigError("rollout mode must be time-decomposed, recursive or adaptive, got '" + name + "'");
}

RolloutPlan RolloutPlan::fixed(std::size_t window, std::size_t count, Mode mode) {
  RolloutPlan p;
  p.windows.assign(count, window);
  p.mode = mode;
  return p;
}

std::size_t RolloutPlan::total() const { return std::accumulate(windows.begin(), windows.end(), std::size_t{0}); }

std::vector<std::size_t> RolloutPlan::starts() const {
  std::vector<std::size_t> s;
  std::size_t at = 0;
  for (std::size_t w : windows) {
    s.push_back(at);
    at += w - 1;
  }
  return s;
}

std::size_t RolloutPlan::span() const { return windows.empty() ? 0 : starts().back() + windows.back(); }

void RolloutPlan::validate() const {
  if (windows.empty()) throw ConfigError("rollout plan: no windows");
  for (std::size_t w : windows) {
    if (w < 2) throw ConfigError("rollout plan: every window needs at least 2 points");
  }
}

json RolloutPlan::to_json() const {
  return {{"windows", windows}, {"mode", mode_name(mode)}, {"latent", latent}, {"total", total()}};
}

Array predict_windows(const Array& ics, const WindowPredictor& predictor, std::size_t w) {
  if (ics.rank() != 2) throw ShapeError("predict_windows: expected [n][p] initial conditions");
  Array out = predictor(ics, w);
  if (out.rank() != 3 || out.dim(0) != ics.dim(0) || out.dim(1) != w || out.dim(2) != ics.dim(1)) {
    throw ShapeError("predict_windows: predictor returned " + shape_string(out.shape()) + " for " +
                     std::to_string(ics.dim(0)) + " initial conditions and w = " + std::to_string(w));
  }
  if (!out.all_finite()) throw NumericalError("predict_windows: non-finite prediction");
  return out;
}

namespace {

// Appends window k's prediction [n][w][p] into out [n][total][p] at `offset`.
void place(Array& out, const Array& win, std::size_t offset) {
  const std::size_t n = win.dim(0), w = win.dim(1), p = win.dim(2), total = out.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(&win[i * w * p], w * p, &out[(i * total + offset) * p]);
  }
}

Array last_points(const Array& win) {
  const std::size_t n = win.dim(0), w = win.dim(1), p = win.dim(2);
  Array seeds({n, p});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(&win[(i * w + w - 1) * p], p, &seeds[i * p]);
  return seeds;
}

template <class Step>
Array drive(const Array& ics_in, const RolloutPlan& plan, Step step) {
  plan.validate();
  const bool single = ics_in.rank() == 1;
  const Array ics = single ? ics_in.reshaped({1, ics_in.dim(0)}) : ics_in;
  if (ics.rank() != 2) throw ShapeError("rollout: expected [n][p] or [p] initial conditions");
  const std::size_t n = ics.dim(0), p = ics.dim(1);
  Array out({n, plan.total(), p});
  Array seeds = ics;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < plan.windows.size(); ++k) {
    Array win;
    try {
      win = step(seeds, plan.windows[k]);
    } catch (const NumericalError& e) {
      throw NumericalError("rollout: window " + std::to_string(k) + ": " + e.what());
    }
    if (win.rank() != 3 || win.dim(0) != n || win.dim(1) != plan.windows[k] || win.dim(2) != p) {
      throw ShapeError("rollout: window " + std::to_string(k) + " has shape " + shape_string(win.shape()));
    }
    if (!win.all_finite()) throw NumericalError("rollout: non-finite prediction in window " + std::to_string(k));
    place(out, win, offset);
    offset += plan.windows[k];
    seeds = last_points(win);
  }
  return single ? out.reshaped({plan.total(), p}) : out;
}

}  // namespace

Array recursive_rollout(const Array& ics, const WindowPredictor& predictor, const RolloutPlan& plan) {
  return drive(ics, plan, [&](const Array& seeds, std::size_t w) { return predictor(seeds, w); });
}

Array latent_recursive_rollout(const Array& ics, const LatentPredictor& predictor, const Embedding& embed,
                               const RolloutPlan& plan) {
  return drive(ics, plan, [&](const Array& seeds, std::size_t w) { return predictor(embed(seeds), w); });
}

Array teacher_forced_rollout(const Array& truth, const WindowPredictor& predictor, const RolloutPlan& plan) {
  plan.validate();
  if (truth.rank() != 3) throw ShapeError("teacher_forced_rollout: expected [n][n_t][p] truth");
  const std::size_t n = truth.dim(0), nt = truth.dim(1), p = truth.dim(2);
  if (nt < plan.span()) {
    throw ShapeError("teacher_forced_rollout: truth has " + std::to_string(nt) + " steps, plan needs " +
                     std::to_string(plan.span()));
  }
  Array out({n, plan.total(), p});
  const auto starts = plan.starts();
  std::size_t offset = 0;
  for (std::size_t k = 0; k < plan.windows.size(); ++k) {
    Array seeds({n, p});
    for (std::size_t i = 0; i < n; ++i) std::copy_n(&truth[(i * nt + starts[k]) * p], p, &seeds[i * p]);
    Array win;
    try {
      win = predict_windows(seeds, predictor, plan.windows[k]);
    } catch (const NumericalError& e) {
      throw NumericalError("rollout: window " + std::to_string(k) + ": " + e.what());
    }
    place(out, win, offset);
    offset += plan.windows[k];
  }
  return out;
}

Embedding pca_embedding(const pca::PcaBasis& basis, const pca::LatentScaler* scaler) {
  return [basis, scaler](const Array& full) {
    Array z = pca::project(full, basis);
    return scaler ? scaler->encode(z) : z;
  };
}

Array plan_truth(const Array& truth, const RolloutPlan& plan) {
  plan.validate();
  if (truth.rank() != 3) throw ShapeError("plan_truth: expected [n][n_t][p]");
  const std::size_t n = truth.dim(0), nt = truth.dim(1), p = truth.dim(2);
  if (nt < plan.span()) {
    throw ShapeError("plan_truth: truth has " + std::to_string(nt) + " steps, plan needs " +
                     std::to_string(plan.span()));
  }
  Array out({n, plan.total(), p});
  const auto starts = plan.starts();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < plan.windows.size(); ++k) {
      std::copy_n(&truth[(i * nt + starts[k]) * p], plan.windows[k] * p, &out[(i * plan.total() + offset) * p]);
      offset += plan.windows[k];
    }
  }
  return out;
}

WindowReport window_report(const Array& pred, const Array& truth, const RolloutPlan& plan,
                           std::vector<std::string> variables, double jump_threshold) {
  plan.validate();
  if (pred.shape() != truth.shape() || pred.rank() != 3 || pred.dim(1) != plan.total()) {
    throw ShapeError("window_report: prediction " + shape_string(pred.shape()) + " and truth " +
                     shape_string(truth.shape()) + " do not match a plan of " + std::to_string(plan.total()));
  }
  const std::size_t n = pred.dim(0), total = pred.dim(1), p = pred.dim(2), k = plan.windows.size();
  WindowReport r;
  r.variables = std::move(variables);
  r.threshold = jump_threshold;
  r.errors = Array({k, p});

  std::vector<double> range(p, 0.0);
  for (std::size_t v = 0; v < p; ++v) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t i = 0; i < n * total; ++i) {
      lo = std::min(lo, truth[i * p + v]);
      hi = std::max(hi, truth[i * p + v]);
    }
    range[v] = hi > lo ? hi - lo : 1.0;
  }

  std::size_t offset = 0;
  for (std::size_t w = 0; w < k; ++w) {
    const std::size_t len = plan.windows[w];
    Array ps({n, len, p}), ts({n, len, p});
    for (std::size_t i = 0; i < n; ++i) {
      std::copy_n(&pred[(i * total + offset) * p], len * p, &ps[i * len * p]);
      std::copy_n(&truth[(i * total + offset) * p], len * p, &ts[i * len * p]);
    }
    const auto rep = metrics::rel_l2(ps, ts);
    for (std::size_t v = 0; v < p; ++v) r.errors.at(w, v) = rep.per_variable[v];
    r.mean.push_back(rep.overall);
    r.start.push_back(plan.starts()[w]);
    r.length.push_back(len);

    double jump = 0.0;
    if (w > 0) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t v = 0; v < p; ++v) {
          const double seed = pred[(i * total + offset - 1) * p + v];
          const double first = pred[(i * total + offset) * p + v];
          jump = std::max(jump, std::abs(first - seed) / range[v]);
        }
      }
    }
    r.jump.push_back(jump);
    r.flagged.push_back(jump > jump_threshold);
    offset += len;
  }
  return r;
}

json WindowReport::to_json() const {
  json windows = json::array();
  for (std::size_t w = 0; w < start.size(); ++w) {
    std::vector<double> e(errors.data().begin() + w * variables.size(),
                          errors.data().begin() + (w + 1) * variables.size());
    windows.push_back({{"window", w},
                       {"start", start[w]},
                       {"length", length[w]},
                       {"error_percent", e},
                       {"mean_percent", mean[w]},
                       {"jump", jump[w]},
                       {"flagged", static_cast<bool>(flagged[w])}});
  }
  return {{"variables", variables}, {"jump_threshold", threshold}, {"windows", windows}};
}

void WindowReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f.precision(10);
  f << "window,start,length";
  for (const auto& v : variables) f << ',' << v;
  f << ",mean,jump,flagged\n";
  for (std::size_t w = 0; w < start.size(); ++w) {
    f << w << ',' << start[w] << ',' << length[w];
    for (std::size_t v = 0; v < variables.size(); ++v) f << ',' << errors.at(w, v);
    f << ',' << mean[w] << ',' << jump[w] << ',' << (flagged[w] ? 1 : 0) << '\n';
  }
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace kmamba::rollout
