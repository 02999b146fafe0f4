#include "kmamba/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "kmamba/checkpoint.hpp"
#include "kmamba/datagen.hpp"
#include "kmamba/dataset.hpp"
#include "kmamba/metrics.hpp"
#include "kmamba/model.hpp"
#include "kmamba/rollout.hpp"

namespace kmamba::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
  if (!f) throw IoError("failed writing " + path.string());
}

// Top-level config file: the experiment keys plus data paths, rollout and
// metric options.
struct RunConfig {
  json experiment = json::object();
  std::string train_path, test_path;
  std::vector<std::size_t> rollout_windows;
  std::string rollout_mode = "recursive";
  double jump_threshold = 0.05;
  bool clip = false;
};

RunConfig load_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  json j = read_json(path);
  if (!j.is_object()) throw ConfigError(path + ": expected a JSON object");
  auto take = [&](const char* key, const std::set<std::string>& allowed, auto&& fn) {
    if (!j.contains(key)) return;
    const json sub = j.at(key);
    if (!sub.is_object()) throw ConfigError(std::string(key) + ": expected an object");
    for (const auto& [k, v] : sub.items()) {
      if (!allowed.count(k)) throw ConfigError(std::string(key) + ": unknown key '" + k + "'");
    }
    try {
      fn(sub);
    } catch (const json::exception& e) {
      throw ConfigError(std::string(key) + ": " + e.what());
    }
    j.erase(key);
  };
  take("data", {"train", "test"}, [&](const json& d) {
    if (d.contains("train")) rc.train_path = d.at("train").get<std::string>();
    if (d.contains("test")) rc.test_path = d.at("test").get<std::string>();
  });
  take("rollout", {"windows", "mode", "jump_threshold"}, [&](const json& r) {
    if (r.contains("windows")) rc.rollout_windows = r.at("windows").get<std::vector<std::size_t>>();
    if (r.contains("mode")) rc.rollout_mode = r.at("mode").get<std::string>();
    if (r.contains("jump_threshold")) rc.jump_threshold = r.at("jump_threshold").get<double>();
  });
  take("metrics", {"clip"}, [&](const json& m) {
    if (m.contains("clip")) rc.clip = m.at("clip").get<bool>();
  });
  rc.experiment = j;
  model::ExperimentConfig::from_json(rc.experiment);  // validates keys early
  return rc;
}

std::vector<std::size_t> parse_windows(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v < 2) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("--plan: '" + item + "' is not a window length >= 2");
    }
  }
  if (out.empty()) throw ConfigError("--plan: no windows given");
  return out;
}

struct GenArgs {
  std::string mechanism = "robertson";
  std::string mechanism_config;
  std::size_t samples = 0;
  std::size_t nt = 1001;
  double dt = 1e-4;
  std::uint64_t seed = 0;
  double test_fraction = 0.0;
  std::string out;
};

int cmd_gen_data(const GenArgs& a, std::ostream& out) {
  datagen::MechanismSpec spec;
  if (!a.mechanism_config.empty()) {
    json j = read_json(a.mechanism_config);
    if (!j.contains("mechanism")) j["mechanism"] = a.mechanism;
    spec = datagen::MechanismSpec::from_json(j);
  } else {
    spec = datagen::parse_mechanism(a.mechanism) == datagen::MechanismId::robertson
               ? datagen::MechanismSpec::robertson()
               : datagen::MechanismSpec::one_step_ignition();
  }
  if (!(a.test_fraction >= 0.0 && a.test_fraction < 1.0)) throw ConfigError("--test-fraction must be in [0, 1)");
  const std::size_t n_test = static_cast<std::size_t>(std::llround(a.test_fraction * static_cast<double>(a.samples)));
  const auto all = datagen::generate_dataset(spec, a.samples, a.nt, a.dt, a.seed, "train");

  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < a.samples; ++i) (i < a.samples - n_test ? train_idx : test_idx).push_back(i);
  auto train = all.subset(train_idx);
  train.manifest.split = "train";
  write_dataset(a.out, train);
  json resolved{{"command", "gen-data"}, {"mechanism", spec.to_json()}, {"samples", a.samples},
                {"nt", a.nt},            {"dt", a.dt},                 {"seed", a.seed},
                {"test_fraction", a.test_fraction}};
  write_json(fs::path(a.out) / "resolved-config.json", resolved);
  out << "wrote " << train.samples() << " trajectories to " << a.out << '\n';
  if (n_test > 0) {
    auto test = all.subset(test_idx);
    test.manifest.split = "test";
    const std::string test_dir = a.out + "-test";
    write_dataset(test_dir, test);
    write_json(fs::path(test_dir) / "resolved-config.json", resolved);
    out << "wrote " << test.samples() << " trajectories to " << test_dir << '\n';
  }
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string variant;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iterations;
};

model::ExperimentConfig resolve_experiment(const RunConfig& rc, const TrainArgs& a) {
  json j = rc.experiment;
  if (!a.variant.empty()) j["variant"] = a.variant;
  if (a.seed) {
    j["seed"] = *a.seed;
    j["train"]["seed"] = *a.seed;
  }
  if (a.iterations) j["train"]["iterations"] = *a.iterations;
  return model::ExperimentConfig::from_json(j);
}

std::string iteration_tag(std::size_t it) {
  std::string s = std::to_string(it);
  return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const RunConfig rc = load_config(a.config);
  const auto cfg = resolve_experiment(rc, a);
  const std::string data_path = !a.data.empty() ? a.data : rc.train_path;
  if (data_path.empty()) throw ConfigError("train: no training data (--data or data.train)");
  const auto train = read_dataset(data_path);
  const fs::path dir = a.out;
  fs::create_directories(dir / "checkpoints");

  json resolved = cfg.to_json();
  resolved["data"] = {{"train", data_path}};
  write_json(dir / "resolved-config.json", resolved);

  auto result = model::fit(train, cfg, [&](const model::TrainProgress& p) {
    const std::string name = "iter-" + iteration_tag(p.iteration) + (p.part.empty() ? "" : "-" + p.part) + ".kmc";
    checkpoint::save_model(dir / "checkpoints" / name, *p.model, {{"iteration", p.iteration}, {"part", p.part}});
  });

  json extra{{"train_data", data_path}};
  const std::vector<std::string> names =
      result.curves.size() == 2 ? std::vector<std::string>{"below", "above"} : std::vector<std::string>{""};
  for (std::size_t k = 0; k < result.curves.size(); ++k) {
    const std::string file = names[k].empty() ? "loss.csv" : "loss-" + names[k] + ".csv";
    training::write_loss_csv(dir / file, result.curves[k]);
    extra["loss" + (names[k].empty() ? std::string() : "_" + names[k])] = result.curves[k].loss;
    out << (names[k].empty() ? std::string("model") : names[k]) << ": final loss " << result.curves[k].loss.back()
        << '\n';
  }
  if (result.model.threshold) out << "regime threshold tau = " << result.model.threshold->tau << '\n';
  checkpoint::save_model(dir / "model.kmc", result.model, extra);
  out << "wrote " << (dir / "model.kmc").string() << '\n';
  return 0;
}

int cmd_fit_stats(const TrainArgs& a, std::ostream& out) {
  const RunConfig rc = load_config(a.config);
  const auto cfg = resolve_experiment(rc, a);
  const std::string data_path = !a.data.empty() ? a.data : rc.train_path;
  if (data_path.empty()) throw ConfigError("fit-stats: no training data (--data or data.train)");
  const auto train = read_dataset(data_path);
  json j{{"variant", model::variant_name(cfg.variant)}, {"data", data_path}};
  if (cfg.variant == model::Variant::regime_pair) {
    auto th = regimes::compute_tau(regimes::profiles(train, cfg.regime_variable), cfg.regime_epsilon);
    th.variable = cfg.regime_variable;
    auto [below, above] = regimes::partition(train, th);
    j["threshold"] = th.to_json();
    j["counts"] = {{"below", below.samples()}, {"above", above.samples()}};
    if (below.samples() > 0) j["below"] = model::Preprocessor::fit(below, model::Variant::standalone, cfg).to_json();
    if (above.samples() > 0) j["above"] = model::Preprocessor::fit(above, model::Variant::standalone, cfg).to_json();
  } else {
    j["preprocessor"] = model::Preprocessor::fit(train, cfg.variant, cfg).to_json();
  }
  const fs::path dir = a.out;
  write_json(dir / "stats.json", j);
  json resolved = cfg.to_json();
  resolved["data"] = {{"train", data_path}};
  write_json(dir / "resolved-config.json", resolved);
  out << "wrote " << (dir / "stats.json").string() << '\n';
  return 0;
}

void check_variables(const model::Model& m, const TrajectoryDataset& ds) {
  if (ds.manifest.variables != m.variables()) throw ConfigError("dataset variables do not match the model");
}

TrajectoryDataset as_prediction(const TrajectoryDataset& like, Array data) {
  TrajectoryDataset out;
  out.manifest = like.manifest;
  out.manifest.split = "prediction";
  out.manifest.n_t = data.dim(1);
  out.data = std::move(data);
  return out;
}

struct PredictArgs {
  std::string model;
  std::string data;
  std::string out;
  std::size_t segments = 0;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const auto m = checkpoint::load_model(a.model);
  const auto ds = read_dataset(a.data);
  check_variables(m, ds);
  pipeline::WindowPlan plan = m.config.plan;
  if (a.segments) plan.segments = a.segments;
  const Array windows = pipeline::time_decompose(ds.data, plan);
  const Array pred = rollout::predict_windows(pipeline::first_points(windows),
                                              [&](const Array& ics, std::size_t w) { return m.predict(ics, w); },
                                              plan.window);
  const auto result = as_prediction(ds, pipeline::reconstruct(pred, plan));
  write_dataset(a.out, result);
  const auto r = rollout::RolloutPlan::fixed(plan.window, plan.segments, rollout::Mode::time_decomposed);
  write_json(fs::path(a.out) / "layout.json", r.to_json());
  write_json(fs::path(a.out) / "resolved-config.json",
             {{"command", "predict"}, {"model", a.model}, {"data", a.data}, {"plan", r.to_json()}});
  out << "wrote " << result.samples() << " predictions of " << result.steps() << " points to " << a.out << '\n';
  return 0;
}

struct RolloutArgs {
  std::string config;
  std::string model;
  std::string data;
  std::string out;
  std::string plan;
  std::string mode;
  bool teacher = false;
  std::optional<double> jump_threshold;
};

int cmd_rollout(const RolloutArgs& a, std::ostream& out) {
  const RunConfig rc = load_config(a.config);
  const auto m = checkpoint::load_model(a.model);
  const std::string data_path = !a.data.empty() ? a.data : rc.test_path;
  if (data_path.empty()) throw ConfigError("rollout: no data (--data or data.test)");
  const auto ds = read_dataset(data_path);
  check_variables(m, ds);

  rollout::RolloutPlan plan;
  plan.windows = !a.plan.empty() ? parse_windows(a.plan) : rc.rollout_windows;
  if (plan.windows.empty()) plan.windows.assign(m.config.plan.segments, m.window());
  plan.mode = rollout::parse_mode(!a.mode.empty() ? a.mode : rc.rollout_mode);
  plan.latent = m.variant == model::Variant::latent;
  plan.validate();
  const double threshold = a.jump_threshold.value_or(rc.jump_threshold);

  auto predictor = [&](const Array& ics, std::size_t w) { return m.predict(ics, w); };
  Array pred;
  if (a.teacher || plan.mode == rollout::Mode::time_decomposed) {
    pred = rollout::teacher_forced_rollout(ds.data, predictor, plan);
  } else if (plan.latent) {
    const auto& part = m.parts.at(0);
    pred = rollout::latent_recursive_rollout(
        ds.initial_conditions(), [&](const Array& z, std::size_t w) { return part.predict_latent(z, w); },
        [&](const Array& full) { return part.prep.features(full); }, plan);
  } else {
    pred = rollout::recursive_rollout(ds.initial_conditions(), predictor, plan);
  }
  const fs::path dir = a.out;
  write_dataset(dir, as_prediction(ds, pred));
  write_json(dir / "layout.json", plan.to_json());

  const Array truth = rollout::plan_truth(ds.data, plan);
  const auto report = rollout::window_report(pred, truth, plan, ds.manifest.variables, threshold);
  report.write_csv(dir / "window_errors.csv");
  write_json(dir / "window_report.json", report.to_json());
  write_json(dir / "resolved-config.json", {{"command", "rollout"},
                                            {"model", a.model},
                                            {"data", data_path},
                                            {"plan", plan.to_json()},
                                            {"teacher_forcing", a.teacher},
                                            {"jump_threshold", threshold}});
  std::size_t flagged = 0;
  for (bool f : report.flagged) flagged += f ? 1 : 0;
  out << "rollout of " << plan.total() << " points per trajectory; last window error " << report.mean.back()
      << "%; " << flagged << " flagged boundaries\n";
  return 0;
}

struct EvalArgs {
  std::string pred;
  std::string truth;
  std::string out;
  bool clip = false;
};

int cmd_evaluate(const EvalArgs& a, std::ostream& out) {
  const auto pred = read_dataset(a.pred);
  const auto truth_ds = read_dataset(a.truth);
  if (pred.manifest.variables != truth_ds.manifest.variables) {
    throw ConfigError("evaluate: prediction and truth variables differ");
  }
  if (pred.samples() != truth_ds.samples()) throw ConfigError("evaluate: sample counts differ");
  Array truth = truth_ds.data;
  const fs::path layout = fs::path(a.pred) / "layout.json";
  if (fs::exists(layout)) {
    const json lj = read_json(layout);
    rollout::RolloutPlan plan;
    plan.windows = lj.at("windows").get<std::vector<std::size_t>>();
    truth = rollout::plan_truth(truth_ds.data, plan);
  }
  if (truth.shape() != pred.data.shape()) {
    throw ShapeError("evaluate: prediction " + shape_string(pred.data.shape()) + " vs truth " +
                     shape_string(truth.shape()));
  }
  const auto report = metrics::rel_l2(pred.data, truth, a.clip ? metrics::Clip::epsilon_rule : metrics::Clip::off,
                                      pred.manifest.variables);
  const fs::path dir = a.out;
  fs::create_directories(dir);
  report.write_csv(dir / "errors.csv");
  report.write_summary_csv(dir / "summary.csv");
  write_json(dir / "report.json", report.to_json());
  write_json(dir / "resolved-config.json",
             {{"command", "evaluate"}, {"pred", a.pred}, {"truth", a.truth}, {"clip", a.clip}});
  out << "overall relative L2 error " << report.overall << "%\n";
  return 0;
}

struct ExportArgs {
  std::string from;
  std::string out;
};

// Plot-ready CSVs from a train, evaluate or rollout output directory.
int cmd_export(const ExportArgs& a, std::ostream& out) {
  const fs::path src = a.from, dir = a.out;
  fs::create_directories(dir);
  std::size_t written = 0;
  if (fs::exists(src / "model.kmc")) {
    const auto c = checkpoint::read(src / "model.kmc");
    const json& extra = c.header.at("extra");
    std::ofstream f(dir / "loss_curve.csv");
    f.precision(17);
    f << "part,iteration,loss\n";
    for (const auto& [key, values] : extra.items()) {
      if (key.rfind("loss", 0) != 0) continue;
      const std::string part = key == "loss" ? "model" : key.substr(5);
      std::size_t it = 0;
      for (double v : values) f << part << ',' << ++it << ',' << v << '\n';
    }
    ++written;
  }
  if (fs::exists(src / "errors.csv")) {
    fs::copy_file(src / "errors.csv", dir / "sample_errors.csv", fs::copy_options::overwrite_existing);
    ++written;
  }
  if (fs::exists(src / "window_report.json")) {
    const json r = read_json(src / "window_report.json");
    std::ofstream f(dir / "window_errors.csv");
    f.precision(17);
    f << "window,start,length,variable,error_percent,jump,flagged\n";
    const auto vars = r.at("variables").get<std::vector<std::string>>();
    for (const auto& w : r.at("windows")) {
      for (std::size_t v = 0; v < vars.size(); ++v) {
        f << w.at("window").get<std::size_t>() << ',' << w.at("start").get<std::size_t>() << ','
          << w.at("length").get<std::size_t>() << ',' << vars[v] << ',' << w.at("error_percent")[v].get<double>()
          << ',' << w.at("jump").get<double>() << ',' << (w.at("flagged").get<bool>() ? 1 : 0) << '\n';
      }
    }
    ++written;
  }
  if (written == 0) throw IoError("export: no train, evaluate or rollout artifacts in " + src.string());
  write_json(dir / "resolved-config.json", {{"command", "export"}, {"from", a.from}});
  out << "exported " << written << " table(s) to " << a.out << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"kmamba: selective state-space surrogates for stiff chemical kinetics"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a trajectory dataset");
  g->add_option("--mechanism", gen.mechanism, "robertson | one-step-ignition");
  g->add_option("--mechanism-config", gen.mechanism_config, "JSON mechanism parameters");
  g->add_option("--samples", gen.samples, "Number of trajectories")->required();
  g->add_option("--nt", gen.nt, "Time points per trajectory");
  g->add_option("--dt", gen.dt, "Sampling interval [s]");
  g->add_option("--seed", gen.seed, "Seed for initial conditions");
  g->add_option("--test-fraction", gen.test_fraction, "Share of samples written to <out>-test");
  g->add_option("--out", gen.out, "Output dataset directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Fit transforms and train a model");
  t->add_option("--config", tr.config, "Experiment config (JSON)");
  t->add_option("--data", tr.data, "Training dataset directory");
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--variant", tr.variant, "standalone | mass-conserving | latent | regime-pair");
  t->add_option("--seed", tr.seed, "Seed for initialization and shuffling");
  t->add_option("--iterations", tr.iterations, "Optimizer steps");

  TrainArgs fsa;
  auto* f = app.add_subcommand("fit-stats", "Fit normalization, PCA and regime threshold");
  f->add_option("--config", fsa.config, "Experiment config (JSON)");
  f->add_option("--data", fsa.data, "Training dataset directory");
  f->add_option("--out", fsa.out, "Output directory")->required();
  f->add_option("--variant", fsa.variant, "Model variant");

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Time-decomposed prediction from ground-truth window seeds");
  p->add_option("--model", pr.model, "Checkpoint")->required();
  p->add_option("--data", pr.data, "Dataset directory")->required();
  p->add_option("--out", pr.out, "Output dataset directory")->required();
  p->add_option("--segments", pr.segments, "Override the number of windows");

  RolloutArgs ro;
  auto* r = app.add_subcommand("rollout", "Recursive or adaptive rollout from initial conditions");
  r->add_option("--config", ro.config, "Experiment config (JSON) with a rollout section");
  r->add_option("--model", ro.model, "Checkpoint")->required();
  r->add_option("--data", ro.data, "Dataset directory (initial conditions and truth)");
  r->add_option("--out", ro.out, "Output directory")->required();
  r->add_option("--plan", ro.plan, "Window lengths, e.g. 101,76,31");
  r->add_option("--mode", ro.mode, "recursive | adaptive | time-decomposed");
  r->add_flag("--teacher-forcing", ro.teacher, "Seed every window from the ground truth");
  r->add_option("--jump-threshold", ro.jump_threshold, "Boundary jump report threshold (range-scaled)");

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "Relative L2 error of predictions against truth");
  e->add_option("--pred", ev.pred, "Prediction dataset directory")->required();
  e->add_option("--truth", ev.truth, "Ground-truth dataset directory")->required();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_flag("--clip", ev.clip, "Floor small denominators (epsilon rule)");

  ExportArgs ex;
  auto* x = app.add_subcommand("export", "Plot-ready CSV tables from a run directory");
  x->add_option("--from", ex.from, "train, evaluate or rollout output directory")->required();
  x->add_option("--out", ex.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << '\n';
    return 2;
  }

  try {
    if (g->parsed()) return cmd_gen_data(gen, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (f->parsed()) return cmd_fit_stats(fsa, out);
    if (p->parsed()) return cmd_predict(pr, out);
    if (r->parsed()) return cmd_rollout(ro, out);
    if (e->parsed()) return cmd_evaluate(ev, out);
    if (x->parsed()) return cmd_export(ex, out);
  } catch (const ConfigError& ce) {
    err << "config error: " << ce.what() << '\n';
    return 2;
  } catch (const ShapeError& se) {
    err << "config error: " << se.what() << '\n';
    return 2;
  } catch (const NumericalError& ne) {
    err << "numerical error: " << ne.what() << '\n';
    return 3;
  } catch (const DomainError& de) {
    err << "numerical error: " << de.what() << '\n';
    return 3;
  } catch (const IoError& ie) {
    err << "io error: " << ie.what() << '\n';
    return 4;
  } catch (const fs::filesystem_error& fe) {
    err << "io error: " << fe.what() << '\n';
    return 4;
  } catch (const std::exception& ex2) {
    err << "error: " << ex2.what() << '\n';
    return 1;
  }
  return 1;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("kmamba");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace kmamba::cli
