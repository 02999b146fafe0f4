#include "kmamba/model.hpp"

#include <algorithm>
#include <iostream>
#include <set>

namespace kmamba::model {

using nlohmann::json;

namespace {

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

template <class E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> options,
             const std::string& where) {
  std::string names;
  for (const auto& [name, value] : options) {
    if (s == name) return value;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError(where + ": expected one of " + names + ", got '" + s + "'");
}

const char* norm_name(ssm::NormKind k) { return k == ssm::NormKind::rms ? "rms" : "layer"; }
const char* zoh_name(ssm::ZohVariant v) { return v == ssm::ZohVariant::standard ? "standard" : "literal"; }
const char* scan_name(ssm::ScanMode m) { return m == ssm::ScanMode::sequential ? "sequential" : "parallel"; }

// Samples with any point on a degenerate simplex face cannot be encoded.
TrajectoryDataset drop_degenerate(const TrajectoryDataset& ds, const simplex::SpeciesLayout& layout) {
  const std::size_t ns = ds.samples(), nt = ds.steps(), p = ds.variables();
  std::vector<std::size_t> keep;
  std::vector<double> y(layout.species.size());
  for (std::size_t s = 0; s < ns; ++s) {
    bool ok = true;
    for (std::size_t t = 0; t < nt && ok; ++t) {
      for (std::size_t k = 0; k < y.size(); ++k) y[k] = std::max(ds.data[(s * nt + t) * p + layout.species[k]], 0.0);
      ok = !simplex::on_degenerate_face(y);
    }
    if (ok) keep.push_back(s);
  }
  if (keep.size() == ns) return ds;
  std::clog << "mass-conserving: dropping " << ns - keep.size() << " of " << ns
            << " samples that touch a degenerate simplex face\n";
  if (keep.empty()) throw DomainError("mass-conserving: every sample touches a degenerate simplex face");
  return ds.subset(keep);
}

Array rows_of(const Array& a, const std::vector<std::size_t>& rows) {
  const std::size_t row = a.dim(0) ? a.size() / a.dim(0) : 0;
  Shape shape = a.shape();
  shape[0] = rows.size();
  Array out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(a.data().begin() + rows[r] * row, row, out.data().begin() + r * row);
  }
  return out;
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::standalone: return "standalone";
    case Variant::mass_conserving: return "mass-conserving";
    case Variant::latent: return "latent";
    case Variant::regime_pair: return "regime-pair";
  }
  return "standalone";
}

Variant parse_variant(const std::string& name) {
  return parse_enum<Variant>(name,
                             {{"standalone", Variant::standalone},
                              {"mass-conserving", Variant::mass_conserving},
                              {"latent", Variant::latent},
                              {"regime-pair", Variant::regime_pair}},
                             "variant");
}

json model_config_to_json(const ssm::ModelConfig& c) {
  return {{"in_dim", c.in_dim},     {"out_dim", c.out_dim},       {"d_model", c.d_model},
          {"n_layers", c.n_layers}, {"state_dim", c.state_dim},   {"expand", c.expand},
          {"conv_width", c.conv_width}, {"dt_rank", c.dt_rank},   {"norm", norm_name(c.norm)},
          {"zoh", zoh_name(c.zoh)}, {"scan", scan_name(c.scan_mode)}, {"dt_min", c.dt_min},
          {"dt_max", c.dt_max}};
}

ssm::ModelConfig model_config_from_json(const json& j) {
  reject_unknown(j, {"in_dim", "out_dim", "d_model", "n_layers", "state_dim", "expand", "conv_width", "dt_rank",
                     "norm", "zoh", "scan", "dt_min", "dt_max"},
                 "network");
  ssm::ModelConfig c;
  read_opt(j, "in_dim", c.in_dim, "network");
  read_opt(j, "out_dim", c.out_dim, "network");
  read_opt(j, "d_model", c.d_model, "network");
  read_opt(j, "n_layers", c.n_layers, "network");
  read_opt(j, "state_dim", c.state_dim, "network");
  read_opt(j, "expand", c.expand, "network");
  read_opt(j, "conv_width", c.conv_width, "network");
  read_opt(j, "dt_rank", c.dt_rank, "network");
  read_opt(j, "dt_min", c.dt_min, "network");
  read_opt(j, "dt_max", c.dt_max, "network");
  std::string s;
  if (j.contains("norm")) {
    read_opt(j, "norm", s, "network");
    c.norm = parse_enum<ssm::NormKind>(s, {{"rms", ssm::NormKind::rms}, {"layer", ssm::NormKind::layer}},
                                       "network.norm");
  }
  if (j.contains("zoh")) {
    read_opt(j, "zoh", s, "network");
    c.zoh = parse_enum<ssm::ZohVariant>(
        s, {{"standard", ssm::ZohVariant::standard}, {"literal", ssm::ZohVariant::literal}}, "network.zoh");
  }
  if (j.contains("scan")) {
    read_opt(j, "scan", s, "network");
    c.scan_mode = parse_enum<ssm::ScanMode>(
        s, {{"sequential", ssm::ScanMode::sequential}, {"parallel", ssm::ScanMode::parallel}}, "network.scan");
  }
  return c;
}

void ExperimentConfig::validate() const {
  auto net = network;
  net.in_dim = std::max<std::size_t>(net.in_dim, 1);
  net.out_dim = std::max<std::size_t>(net.out_dim, 1);
  net.validate();
  if (!(exponent > 0.0)) throw ConfigError("pipeline.exponent must be positive");
  plan.validate();
  if (variant == Variant::mass_conserving && species.size() < 2) {
    throw ConfigError("mass-conserving variant needs at least two species");
  }
  if (!(regime_epsilon > 0.0)) throw ConfigError("regime.epsilon must be positive");
  train.validate();
}

json ExperimentConfig::to_json() const {
  json net = model_config_to_json(network);
  net.erase("in_dim");
  net.erase("out_dim");
  return {{"variant", variant_name(variant)},
          {"seed", init_seed},
          {"network", net},
          {"pipeline",
           {{"exponent", exponent},
            {"window", plan.window},
            {"segments", plan.segments},
            {"time_channel", time_channel}}},
          {"species", species},
          {"latent_dim", latent_dim},
          {"regime", {{"epsilon", regime_epsilon}, {"variable", regime_variable}}},
          {"train", train.to_json()}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  reject_unknown(j, {"variant", "seed", "network", "pipeline", "species", "latent_dim", "regime", "train"},
                 "config");
  ExperimentConfig c;
  std::string variant = "standalone";
  read_opt(j, "variant", variant, "config");
  c.variant = parse_variant(variant);
  read_opt(j, "seed", c.init_seed, "config");
  if (j.contains("network")) {
    c.network = model_config_from_json(j.at("network"));
    if (j.at("network").contains("in_dim") || j.at("network").contains("out_dim")) {
      throw ConfigError("network: in_dim and out_dim follow from the data and may not be set");
    }
  }
  if (j.contains("pipeline")) {
    const auto& p = j.at("pipeline");
    reject_unknown(p, {"exponent", "window", "segments", "time_channel"}, "pipeline");
    read_opt(p, "exponent", c.exponent, "pipeline");
    read_opt(p, "window", c.plan.window, "pipeline");
    read_opt(p, "segments", c.plan.segments, "pipeline");
    read_opt(p, "time_channel", c.time_channel, "pipeline");
  }
  read_opt(j, "species", c.species, "config");
  read_opt(j, "latent_dim", c.latent_dim, "config");
  if (j.contains("regime")) {
    const auto& r = j.at("regime");
    reject_unknown(r, {"epsilon", "variable"}, "regime");
    read_opt(r, "epsilon", c.regime_epsilon, "regime");
    read_opt(r, "variable", c.regime_variable, "regime");
  }
  if (j.contains("train")) c.train = training::TrainConfig::from_json(j.at("train"));
  c.validate();
  return c;
}

Preprocessor Preprocessor::fit(const TrajectoryDataset& train_in, Variant variant, const ExperimentConfig& cfg) {
  if (variant == Variant::regime_pair) throw ConfigError("preprocessor: regime pairs are fitted per part");
  if (train_in.samples() == 0) throw ConfigError("preprocessor: empty training set");
  Preprocessor p;
  p.variant = variant;
  p.variables = train_in.manifest.variables;
  p.window = cfg.plan.window;
  p.time_channel = cfg.time_channel;
  const TrajectoryDataset* train = &train_in;
  TrajectoryDataset filtered;
  if (variant == Variant::mass_conserving) {
    p.layout = simplex::SpeciesLayout::from_names(p.variables, cfg.species);
    filtered = drop_degenerate(train_in, *p.layout);
    train = &filtered;
  }

  const Array m = p.to_model_space(train->data);
  p.stats = pipeline::fit_stats(m, p.model_variables(), cfg.exponent);
  const Array ics = pipeline::first_points(pipeline::time_decompose(m, cfg.plan));
  const auto ic_stats = pipeline::fit_stats(ics.reshaped({ics.dim(0), 1, ics.dim(1)}), {}, cfg.exponent);
  p.stats.ic_min = ic_stats.traj_min;
  p.stats.ic_max = ic_stats.traj_max;

  if (variant == Variant::latent) {
    const std::size_t q = p.model_dim();
    const std::size_t d = cfg.latent_dim ? cfg.latent_dim : (q + 1) / 2;
    if (d > q) throw ConfigError("latent_dim exceeds the number of variables");
    const Array enc = pipeline::encode(ics, p.stats, pipeline::Which::initial);
    p.basis = pca::fit_pca(enc, d);
    p.scaler = pca::LatentScaler::fit(pca::project(enc, *p.basis));
  }
  return p;
}

std::size_t Preprocessor::feature_dim() const {
  const std::size_t base = basis ? basis->latent_dim() : model_dim();
  return base + (time_channel ? 1 : 0);
}

std::vector<std::string> Preprocessor::model_variables() const {
  return layout ? layout->encoded_names(variables) : variables;
}

Array Preprocessor::to_model_space(const Array& raw) const {
  Array c = pipeline::clamp_nonneg(raw);
  return layout ? layout->encode(c) : c;
}

Array Preprocessor::to_raw_space(const Array& m) const { return layout ? layout->decode(m, true) : m; }

Array Preprocessor::features_from_model(const Array& model_ics) const {
  Array enc = pipeline::encode(model_ics, stats, pipeline::Which::initial);
  if (!basis) return enc;
  return scaler->encode(pca::project(enc, *basis));
}

Array Preprocessor::features(const Array& raw_ics) const { return features_from_model(to_model_space(raw_ics)); }

Array Preprocessor::network_input_from_features(const Array& f, std::size_t w) const {
  Array tiled = pipeline::tile_initial(f, w);
  return time_channel ? pipeline::append_time_channel(tiled) : tiled;
}

Array Preprocessor::network_input(const Array& raw_ics, std::size_t w) const {
  return network_input_from_features(features(raw_ics), w);
}

Array Preprocessor::targets(const Array& raw_windows) const {
  return pipeline::encode(to_model_space(raw_windows), stats, pipeline::Which::trajectory);
}

Array Preprocessor::decode(const Array& output, std::size_t* clamped) const {
  return to_raw_space(pipeline::decode(output, stats, pipeline::Which::trajectory, clamped));
}

json Preprocessor::to_json() const {
  json j{{"variant", variant_name(variant)}, {"variables", variables},       {"stats", stats.to_json()},
         {"window", window},                 {"time_channel", time_channel}};
  if (layout) j["layout"] = layout->to_json();
  if (basis) j["basis"] = basis->to_json();
  if (scaler) j["scaler"] = scaler->to_json();
  return j;
}

Preprocessor Preprocessor::from_json(const json& j) {
  try {
    Preprocessor p;
    p.variant = parse_variant(j.at("variant").get<std::string>());
    p.variables = j.at("variables").get<std::vector<std::string>>();
    p.stats = pipeline::NormStats::from_json(j.at("stats"));
    p.window = j.at("window").get<std::size_t>();
    p.time_channel = j.at("time_channel").get<bool>();
    if (j.contains("layout")) p.layout = simplex::SpeciesLayout::from_json(j.at("layout"));
    if (j.contains("basis")) p.basis = pca::PcaBasis::from_json(j.at("basis"));
    if (j.contains("scaler")) p.scaler = pca::LatentScaler::from_json(j.at("scaler"));
    if (p.basis.has_value() != p.scaler.has_value()) throw IoError("preprocessor: basis without scaler");
    return p;
  } catch (const json::exception& e) {
    throw IoError(std::string("preprocessor: ") + e.what());
  }
}

training::WindowSet make_windows(const TrajectoryDataset& ds, const Preprocessor& prep,
                                 const pipeline::WindowPlan& plan) {
  if (ds.manifest.variables != prep.variables) throw ConfigError("dataset variables do not match the model");
  const TrajectoryDataset* src = &ds;
  TrajectoryDataset filtered;
  if (prep.layout) {
    filtered = drop_degenerate(ds, *prep.layout);
    src = &filtered;
  }
  const Array windows = pipeline::time_decompose(src->data, plan);
  const Array ics = pipeline::first_points(windows);
  return {prep.network_input(ics, plan.window), prep.targets(windows)};
}

Array Surrogate::predict(const Array& raw_ics, std::size_t w) const {
  return prep.decode(net.predict(prep.network_input(raw_ics, w)));
}

Array Surrogate::predict_latent(const Array& latent, std::size_t w) const {
  if (!prep.basis) throw ConfigError("predict_latent: not a latent model");
  return prep.decode(net.predict(prep.network_input_from_features(latent, w)));
}

std::vector<regimes::Regime> Model::routes(const Array& raw_ics) const {
  if (raw_ics.rank() != 2) throw ShapeError("routes: expected [n][p] initial conditions");
  if (!threshold) return std::vector<regimes::Regime>(raw_ics.dim(0), regimes::Regime::below);
  const auto& vars = variables();
  const auto it = std::find(vars.begin(), vars.end(), threshold->variable);
  if (it == vars.end()) throw ConfigError("routing variable '" + threshold->variable + "' not in the model");
  return regimes::route_batch(raw_ics, static_cast<std::size_t>(it - vars.begin()), threshold->tau);
}

Array Model::predict(const Array& raw_ics, std::size_t w) const {
  if (raw_ics.rank() != 2 || raw_ics.dim(1) != variables().size()) {
    throw ShapeError("predict: expected [n][" + std::to_string(variables().size()) + "] initial conditions, got " +
                     shape_string(raw_ics.shape()));
  }
  if (variant != Variant::regime_pair) return parts.at(0).predict(raw_ics, w);
  const auto r = routes(raw_ics);
  const std::size_t n = raw_ics.dim(0), p = raw_ics.dim(1);
  Array out({n, w, p});
  for (std::size_t part = 0; part < 2; ++part) {
    const auto want = part == 0 ? regimes::Regime::below : regimes::Regime::above;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i) {
      if (r[i] == want) rows.push_back(i);
    }
    if (rows.empty()) continue;
    const Array pred = parts.at(part).predict(rows_of(raw_ics, rows), w);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      std::copy_n(&pred[k * w * p], w * p, &out[rows[k] * w * p]);
    }
  }
  return out;
}

namespace {

Surrogate fit_part(const TrajectoryDataset& train, Variant variant, const ExperimentConfig& cfg,
                   const std::string& name, const std::optional<regimes::RegimeThreshold>& threshold,
                   training::TrainResult& curve, const std::function<void(const TrainProgress&)>& on_checkpoint) {
  Preprocessor prep = Preprocessor::fit(train, variant, cfg);
  const auto windows = make_windows(train, prep, cfg.plan);
  ssm::ModelConfig net_cfg = cfg.network;
  net_cfg.in_dim = prep.feature_dim();
  net_cfg.out_dim = prep.model_dim();
  ssm::Backbone net = ssm::Backbone::init(net_cfg, cfg.init_seed);

  training::CheckpointFn hook;
  if (on_checkpoint) {
    hook = [&](std::size_t it, const ssm::Backbone& current) {
      Model snapshot;
      snapshot.variant = variant;
      snapshot.parts.push_back({prep, current});
      snapshot.threshold = threshold;
      snapshot.config = cfg;
      on_checkpoint({name, it, &snapshot});
    };
  }
  curve = training::train(net, windows, cfg.train, hook);
  return {std::move(prep), std::move(net)};
}

}  // namespace

FitResult fit(const TrajectoryDataset& train, const ExperimentConfig& cfg,
              const std::function<void(const TrainProgress&)>& on_checkpoint) {
  cfg.validate();
  FitResult result;
  result.model.variant = cfg.variant;
  result.model.config = cfg;
  if (cfg.variant != Variant::regime_pair) {
    result.curves.resize(1);
    result.model.parts.push_back(fit_part(train, cfg.variant, cfg, "", std::nullopt, result.curves[0], on_checkpoint));
    return result;
  }

  auto th = regimes::compute_tau(regimes::profiles(train, cfg.regime_variable), cfg.regime_epsilon);
  th.variable = cfg.regime_variable;
  auto [below, above] = regimes::partition(train, th);
  if (below.samples() == 0 || above.samples() == 0) {
    throw ConfigError("regime-pair: threshold " + std::to_string(th.tau) + " leaves an empty regime (" +
                      std::to_string(below.samples()) + " below, " + std::to_string(above.samples()) + " above)");
  }
  result.model.threshold = th;
  result.curves.resize(2);
  result.model.parts.push_back(
      fit_part(below, Variant::standalone, cfg, "below", th, result.curves[0], on_checkpoint));
  result.model.parts.push_back(
      fit_part(above, Variant::standalone, cfg, "above", th, result.curves[1], on_checkpoint));
  return result;
}

}  // namespace kmamba::model
