#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "kmamba/checkpoint.hpp"
#include "kmamba/datagen.hpp"
#include "kmamba/model.hpp"
#include "testing.hpp"

using namespace kmamba;
using model::ExperimentConfig;
using model::Variant;
namespace fs = std::filesystem;

namespace {

const TrajectoryDataset& robertson_small() {
  static const auto ds = datagen::generate_dataset(datagen::MechanismSpec::robertson(), 12, 41, 1e-3, 5);
  return ds;
}

ExperimentConfig small_config(Variant v) {
  ExperimentConfig c;
  c.variant = v;
  c.network.d_model = 8;
  c.network.n_layers = 1;
  c.network.state_dim = 4;
  c.plan.window = 11;
  c.plan.segments = 4;
  c.species = {"y1", "y2", "y3"};
  c.train.iterations = 3;
  c.train.batch_size = 8;
  c.init_seed = 3;
  return c;
}

fs::path temp_path(const std::string& name) { return fs::temp_directory_path() / ("kmamba_model_" + name); }

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << s;
}

}  // namespace

TEST_CASE("experiment config json is strict and round-trips") {
  auto c = small_config(Variant::mass_conserving);
  c.exponent = 0.3;
  c.time_channel = true;
  const auto back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.variant == Variant::mass_conserving);
  CHECK(back.plan.window == 11);

  auto j = c.to_json();
  j["network"]["in_dim"] = 3;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = c.to_json();
  j["pipeline"]["stride"] = 2;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = c.to_json();
  j["variant"] = "hybrid";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  j = c.to_json();
  j["species"] = {"y1"};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
  for (auto v : {Variant::standalone, Variant::mass_conserving, Variant::latent, Variant::regime_pair}) {
    CHECK(model::parse_variant(model::variant_name(v)) == v);
  }
}

TEST_CASE("preprocessor transforms invert") {
  const auto& ds = robertson_small();
  for (auto v : {Variant::standalone, Variant::mass_conserving}) {
    CAPTURE(model::variant_name(v));
    const auto prep = model::Preprocessor::fit(ds, v, small_config(v));
    const Array model_space = prep.to_model_space(ds.data);
    CHECK(testing::max_abs_diff(prep.to_raw_space(model_space), ds.data) < 1e-12);
    // normalized targets decode back to the raw windows
    const Array windows = pipeline::time_decompose(ds.data, small_config(v).plan);
    CHECK(testing::max_abs_diff(prep.decode(prep.targets(windows)), windows) < 1e-10);
    CHECK(prep.feature_dim() == prep.model_dim());
    const auto back = model::Preprocessor::from_json(prep.to_json());
    CHECK(back.to_json() == prep.to_json());
  }
  const auto mc = model::Preprocessor::fit(ds, Variant::mass_conserving, small_config(Variant::mass_conserving));
  CHECK(mc.model_variables() == std::vector<std::string>{"z1", "z2"});

  auto cfg = small_config(Variant::standalone);
  cfg.time_channel = true;
  const auto tc = model::Preprocessor::fit(ds, Variant::standalone, cfg);
  CHECK(tc.feature_dim() == 4);
  const Array in = tc.network_input(ds.initial_conditions(), 11);
  CHECK(in.shape() == Shape{12, 11, 4});
}

TEST_CASE("latent preprocessor projects onto the requested dimension") {
  auto cfg = small_config(Variant::latent);
  cfg.latent_dim = 2;
  const auto prep = model::Preprocessor::fit(robertson_small(), Variant::latent, cfg);
  REQUIRE(prep.basis);
  CHECK(prep.feature_dim() == 2);
  CHECK(prep.features(robertson_small().initial_conditions()).shape() == Shape{12, 2});
  cfg.latent_dim = 0;
  CHECK(model::Preprocessor::fit(robertson_small(), Variant::latent, cfg).feature_dim() == 2);
}

TEST_CASE("mass-conserving predictions sum to the initial total") {
  const auto fitted = model::fit(robertson_small(), small_config(Variant::mass_conserving));
  const Array ics = robertson_small().initial_conditions();
  const Array pred = fitted.model.predict(ics, 11);
  REQUIRE(pred.shape() == Shape{12, 11, 3});
  double worst = 0.0;
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t t = 0; t < 11; ++t) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        CHECK(pred.at(i, t, k) >= 0.0);
        s += pred.at(i, t, k);
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("training reduces the window loss and is reproducible") {
  auto cfg = small_config(Variant::standalone);
  cfg.train.iterations = 60;
  cfg.train.lr = 5e-3;
  const auto a = model::fit(robertson_small(), cfg);
  const auto b = model::fit(robertson_small(), cfg);
  REQUIRE(a.curves.size() == 1);
  CHECK(a.curves[0].loss.back() < a.curves[0].loss.front());
  CHECK(a.curves[0].loss == b.curves[0].loss);
  const Array ics = robertson_small().initial_conditions();
  CHECK(a.model.predict(ics, 11) == b.model.predict(ics, 11));
}

TEST_CASE("checkpoint round-trip is exact") {
  auto cfg = small_config(Variant::mass_conserving);
  std::vector<std::size_t> seen;
  const auto fitted = model::fit(robertson_small(), cfg, [&](const model::TrainProgress& p) {
    seen.push_back(p.iteration);
    CHECK(p.model != nullptr);
  });
  CHECK(seen == std::vector<std::size_t>{3});
  const auto path = temp_path("ckpt.kmc");
  checkpoint::save_model(path, fitted.model, {{"note", "test"}});
  const auto loaded = checkpoint::load_model(path);
  CHECK(loaded.variant == Variant::mass_conserving);
  const Array ics = robertson_small().initial_conditions();
  CHECK(loaded.predict(ics, 11) == fitted.model.predict(ics, 11));
  CHECK(loaded.predict(ics, 23) == fitted.model.predict(ics, 23));
  CHECK(checkpoint::read(path).header.at("extra").at("note") == "test");

  // writing the loaded model again gives the same bytes
  const auto again = temp_path("ckpt2.kmc");
  checkpoint::save_model(again, loaded, {{"note", "test"}});
  CHECK(slurp(path) == slurp(again));

  const std::string bytes = slurp(path);
  const auto bad = temp_path("bad.kmc");
  spit(bad, bytes.substr(0, bytes.size() - 8));
  CHECK_THROWS_AS(checkpoint::load_model(bad), IoError);
  spit(bad, "KMCKPT02" + bytes.substr(8));
  CHECK_THROWS_AS(checkpoint::load_model(bad), IoError);
  spit(bad, bytes + "x");
  CHECK_THROWS_AS(checkpoint::load_model(bad), IoError);
  spit(bad, bytes.substr(0, 12));
  CHECK_THROWS_AS(checkpoint::load_model(bad), IoError);
  CHECK_THROWS_AS(checkpoint::load_model(temp_path("missing.kmc")), IoError);
  for (const auto& p : {path, again, bad}) fs::remove(p);
}

TEST_CASE("regime pair routes by the initial temperature") {
  auto spec = datagen::MechanismSpec::one_step_ignition();
  spec.t0_range = {600.0, 1000.0};
  const auto ds = datagen::generate_dataset(spec, 16, 201, 5e-4, 11);
  auto cfg = small_config(Variant::regime_pair);
  cfg.species = {};
  cfg.plan.window = 51;
  cfg.plan.segments = 4;
  cfg.train.iterations = 2;
  const auto fitted = model::fit(ds, cfg);
  REQUIRE(fitted.model.threshold);
  REQUIRE(fitted.model.parts.size() == 2);
  CHECK(fitted.curves.size() == 2);
  const double tau = fitted.model.threshold->tau;
  CHECK(tau > 600.0);
  CHECK(tau < 1000.0);

  const Array ics = ds.initial_conditions();
  const auto routes = fitted.model.routes(ics);
  const Array pred = fitted.model.predict(ics, 51);
  const std::size_t ti = ds.variable_index("T");
  for (std::size_t i = 0; i < ds.samples(); ++i) {
    const auto expect = ics.at(i, ti) <= tau ? regimes::Regime::below : regimes::Regime::above;
    CHECK(routes[i] == expect);
    // each row equals the prediction of its own part
    Array row({1, ics.dim(1)});
    for (std::size_t k = 0; k < ics.dim(1); ++k) row.at(0, k) = ics.at(i, k);
    const auto& part = fitted.model.parts[expect == regimes::Regime::below ? 0 : 1];
    const Array own = part.predict(row, 51);
    for (std::size_t j = 0; j < own.size(); ++j) CHECK(own[j] == pred[i * own.size() + j]);
  }

  const auto path = temp_path("pair.kmc");
  checkpoint::save_model(path, fitted.model);
  const auto loaded = checkpoint::load_model(path);
  REQUIRE(loaded.threshold);
  CHECK(loaded.threshold->tau == tau);
  CHECK(loaded.predict(ics, 51) == pred);
  fs::remove(path);
}

TEST_CASE("regime pair with an empty side is a config error") {
  auto spec = datagen::MechanismSpec::one_step_ignition();
  spec.t0_range = {600.0, 650.0};
  const auto ds = datagen::generate_dataset(spec, 6, 101, 1e-3, 2);
  auto cfg = small_config(Variant::regime_pair);
  cfg.species = {};
  cfg.plan.window = 26;
  CHECK_THROWS_AS(model::fit(ds, cfg), ConfigError);
}
