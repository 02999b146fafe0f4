#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kmamba/cli.hpp"
#include "kmamba/dataset.hpp"
#include "kmamba/metrics.hpp"
#include "kmamba/rollout.hpp"

using namespace kmamba;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

// One workspace per test binary run: a small Robertson dataset and config.
struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / "kmamba_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto r = run({"gen-data", "--mechanism", "robertson", "--samples", "10", "--nt", "41", "--dt", "1e-3",
                        "--seed", "7", "--test-fraction", "0.3", "--out", (root / "rob").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    write_json(root / "cfg.json", config());
  }
  ~Workspace() { fs::remove_all(root); }

  json config() const {
    return {{"variant", "standalone"},
            {"seed", 2},
            {"network", {{"d_model", 8}, {"n_layers", 1}, {"state_dim", 4}}},
            {"pipeline", {{"window", 11}, {"segments", 4}}},
            {"species", {"y1", "y2", "y3"}},
            {"train", {{"iterations", 6}, {"batch_size", 8}, {"checkpoint_every", 4}}},
            {"data", {{"train", (root / "rob").string()}, {"test", (root / "rob-test").string()}}},
            {"rollout", {{"windows", {11, 8, 5}}}}};
  }
  std::string path(const std::string& name) const { return (root / name).string(); }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("gen-data writes train and test splits with the resolved config") {
  const auto train = read_dataset(ws().path("rob"));
  const auto test = read_dataset(ws().path("rob-test"));
  CHECK(train.samples() == 7);
  CHECK(test.samples() == 3);
  CHECK(train.steps() == 41);
  CHECK(train.manifest.split == "train");
  CHECK(test.manifest.split == "test");
  const auto resolved = read_json(ws().root / "rob" / "resolved-config.json");
  CHECK(resolved.at("seed") == 7);
  CHECK(resolved.at("mechanism").at("mechanism") == "robertson");
}

TEST_CASE("usage errors and exit codes") {
  CHECK(run({"--help"}).code == 0);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"gen-data", "--samples", "3"}).code == 2);
  CHECK(run({"gen-data", "--mechanism", "brusselator", "--samples", "3", "--out", ws().path("x")}).code == 2);

  json bad = ws().config();
  bad["train"]["momentum"] = 0.9;
  write_json(ws().root / "bad.json", bad);
  const auto r = run({"train", "--config", ws().path("bad.json"), "--out", ws().path("bad-run")});
  CHECK(r.code == 2);
  CHECK(r.err.find("momentum") != std::string::npos);

  bad = ws().config();
  bad["plotting"] = true;
  write_json(ws().root / "bad.json", bad);
  CHECK(run({"train", "--config", ws().path("bad.json"), "--out", ws().path("bad-run")}).code == 2);

  CHECK(run({"predict", "--model", ws().path("missing.kmc"), "--data", ws().path("rob"), "--out", ws().path("p")})
            .code == 4);
  CHECK(run({"evaluate", "--pred", ws().path("nope"), "--truth", ws().path("rob"), "--out", ws().path("e")}).code ==
        4);
}

TEST_CASE("train, rollout, evaluate and export") {
  const auto& w = ws();
  auto r = run({"train", "--config", w.path("cfg.json"), "--out", w.path("run"), "--variant", "mass-conserving"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"model.kmc", "loss.csv", "resolved-config.json", "checkpoints/iter-000004.kmc",
                        "checkpoints/iter-000006.kmc"}) {
    CHECK_MESSAGE(fs::exists(w.root / "run" / f), f);
  }
  CHECK(read_json(w.root / "run" / "resolved-config.json").at("variant") == "mass-conserving");

  r = run({"rollout", "--config", w.path("cfg.json"), "--model", w.path("run/model.kmc"), "--out", w.path("ro")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto pred = read_dataset(w.path("ro"));
  CHECK(pred.data.shape() == Shape{3, 24, 3});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t t = 0; t < 24; ++t) {
      CHECK(pred.data.at(i, t, 0) + pred.data.at(i, t, 1) + pred.data.at(i, t, 2) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK(fs::exists(w.root / "ro" / "window_errors.csv"));
  CHECK(read_json(w.root / "ro" / "window_report.json").at("windows").size() == 3);

  r = run({"rollout", "--model", w.path("run/model.kmc"), "--data", w.path("rob-test"), "--out", w.path("ro2"),
           "--plan", "11,x"});
  CHECK(r.code == 2);

  r = run({"evaluate", "--pred", w.path("ro"), "--truth", w.path("rob-test"), "--clip", "--out", w.path("ev")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  // same numbers as a direct library call
  rollout::RolloutPlan plan{{11, 8, 5}};
  const auto truth = read_dataset(w.path("rob-test"));
  const auto direct = metrics::rel_l2(pred.data, rollout::plan_truth(truth.data, plan), metrics::Clip::epsilon_rule,
                                      truth.manifest.variables);
  CHECK(read_json(w.root / "ev" / "report.json") == direct.to_json());
  const auto direct_csv = w.root / "direct.csv";
  direct.write_csv(direct_csv);
  CHECK(slurp(direct_csv) == slurp(w.root / "ev" / "errors.csv"));

  r = run({"predict", "--model", w.path("run/model.kmc"), "--data", w.path("rob-test"), "--out", w.path("pr")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(read_dataset(w.path("pr")).data.shape() == Shape{3, 44, 3});
  CHECK(run({"evaluate", "--pred", w.path("pr"), "--truth", w.path("rob-test"), "--out", w.path("ev2")}).code == 0);

  for (const char* from : {"run", "ev", "ro"}) {
    r = run({"export", "--from", w.path(from), "--out", w.path("plots")});
    CHECK_MESSAGE(r.code == 0, r.err);
  }
  for (const char* f : {"loss_curve.csv", "sample_errors.csv", "window_errors.csv"}) {
    CHECK_MESSAGE(fs::exists(w.root / "plots" / f), f);
  }
  CHECK(run({"export", "--from", w.path("rob"), "--out", w.path("plots2")}).code == 4);

  r = run({"fit-stats", "--config", w.path("cfg.json"), "--out", w.path("stats")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(read_json(w.root / "stats" / "stats.json").contains("preprocessor"));
}

TEST_CASE("training reruns are bit-identical") {
  const auto& w = ws();
  for (const char* out : {"rep-a", "rep-b"}) {
    const auto r = run({"train", "--config", w.path("cfg.json"), "--out", w.path(out), "--seed", "5"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
  CHECK(slurp(w.root / "rep-a" / "model.kmc") == slurp(w.root / "rep-b" / "model.kmc"));
  CHECK(slurp(w.root / "rep-a" / "loss.csv") == slurp(w.root / "rep-b" / "loss.csv"));
  const auto r = run({"train", "--config", w.path("cfg.json"), "--out", w.path("rep-c"), "--seed", "6"});
  REQUIRE(r.code == 0);
  CHECK(slurp(w.root / "rep-a" / "loss.csv") != slurp(w.root / "rep-c" / "loss.csv"));
}
