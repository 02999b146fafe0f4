#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kmamba/datagen.hpp"
#include "kmamba/regimes.hpp"

using namespace kmamba;
using namespace kmamba::datagen;

namespace {

// Fixed-step implicit Euler with Newton iterations on the Robertson system.
std::array<double, 3> robertson_implicit_euler(double t_end, std::size_t steps) {
  const double k1 = 0.04, k2 = 3e7, k3 = 1e4, h = t_end / static_cast<double>(steps);
  std::array<double, 3> y{1.0, 0.0, 0.0};
  for (std::size_t s = 0; s < steps; ++s) {
    std::array<double, 3> x = y;
    for (int it = 0; it < 20; ++it) {
      const double f0 = -k1 * x[0] + k3 * x[1] * x[2];
      const double f1 = k1 * x[0] - k3 * x[1] * x[2] - k2 * x[1] * x[1];
      const double f2 = k2 * x[1] * x[1];
      // G(x) = x - y - h f(x); J = I - h df/dx
      double g[3] = {x[0] - y[0] - h * f0, x[1] - y[1] - h * f1, x[2] - y[2] - h * f2};
      double j[3][3] = {{1 + h * k1, -h * k3 * x[2], -h * k3 * x[1]},
                        {-h * k1, 1 + h * (k3 * x[2] + 2 * k2 * x[1]), h * k3 * x[1]},
                        {0.0, -h * 2 * k2 * x[1], 1.0}};
      // Gaussian elimination, 3x3
      for (int c = 0; c < 3; ++c) {
        int piv = c;
        for (int r = c + 1; r < 3; ++r) {
          if (std::abs(j[r][c]) > std::abs(j[piv][c])) piv = r;
        }
        std::swap(j[c], j[piv]);
        std::swap(g[c], g[piv]);
        for (int r = c + 1; r < 3; ++r) {
          const double f = j[r][c] / j[c][c];
          for (int k = c; k < 3; ++k) j[r][k] -= f * j[c][k];
          g[r] -= f * g[c];
        }
      }
      double dx[3];
      for (int r = 2; r >= 0; --r) {
        double s2 = g[r];
        for (int k = r + 1; k < 3; ++k) s2 -= j[r][k] * dx[k];
        dx[r] = s2 / j[r][r];
      }
      double norm = 0.0;
      for (int k = 0; k < 3; ++k) {
        x[k] -= dx[k];
        norm = std::max(norm, std::abs(dx[k]));
      }
      if (norm < 1e-15) break;
    }
    y = x;
  }
  return y;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("robertson matches a brute-force implicit Euler oracle at t = 0.4") {
  auto oracle = robertson_implicit_euler(0.4, 400000);
  Array r = simulate(MechanismSpec::robertson(), std::vector<double>{1.0, 0.0, 0.0}, 5, 0.1);
  for (std::size_t v = 0; v < 3; ++v) {
    CAPTURE(v);
    CHECK(std::abs(r.at(4, v) - oracle[v]) / oracle[v] < 1e-6);
  }
  CHECK(r.at(4, 0) == doctest::Approx(0.98517).epsilon(1e-5));
  CHECK(r.at(4, 1) == doctest::Approx(3.39e-5).epsilon(2e-3));
  CHECK(r.at(4, 2) == doctest::Approx(1.4794e-2).epsilon(1e-4));
}

TEST_CASE("robertson conserves mass over the horizon") {
  Array r = simulate(MechanismSpec::robertson(), std::vector<double>{0.7, 1e-5, 0.29999}, 1001, 1e-3);
  double worst = 0.0;
  for (std::size_t t = 0; t < 1001; ++t) worst = std::max(worst, std::abs(r.at(t, 0) + r.at(t, 1) + r.at(t, 2) - 1.0));
  CHECK(worst < 1e-9);
}

TEST_CASE("ignition regimes and the energy bound") {
  auto spec = MechanismSpec::one_step_ignition();
  Array cold = simulate(spec, std::vector<double>{600.0, 1.0, 0.0}, 1001, 1e-4);
  CHECK(cold.at(1000, 0) - 600.0 < 1.0);

  for (double t0 : {750.0, 900.0, 1100.0}) {
    const double y0 = 0.8;
    Array a = simulate(spec, std::vector<double>{t0, y0, 1.0 - y0}, 1001, 1e-4);
    bool monotone = true;
    for (std::size_t t = 1; t < 1001; ++t) monotone = monotone && a.at(t, 0) >= a.at(t - 1, 0) - 1e-9;
    CHECK(monotone);
    CHECK(a.at(1000, 0) <= t0 + spec.heat_release * y0 + 1e-6);
    CHECK(std::abs(a.at(500, 1) + a.at(500, 2) - 1.0) < 1e-12);
  }
}

TEST_CASE("halving tolerances barely moves the samples") {
  for (auto spec : {MechanismSpec::robertson(), MechanismSpec::one_step_ignition()}) {
    std::vector<double> ic = spec.id == MechanismId::robertson ? std::vector<double>{0.9, 0.0, 0.1}
                                                                : std::vector<double>{900.0, 0.9, 0.1};
    Array a = simulate(spec, ic, 501, 2e-4);
    auto fine = spec;
    fine.abs_tol /= 2;
    fine.rel_tol /= 2;
    Array b = simulate(fine, ic, 501, 2e-4);
    // relative to each variable's scale over the horizon
    for (std::size_t v = 0; v < 3; ++v) {
      double scale = 0.0, diff = 0.0;
      for (std::size_t t = 0; t < 501; ++t) {
        scale = std::max(scale, std::abs(a.at(t, v)));
        diff = std::max(diff, std::abs(a.at(t, v) - b.at(t, v)));
      }
      CAPTURE(v);
      CHECK(diff / scale < 1e-7);
    }
  }
}

TEST_CASE("generated ignition data spans both regimes") {
  auto spec = MechanismSpec::one_step_ignition();
  spec.t0_range = {600.0, 1000.0};
  auto ds = generate_dataset(spec, 40, 1001, 1e-4, 3);
  auto th = regimes::compute_tau(regimes::profiles(ds, "T"), 0.01);
  auto split = regimes::partition_indices(ds, th);
  CHECK(split.below.size() > 0);
  CHECK(split.above.size() > 0);
  CHECK(th.tau > 600.0);
  CHECK(th.tau < 1000.0);
}

TEST_CASE("generation is deterministic and independent of the thread count") {
  namespace fs = std::filesystem;
  auto spec = MechanismSpec::robertson();
  auto dir = fs::temp_directory_path() / "kmamba_test_gen";
  fs::remove_all(dir);
  ::setenv("KMAMBA_THREADS", "1", 1);
  write_dataset(dir / "a", generate_dataset(spec, 6, 101, 1e-3, 7));
  ::setenv("KMAMBA_THREADS", "3", 1);
  write_dataset(dir / "b", generate_dataset(spec, 6, 101, 1e-3, 7));
  ::unsetenv("KMAMBA_THREADS");
  CHECK(slurp(dir / "a" / "data.bin") == slurp(dir / "b" / "data.bin"));
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));

  auto empty = generate_dataset(spec, 0, 101, 1e-3, 7);
  CHECK(empty.samples() == 0);
  CHECK(empty.manifest.n_t == 101);
}

TEST_CASE("mechanism config validation") {
  auto j = MechanismSpec::one_step_ignition().to_json();
  auto back = MechanismSpec::from_json(j);
  CHECK(back.id == MechanismId::one_step_ignition);
  CHECK(back.heat_release == 1000.0);
  j["bogus"] = 1;
  CHECK_THROWS_AS(MechanismSpec::from_json(j), ConfigError);
  CHECK_THROWS_AS(parse_mechanism("gri"), ConfigError);
  auto bad = MechanismSpec::robertson();
  bad.y1_range = {0.9, 0.5};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  ::setenv("KMAMBA_THREADS", "zero", 1);
  CHECK_THROWS_AS(thread_count(), ConfigError);
  ::unsetenv("KMAMBA_THREADS");
  CHECK_THROWS_AS(simulate(MechanismSpec::robertson(), std::vector<double>{1.0, 0.0}, 3, 0.1), ShapeError);
}
