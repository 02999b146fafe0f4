#include <doctest.h>

#include <cmath>

#include "kmamba/pipeline.hpp"
#include "testing.hpp"

using namespace kmamba;
using namespace kmamba::pipeline;
using testing::random_array;

namespace {

NormStats simple_stats(double lo, double hi, std::size_t p = 1) {
  NormStats s;
  s.traj_min.assign(p, lo);
  s.traj_max.assign(p, hi);
  s.ic_min.assign(p, lo);
  s.ic_max.assign(p, hi);
  return s;
}

}  // namespace

TEST_CASE("clamp") {
  Array x({1, 3, 1}, {-1e-19, 0.3, -5.0});
  CHECK(clamp_nonneg(x) == Array({1, 3, 1}, {0.0, 0.3, 0.0}));
}

TEST_CASE("encode examples") {
  auto s = simple_stats(0.0, 2.0);
  CHECK(encode(Array({1}, {32.0}), s, Which::trajectory)[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(encode(Array({1}, {0.0}), s, Which::trajectory)[0] == -1.0);
  CHECK(encode(Array({1}, {1.0}), s, Which::trajectory)[0] == 0.0);  // x~ = 1 = midpoint
  CHECK(decode(Array({1}, {1.0}), s, Which::trajectory)[0] == doctest::Approx(32.0).epsilon(1e-15));
  auto s2 = simple_stats(0.5, 2.0);
  CHECK(decode(Array({1}, {-1.0}), s2, Which::initial)[0] == doctest::Approx(std::pow(0.5, 5)));
  CHECK_THROWS_AS(encode(Array({1}, {-1.0}), s, Which::trajectory), DomainError);
  CHECK_THROWS_AS(encode(Array({2}, {1.0, 1.0}), s, Which::trajectory), ShapeError);
}

TEST_CASE("decode clamps below-range model output and counts it") {
  auto s = simple_stats(0.5, 2.0);
  std::size_t clamped = 0;
  Array y = decode(Array({3, 1}, {-2.0, -1.0, 0.0}), s, Which::trajectory, &clamped);
  CHECK(clamped == 1);
  CHECK(y[0] == 0.0);
}

TEST_CASE("stats fit and roundtrip") {
  Rng rng(3);
  Array x = random_array({5, 40, 3}, rng, 0.0, 1.0);
  for (std::size_t i = 0; i < x.size(); i += 3) x[i] *= 3000.0;  // temperature-like column
  auto s = fit_stats(x, {"T", "a", "b"});
  CHECK(s == fit_stats(x, {"T", "a", "b"}));
  Array e = encode(x, s, Which::trajectory);
  for (double v : e.data()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  Array ic({5, 3});
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t v = 0; v < 3; ++v) ic.at(i, v) = x.at(i, 0, v);
  }
  Array eic = encode(ic, s, Which::initial);
  for (double v : eic.data()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  Array back = decode(e, s, Which::trajectory);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, std::abs(back[i] - x[i]) / std::max(1.0, std::abs(x[i])));
  }
  CHECK(worst < 1e-12);
  CHECK(NormStats::from_json(s.to_json()) == s);
}

TEST_CASE("constant variable encodes to zero and decodes back") {
  Array x({2, 4, 2}, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = i % 2 ? 0.79 : 0.1 * static_cast<double>(i);
  auto s = fit_stats(x, {});
  Array e = encode(x, s, Which::trajectory);
  for (std::size_t i = 1; i < e.size(); i += 2) CHECK(e[i] == 0.0);
  Array back = decode(e, s, Which::trajectory);
  for (std::size_t i = 1; i < e.size(); i += 2) CHECK(back[i] == doctest::Approx(0.79).epsilon(1e-14));
}

TEST_CASE("time decomposition index arithmetic") {
  Array x({1, 21, 2});
  for (std::size_t t = 0; t < 21; ++t) {
    x.at(0, t, 0) = static_cast<double>(t);
    x.at(0, t, 1) = -static_cast<double>(t);
  }
  WindowPlan plan{11, 2};
  Array seg = time_decompose(x, plan);
  CHECK(seg.shape() == Shape{2, 11, 2});
  CHECK(seg.at(0, 0, 0) == 0.0);
  CHECK(seg.at(0, 10, 0) == 10.0);
  CHECK(seg.at(1, 0, 0) == 10.0);
  CHECK(seg.at(1, 10, 0) == 20.0);

  WindowPlan one{11, 1};
  Array first = time_decompose(x, one);
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i] == x[i]);
  CHECK(reconstruct(first, one) == first);

  CHECK_THROWS_AS(time_decompose(x, WindowPlan{11, 3}), ShapeError);
  CHECK_THROWS_AS(time_decompose(x, WindowPlan{1, 3}), ConfigError);
}

TEST_CASE("99 windows of 101 points") {
  Array x({2, 10002, 3}, 1.0);
  WindowPlan plan;
  Array seg = time_decompose(x, plan);
  CHECK(seg.shape() == Shape{198, 101, 3});
  Array full = reconstruct(seg, plan);
  CHECK(full.shape() == Shape{2, 9999, 3});
}

TEST_CASE("decompose then reconstruct matches the source at every shared index") {
  Rng rng(2);
  WindowPlan plan{7, 5};
  Array x = random_array({3, plan.required_length() + 4, 2}, rng);
  Array full = reconstruct(time_decompose(x, plan), plan);
  CHECK(full.shape() == Shape{3, 35, 2});
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t i = 0; i < plan.segments; ++i) {
      for (std::size_t k = 0; k < plan.window; ++k) {
        const std::size_t g = i * plan.stride() + k;
        for (std::size_t v = 0; v < 2; ++v) CHECK(full.at(s, i * plan.window + k, v) == x.at(s, g, v));
      }
    }
  }
  // an interior join appears twice: end of window i and start of window i+1
  CHECK(full.at(0, plan.window - 1, 0) == full.at(0, plan.window, 0));
}

TEST_CASE("tiling") {
  Array x0({2, 13});
  for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = static_cast<double>(i);
  Array tiled = tile_initial(x0, 101);
  CHECK(tiled.shape() == Shape{2, 101, 13});
  for (std::size_t t : {0u, 37u, 100u}) {
    for (std::size_t v = 0; v < 13; ++v) CHECK(tiled.at(1, t, v) == x0.at(1, v));
  }
  CHECK(tile_initial(x0, 1).reshaped({2, 13}) == x0);
  CHECK(first_points(tiled) == x0);
}

TEST_CASE("time channel") {
  Array tiled({1, 3, 1}, 0.5);
  Array a = append_time_channel(tiled);
  CHECK(a.shape() == Shape{1, 3, 2});
  CHECK(a.at(0, 0, 1) == -1.0);
  CHECK(a.at(0, 1, 1) == 0.0);
  CHECK(a.at(0, 2, 1) == 1.0);
  CHECK(a.at(0, 2, 0) == 0.5);
}
