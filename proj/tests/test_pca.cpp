#include <doctest.h>

#include <cmath>

#include "kmamba/pca.hpp"
#include "testing.hpp"

using namespace kmamba;
using namespace kmamba::pca;
using testing::random_array;

namespace {

// Correlated data: independent columns mixed by a fixed matrix.
Array correlated(std::size_t n, std::size_t p, Rng& rng) {
  Array z = random_array({n, p}, rng);
  Array mix = random_array({p, p}, rng);
  Array x({n, p});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0.3 * static_cast<double>(j);
      for (std::size_t k = 0; k < p; ++k) s += z.at(i, k) * mix.at(k, j) * (1.0 + static_cast<double>(k));
      x.at(i, j) = s;
    }
  }
  return x;
}

double gram_error(const PcaBasis& b) {
  const std::size_t p = b.input_dim(), d = b.latent_dim();
  double worst = 0.0;
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < p; ++r) s += b.components.at(r, a) * b.components.at(r, c);
      worst = std::max(worst, std::abs(s - (a == c ? 1.0 : 0.0)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("two-point hand example") {
  auto b = fit_pca(Array({2, 2}, {1.0, 0.0, -1.0, 0.0}), 1);
  CHECK(b.mean == std::vector<double>{0.0, 0.0});
  CHECK(b.eigenvalues[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(b.components.at(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(b.components.at(1, 0)) < 1e-14);
}

TEST_CASE("orthonormality, ordering and explained variance") {
  Rng rng(4);
  Array x = correlated(200, 6, rng);
  for (std::size_t d = 1; d <= 6; ++d) {
    auto b = fit_pca(x, d);
    CHECK(gram_error(b) < 1e-10);
    for (std::size_t i = 1; i < b.eigenvalues.size(); ++i) CHECK(b.eigenvalues[i] <= b.eigenvalues[i - 1]);
    for (double v : b.eigenvalues) CHECK(v >= 0.0);
    auto cum = b.cumulative_explained();
    for (std::size_t i = 1; i < cum.size(); ++i) CHECK(cum[i] >= cum[i - 1]);
    CHECK(cum.back() == doctest::Approx(1.0));

    // training projections are centered
    Array z = project(x, b);
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < 200; ++i) s += z.at(i, c);
      CHECK(std::abs(s / 200.0) < 1e-10);
    }
  }
}

TEST_CASE("full-rank projection is an isometry") {
  Rng rng(5);
  Array x = correlated(50, 5, rng);
  auto b = fit_pca(x, 5);
  Array probe = random_array({20, 5}, rng, -3.0, 3.0);
  Array z = project(probe, b);
  for (std::size_t i = 0; i < 20; ++i) {
    double n1 = 0.0, n2 = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      n1 += std::pow(probe.at(i, j) - b.mean[j], 2);
      n2 += z.at(i, j) * z.at(i, j);
    }
    CHECK(std::abs(std::sqrt(n1) - std::sqrt(n2)) < 1e-10);
  }
}

TEST_CASE("projection of special points") {
  Rng rng(6);
  Array x = correlated(30, 4, rng);
  auto b = fit_pca(x, 3);
  Array mean({4}, b.mean);
  Array zm = project(mean, b);
  for (double v : zm.data()) CHECK(std::abs(v) < 1e-12);
  Array shifted({4});
  for (std::size_t j = 0; j < 4; ++j) shifted[j] = b.mean[j] + b.components.at(j, 0);
  Array z = project(shifted, b);
  CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(z[1]) < 1e-12);
  CHECK(std::abs(z[2]) < 1e-12);
}

TEST_CASE("duplicated rows and sign convention give a stable basis") {
  Rng rng(7);
  Array x = correlated(25, 4, rng);
  Array twice({50, 4});
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t j = 0; j < 4; ++j) twice.at(i, j) = x.at(i % 25, j);
  }
  auto a = fit_pca(x, 4);
  auto b = fit_pca(twice, 4);
  for (std::size_t i = 0; i < 16; ++i) CHECK(b.components[i] == doctest::Approx(a.components[i]).epsilon(1e-9));
  for (std::size_t c = 0; c < 4; ++c) {
    double best = 0.0;
    for (std::size_t r = 0; r < 4; ++r) {
      if (std::abs(a.components.at(r, c)) > std::abs(best)) best = a.components.at(r, c);
    }
    CHECK(best > 0.0);
  }
  auto again = PcaBasis::from_json(a.to_json());
  CHECK(again.components == a.components);
}

TEST_CASE("latent scaler and errors") {
  Rng rng(8);
  Array x = correlated(40, 4, rng);
  auto b = fit_pca(x, 2);
  Array z = project(x, b);
  auto s = LatentScaler::fit(z);
  Array e = s.encode(z);
  for (double v : e.data()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  Array back = s.decode(e);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(back[i] == doctest::Approx(z[i]).epsilon(1e-12));

  CHECK_THROWS_AS(fit_pca(x, 0), DomainError);
  CHECK_THROWS_AS(fit_pca(x, 5), DomainError);
  CHECK_THROWS_AS(fit_pca(Array({1, 4}), 1), DomainError);
  CHECK_THROWS_AS(project(Array({2, 3}), b), ShapeError);
}
