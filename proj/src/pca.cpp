#include "kmamba/pca.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace kmamba::pca {

using nlohmann::json;

std::vector<double> PcaBasis::cumulative_explained() const {
  double total = 0.0;
  for (double v : eigenvalues) total += v;
  std::vector<double> out;
  double acc = 0.0;
  for (double v : eigenvalues) {
    acc += v;
    out.push_back(total > 0.0 ? acc / total : 1.0);
  }
  return out;
}

json PcaBasis::to_json() const {
  return {{"mean", mean},
          {"components", components.storage()},
          {"input_dim", input_dim()},
          {"latent_dim", latent_dim()},
          {"eigenvalues", eigenvalues}};
}

PcaBasis PcaBasis::from_json(const json& j) {
  PcaBasis b;
  try {
    b.mean = j.at("mean").get<std::vector<double>>();
    const auto d = j.at("latent_dim").get<std::size_t>();
    b.components = Array({b.mean.size(), d}, j.at("components").get<std::vector<double>>());
    b.eigenvalues = j.at("eigenvalues").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw IoError(std::string("pca basis: ") + e.what());
  }
  return b;
}

PcaBasis fit_pca(const Array& x, std::size_t d) {
  if (x.rank() != 2) throw ShapeError("fit_pca: expected [n][p]");
  const std::size_t n = x.dim(0), p = x.dim(1);
  if (n < 2) throw DomainError("fit_pca: need at least 2 samples");
  if (d < 1 || d > p) {
    throw DomainError("fit_pca: latent dimension " + std::to_string(d) + " outside [1, " +
                      std::to_string(p) + "]");
  }
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> xm(
      x.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  const Eigen::RowVectorXd mean = xm.colwise().mean();
  const Eigen::MatrixXd xc = xm.rowwise() - mean;
  const Eigen::MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw NumericalError("fit_pca: eigendecomposition failed");

  PcaBasis b;
  b.mean.assign(mean.data(), mean.data() + p);
  // ascending -> descending
  for (std::size_t i = 0; i < p; ++i) b.eigenvalues.push_back(std::max(es.eigenvalues()(p - 1 - i), 0.0));
  b.components = Array({p, d});
  for (std::size_t c = 0; c < d; ++c) {
    Eigen::VectorXd v = es.eigenvectors().col(static_cast<Eigen::Index>(p - 1 - c));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    for (std::size_t r = 0; r < p; ++r) b.components.at(r, c) = v(static_cast<Eigen::Index>(r));
  }
  return b;
}

Array project(const Array& x, const PcaBasis& basis) {
  const std::size_t p = basis.input_dim(), d = basis.latent_dim();
  const bool single = x.rank() == 1;
  if ((x.rank() != 1 && x.rank() != 2) || x.shape().back() != p) {
    throw ShapeError("project: expected [n][" + std::to_string(p) + "], got " + shape_string(x.shape()));
  }
  const std::size_t n = single ? 1 : x.dim(0);
  Array out(single ? Shape{d} : Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < p; ++r) acc += (x[i * p + r] - basis.mean[r]) * basis.components.at(r, c);
      out[i * d + c] = acc;
    }
  }
  return out;
}

LatentScaler LatentScaler::fit(const Array& latent) {
  if (latent.rank() != 2 || latent.dim(0) == 0) throw ShapeError("latent scaler: expected [n][d]");
  const std::size_t n = latent.dim(0), d = latent.dim(1);
  LatentScaler s;
  s.min.assign(d, std::numeric_limits<double>::infinity());
  s.max.assign(d, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      s.min[c] = std::min(s.min[c], latent.at(i, c));
      s.max[c] = std::max(s.max[c], latent.at(i, c));
    }
  }
  return s;
}

Array LatentScaler::encode(const Array& latent) const {
  const std::size_t d = min.size();
  if (latent.rank() == 0 || latent.shape().back() != d) throw ShapeError("latent scaler: width mismatch");
  Array out(latent.shape());
  for (std::size_t i = 0; i < latent.size(); ++i) {
    const std::size_t c = i % d;
    const double range = max[c] - min[c];
    out[i] = range > 0.0 ? 2.0 * (latent[i] - min[c]) / range - 1.0 : 0.0;
  }
  return out;
}

Array LatentScaler::decode(const Array& scaled) const {
  const std::size_t d = min.size();
  if (scaled.rank() == 0 || scaled.shape().back() != d) throw ShapeError("latent scaler: width mismatch");
  Array out(scaled.shape());
  for (std::size_t i = 0; i < scaled.size(); ++i) {
    const std::size_t c = i % d;
    out[i] = (scaled[i] + 1.0) / 2.0 * (max[c] - min[c]) + min[c];
  }
  return out;
}

json LatentScaler::to_json() const { return {{"min", min}, {"max", max}}; }

LatentScaler LatentScaler::from_json(const json& j) {
  LatentScaler s;
  try {
    s.min = j.at("min").get<std::vector<double>>();
    s.max = j.at("max").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw IoError(std::string("latent scaler: ") + e.what());
  }
  return s;
}

}  // namespace kmamba::pca
