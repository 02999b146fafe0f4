#include "kmamba/simplex.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace kmamba::simplex {

std::vector<double> denominators(std::span<const double> y) {
  const std::size_t m = y.size();
  if (m < 2) throw DomainError("simplex: need at least 2 species");
  // 1 - sum_{j != k, j <= m-1} y_j equals y_k + y_m on the simplex; the sum
  // form cancels badly when both are small.
  std::vector<double> d(m - 2);
  for (std::size_t k = 0; k + 2 < m; ++k) d[k] = y[k] + y[m - 1];
  return d;
}

bool on_degenerate_face(std::span<const double> y) {
  for (double d : denominators(y)) {
    if (d < kFaceTolerance) return true;
  }
  return false;
}

std::vector<double> forward_map(std::span<const double> y, double sum_tolerance) {
  const std::size_t m = y.size();
  if (m < 2) throw DomainError("simplex: need at least 2 species");
  double total = 0.0;
  for (double v : y) {
    if (v < 0.0) throw DomainError("simplex: negative mass fraction");
    total += v;
  }
  if (std::abs(total - 1.0) > sum_tolerance) {
    throw DomainError("simplex: mass fractions sum to " + std::to_string(total));
  }
  const auto d = denominators(y);
  std::vector<double> z(m - 1);
  for (std::size_t k = 0; k + 2 < m; ++k) {
    if (d[k] < kFaceTolerance) {
      throw DomainError("simplex: degenerate face (denominator " + std::to_string(d[k]) +
                        " for species " + std::to_string(k + 1) + ")");
    }
    z[k] = y[k] / d[k];
  }
  z[m - 2] = y[m - 2];
  return z;
}

std::vector<double> inverse_map(std::span<const double> z) {
  if (z.empty()) throw DomainError("simplex: empty encoding");
  const std::size_t m = z.size() + 1, n = m - 2;
  const double tail = z[m - 2];
  std::vector<double> y(m);
  if (n > 0) {
    Eigen::MatrixXd a(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Constant(n, 1.0 - tail);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t j = 0; j < n; ++j) a(k, j) = k == j ? 1.0 : z[j];
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(a);
    if (!(lu.rcond() > 1e-14)) throw NumericalError("simplex: singular inverse system");
    Eigen::VectorXd d = lu.solve(b);
    // one refinement step with an extended-precision residual
    Eigen::VectorXd r(n);
    for (std::size_t k = 0; k < n; ++k) {
      long double acc = b[k];
      for (std::size_t j = 0; j < n; ++j) acc -= static_cast<long double>(a(k, j)) * d[j];
      r[k] = static_cast<double>(acc);
    }
    d += lu.solve(r);
    for (std::size_t k = 0; k < n; ++k) y[k] = z[k] * d[k];
  }
  y[m - 2] = tail;
  double head = 0.0;
  for (std::size_t k = 0; k + 1 < m; ++k) head += y[k];
  y[m - 1] = 1.0 - head;
  if (y[m - 1] < -1e-9) {
    throw DomainError("simplex: invalid encoding, last species " + std::to_string(y[m - 1]));
  }
  return y;
}

SpeciesLayout SpeciesLayout::from_names(const std::vector<std::string>& variables,
                                        const std::vector<std::string>& species_names) {
  if (species_names.size() < 2) throw ConfigError("species block needs at least 2 variables");
  SpeciesLayout l;
  l.raw_size = variables.size();
  std::vector<bool> used(variables.size(), false);
  for (const auto& name : species_names) {
    auto it = std::find(variables.begin(), variables.end(), name);
    if (it == variables.end()) throw ConfigError("species '" + name + "' not in dataset");
    const auto idx = static_cast<std::size_t>(it - variables.begin());
    if (used[idx]) throw ConfigError("species '" + name + "' listed twice");
    used[idx] = true;
    l.species.push_back(idx);
  }
  for (std::size_t i = 0; i < variables.size(); ++i) {
    if (!used[i]) l.passthrough.push_back(i);
  }
  return l;
}

std::vector<std::string> SpeciesLayout::encoded_names(const std::vector<std::string>& variables) const {
  std::vector<std::string> out;
  for (auto i : passthrough) out.push_back(variables.at(i));
  for (std::size_t k = 1; k < species.size(); ++k) out.push_back("z" + std::to_string(k));
  return out;
}

Array SpeciesLayout::encode(const Array& raw, double sum_tolerance) const {
  if (raw.rank() == 0 || raw.shape().back() != raw_size) {
    throw ShapeError("species encode: last axis must be " + std::to_string(raw_size));
  }
  Shape shape = raw.shape();
  shape.back() = encoded_size();
  Array out(shape);
  const std::size_t rows = raw.size() / raw_size, q = encoded_size();
  std::vector<double> y(species.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = &raw[r * raw_size];
    double* dst = &out[r * q];
    for (std::size_t i = 0; i < passthrough.size(); ++i) dst[i] = src[passthrough[i]];
    for (std::size_t k = 0; k < species.size(); ++k) y[k] = src[species[k]];
    auto z = forward_map(y, sum_tolerance);
    std::copy(z.begin(), z.end(), dst + passthrough.size());
  }
  return out;
}

Array SpeciesLayout::decode(const Array& encoded, bool clip) const {
  const std::size_t q = encoded_size();
  if (encoded.rank() == 0 || encoded.shape().back() != q) {
    throw ShapeError("species decode: last axis must be " + std::to_string(q));
  }
  Shape shape = encoded.shape();
  shape.back() = raw_size;
  Array out(shape);
  const std::size_t rows = encoded.size() / q;
  std::vector<double> z(species.size() - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = &encoded[r * q];
    double* dst = &out[r * raw_size];
    for (std::size_t i = 0; i < passthrough.size(); ++i) dst[passthrough[i]] = src[i];
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double v = src[passthrough.size() + k];
      z[k] = clip ? std::clamp(v, 0.0, 1.0) : v;
    }
    auto y = inverse_map(z);
    for (std::size_t k = 0; k < species.size(); ++k) dst[species[k]] = y[k];
  }
  return out;
}

nlohmann::json SpeciesLayout::to_json() const {
  return {{"species", species}, {"passthrough", passthrough}, {"raw_size", raw_size}};
}

SpeciesLayout SpeciesLayout::from_json(const nlohmann::json& j) {
  SpeciesLayout l;
  try {
    l.species = j.at("species").get<std::vector<std::size_t>>();
    l.passthrough = j.at("passthrough").get<std::vector<std::size_t>>();
    l.raw_size = j.at("raw_size").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("species layout: ") + e.what());
  }
  if (l.species.size() < 2 || l.species.size() + l.passthrough.size() != l.raw_size) {
    throw IoError("species layout: inconsistent indices");
  }
  return l;
}

}  // namespace kmamba::simplex
