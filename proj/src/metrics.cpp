#include "kmamba/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace kmamba::metrics {

using nlohmann::json;

namespace {

double percent(double num, double den) {
  if (den > 0.0) return 100.0 * num / den;
  return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

std::string name_of(const std::vector<std::string>& names, std::size_t i) {
  return i < names.size() ? names[i] : "v" + std::to_string(i);
}

}  // namespace

Aggregate aggregate(const Array& matrix) {
  if (matrix.rank() != 2) throw ShapeError("aggregate: expected [M][p]");
  const std::size_t m = matrix.dim(0), p = matrix.dim(1);
  Aggregate a;
  a.per_variable.assign(p, 0.0);
  if (m == 0 || p == 0) return a;
  for (std::size_t v = 0; v < p; ++v) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += matrix.at(j, v);
    a.per_variable[v] = s / static_cast<double>(m);
  }
  double s = 0.0;
  for (double v : matrix.data()) s += v;
  a.overall = s / static_cast<double>(m * p);
  return a;
}

ErrorReport rel_l2(const Array& pred, const Array& truth, Clip clip, std::vector<std::string> variables) {
  if (pred.shape() != truth.shape() || truth.rank() != 3) {
    throw ShapeError("rel_l2: pred " + shape_string(pred.shape()) + " vs truth " +
                     shape_string(truth.shape()));
  }
  const std::size_t m = truth.dim(0), nt = truth.dim(1), p = truth.dim(2);
  Array num({m, p}), den({m, p});
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t t = 0; t < nt; ++t) {
      for (std::size_t v = 0; v < p; ++v) {
        const double tr = truth.at(j, t, v);
        const double d = pred.at(j, t, v) - tr;
        num.at(j, v) += d * d;
        den.at(j, v) += tr * tr;
      }
    }
  }
  for (double& x : num.data()) x = std::sqrt(x);
  for (double& x : den.data()) x = std::sqrt(x);

  ErrorReport r;
  r.variables = std::move(variables);
  r.clipped = clip == Clip::epsilon_rule;
  if (r.clipped) {
    r.epsilon.assign(p, 0.0);
    for (std::size_t v = 0; v < p; ++v) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += den.at(j, v);
      r.epsilon[v] = m ? 1e-3 * s / static_cast<double>(m) : 0.0;
    }
  }
  r.matrix = Array({m, p});
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t v = 0; v < p; ++v) {
      const double d = r.clipped ? std::max(den.at(j, v), r.epsilon[v]) : den.at(j, v);
      r.matrix.at(j, v) = percent(num.at(j, v), d);
    }
  }
  auto agg = aggregate(r.matrix);
  r.per_variable = std::move(agg.per_variable);
  r.overall = agg.overall;
  return r;
}

json ErrorReport::to_json() const {
  json vars = json::array();
  for (std::size_t v = 0; v < per_variable.size(); ++v) {
    json e{{"name", name_of(variables, v)}, {"mean_percent", per_variable[v]}};
    if (clipped) e["epsilon"] = epsilon[v];
    vars.push_back(e);
  }
  return {{"samples", matrix.rank() == 2 ? matrix.dim(0) : 0},
          {"overall_percent", overall},
          {"clipped", clipped},
          {"variables", vars}};
}

void ErrorReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << std::setprecision(17) << "sample,variable,rel_l2_percent\n";
  for (std::size_t j = 0; j < matrix.dim(0); ++j) {
    for (std::size_t v = 0; v < matrix.dim(1); ++v) {
      f << j << ',' << name_of(variables, v) << ',' << matrix.at(j, v) << '\n';
    }
  }
}

void ErrorReport::write_summary_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << std::setprecision(17) << "variable,mean_percent\n";
  for (std::size_t v = 0; v < per_variable.size(); ++v) f << name_of(variables, v) << ',' << per_variable[v] << '\n';
  f << "overall," << overall << '\n';
}

}  // namespace kmamba::metrics
