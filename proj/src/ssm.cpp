#include "kmamba/ssm.hpp"

#include <cmath>
#include <memory>
#include <random>

#include "kmamba/rng.hpp"
#include "kmamba/simd/kernels.hpp"

namespace kmamba::ssm {

double zoh_input_factor(double u, ZohVariant variant) {
  if (variant == ZohVariant::literal) return -std::expm1(-u);
  if (std::abs(u) < 1e-5) return 1.0 + u * (0.5 + u / 6.0);
  return std::expm1(u) / u;
}

double zoh_input_factor_derivative(double u, ZohVariant variant) {
  if (variant == ZohVariant::literal) return std::exp(-u);
  if (std::abs(u) < 1e-4) return 0.5 + u * (1.0 / 3.0 + u / 8.0);
  return (u * std::exp(u) - std::expm1(u)) / (u * u);
}

Discretized zoh_discretize(double delta, double a, double b, ZohVariant variant) {
  if (!(delta > 0.0)) throw DomainError("zoh_discretize: delta must be positive");
  const double u = delta * a;
  return {std::exp(u), zoh_input_factor(u, variant) * delta * b};
}

void affine_inclusive_scan(std::size_t steps, std::size_t width, std::size_t stride, double* a,
                           double* u) {
  if (steps < 2) return;
  // element r <- element r composed after element l
  auto combine = [&](std::size_t l, std::size_t r) {
    double* al = a + l * stride;
    double* ul = u + l * stride;
    double* ar = a + r * stride;
    double* ur = u + r * stride;
    for (std::size_t k = 0; k < width; ++k) {
      ur[k] = ar[k] * ul[k] + ur[k];
      ar[k] = ar[k] * al[k];
    }
  };
  std::size_t top = 1;
  for (std::size_t d = 1; d < steps; d *= 2) {
    for (std::size_t i = 2 * d - 1; i < steps; i += 2 * d) combine(i - d, i);
    top = d;
  }
  for (std::size_t d = top; d >= 1; d /= 2) {
    for (std::size_t i = 3 * d - 1; i < steps; i += 2 * d) combine(i - d, i);
  }
}

namespace {

// h[T][C][S] from abar/bbar/x via the tree scan, then y = sum_n c h.
void parallel_forward(std::size_t nt, std::size_t nc, std::size_t ns, const double* abar,
                      const double* bbar, const double* x, const double* cm, double* h,
                      double* y) {
  const std::size_t cs = nc * ns;
  std::vector<double> a_work(abar, abar + nt * cs);
  for (std::size_t t = 0; t < nt; ++t) {
    for (std::size_t ch = 0; ch < nc; ++ch) {
      const double xv = x[t * nc + ch];
      for (std::size_t n = 0; n < ns; ++n) {
        h[t * cs + ch * ns + n] = bbar[t * cs + ch * ns + n] * xv;
      }
    }
  }
  // All C*S lanes scan along time with stride C*S.
  affine_inclusive_scan(nt, cs, cs, a_work.data(), h);
  for (std::size_t t = 0; t < nt; ++t) {
    for (std::size_t ch = 0; ch < nc; ++ch) {
      double acc = 0.0;
      for (std::size_t n = 0; n < ns; ++n) acc += cm[t * ns + n] * h[t * cs + ch * ns + n];
      y[t * nc + ch] = acc;
    }
  }
}

// zoh_input_factor and its derivative given e = exp(u), avoiding further
// transcendental calls in the hot loops.
inline double input_factor_from_exp(double u, double e, ZohVariant variant) {
  if (variant == ZohVariant::literal) return 1.0 - 1.0 / e;
  if (std::abs(u) < 1e-3) return 1.0 + u * (0.5 + u * (1.0 / 6.0 + u / 24.0));
  return (e - 1.0) / u;
}

inline double input_factor_derivative_from_exp(double u, double e, double kap, ZohVariant variant) {
  if (variant == ZohVariant::literal) return 1.0 / e;
  if (std::abs(u) < 1e-3) return 0.5 + u * (1.0 / 3.0 + u * (1.0 / 8.0 + u / 30.0));
  return (e - kap) / u;
}

void check_scan_shapes(const Shape& x, const Shape& delta, const Shape& a, const Shape& b,
                       const Shape& c) {
  const bool ok = x.size() == 3 && delta == x && a.size() == 2 && a[0] == x[2] &&
                  b.size() == 3 && b[0] == x[0] && b[1] == x[1] && b[2] == a[1] && c == b;
  if (!ok) {
    throw ShapeError("selective_scan: x" + shape_string(x) + " delta" + shape_string(delta) +
                     " a" + shape_string(a) + " b" + shape_string(b) + " c" + shape_string(c));
  }
}

}  // namespace

Array scan_discrete(const Array& abar, const Array& bbar, const Array& x, const Array& c,
                    ScanMode mode) {
  if (abar.rank() != 4 || bbar.shape() != abar.shape() || x.rank() != 3 ||
      x.dim(0) != abar.dim(0) || x.dim(1) != abar.dim(1) || x.dim(2) != abar.dim(2) ||
      c.rank() != 3 || c.dim(0) != abar.dim(0) || c.dim(1) != abar.dim(1) ||
      c.dim(2) != abar.dim(3)) {
    throw ShapeError("scan_discrete: inconsistent shapes");
  }
  const std::size_t nb = abar.dim(0), nt = abar.dim(1), nc = abar.dim(2), ns = abar.dim(3);
  Array y(x.shape());
  std::vector<double> h(nt * nc * ns);
  for (std::size_t b = 0; b < nb; ++b) {
    const double* ab = &abar[b * nt * nc * ns];
    const double* bb = &bbar[b * nt * nc * ns];
    const double* xb = &x[b * nt * nc];
    const double* cb = &c[b * nt * ns];
    double* yb = &y[b * nt * nc];
    if (mode == ScanMode::sequential) {
      simd::kernels().scan_forward({nt, nc, ns, ab, bb, xb, cb, h.data(), yb});
    } else {
      parallel_forward(nt, nc, ns, ab, bb, xb, cb, h.data(), yb);
    }
  }
  if (!y.all_finite()) throw NumericalError("selective_scan: non-finite state");
  return y;
}

ad::Tensor selective_scan(const ad::Tensor& x, const ad::Tensor& delta, const ad::Tensor& a,
                          const ad::Tensor& b, const ad::Tensor& c, ScanMode mode,
                          ZohVariant variant) {
  check_scan_shapes(x.shape(), delta.shape(), a.shape(), b.shape(), c.shape());
  const std::size_t nb = x.dim(0), nt = x.dim(1), nc = x.dim(2), ns = a.dim(1);
  const std::size_t cs = nc * ns;
  const Array& dv = delta.value();
  const Array& av = a.value();
  const Array& bv = b.value();
  for (double d : dv.data()) {
    if (!(d >= 0.0)) throw DomainError("selective_scan: delta must be nonnegative");
  }

  // Discretized parameters of one sequence: abar = exp(delta a), kappa the
  // input factor, bbar = kappa delta b. Layout [T][C][S].
  auto discretize = [nt, nc, ns, cs, variant](const double* d, const double* am, const double* bm,
                                               double* abar, double* kappa, double* bbar) {
    const auto& kern = simd::kernels();
    for (std::size_t t = 0; t < nt; ++t) {
      double* e_row = abar + t * cs;
      for (std::size_t ch = 0; ch < nc; ++ch) {
        for (std::size_t n = 0; n < ns; ++n) e_row[ch * ns + n] = d[t * nc + ch] * am[ch * ns + n];
      }
      kern.exp_inplace(e_row, cs);
      for (std::size_t ch = 0; ch < nc; ++ch) {
        const double dl = d[t * nc + ch];
        for (std::size_t n = 0; n < ns; ++n) {
          const std::size_t k = t * cs + ch * ns + n;
          const double kap = input_factor_from_exp(dl * am[ch * ns + n], e_row[ch * ns + n], variant);
          kappa[k] = kap;
          bbar[k] = kap * dl * bm[t * ns + n];
        }
      }
    }
  };

  std::vector<double> abar(nt * cs), kappa(nt * cs), bbar(nt * cs), h(nt * cs);
  const auto& kern = simd::kernels();
  Array y(x.shape());
  for (std::size_t bi = 0; bi < nb; ++bi) {
    discretize(&dv[bi * nt * nc], av.data().data(), &bv[bi * nt * ns], abar.data(), kappa.data(), bbar.data());
    const double* xb = &x.value()[bi * nt * nc];
    const double* cb = &c.value()[bi * nt * ns];
    double* yb = &y[bi * nt * nc];
    if (mode == ScanMode::sequential) {
      kern.scan_forward({nt, nc, ns, abar.data(), bbar.data(), xb, cb, h.data(), yb});
    } else {
      parallel_forward(nt, nc, ns, abar.data(), bbar.data(), xb, cb, h.data(), yb);
    }
  }
  if (!y.all_finite()) throw NumericalError("selective_scan: non-finite state");

  const bool needs = x.requires_grad() || delta.requires_grad() || a.requires_grad() ||
                     b.requires_grad() || c.requires_grad();
  if (!needs) return ad::Tensor::from_op("selective_scan", std::move(y), {x, delta, a, b, c}, nullptr);

  auto xs = std::make_shared<Array>(x.value());
  auto ds = std::make_shared<Array>(dv);
  auto as = std::make_shared<Array>(av);
  auto bs = std::make_shared<Array>(bv);
  auto csx = std::make_shared<Array>(c.value());
  // States are recomputed per sequence in the backward pass rather than kept
  // for the whole batch.
  return ad::Tensor::from_op(
      "selective_scan", std::move(y), {x, delta, a, b, c},
      [=](const Array& g, std::span<Array* const> grads) {
        const auto& kern = simd::kernels();
        std::vector<double> abar(nt * cs), kappa(nt * cs), bbar(nt * cs), h(nt * cs);
        std::vector<double> g_abar(nt * cs), g_bbar(nt * cs), carry(cs);
        std::vector<double> y_tmp(nt * nc), gx_tmp(nt * nc), gc_tmp(nt * ns);
        for (std::size_t bi = 0; bi < nb; ++bi) {
          const double* xb = &(*xs)[bi * nt * nc];
          const double* cb = &(*csx)[bi * nt * ns];
          discretize(&(*ds)[bi * nt * nc], as->data().data(), &(*bs)[bi * nt * ns], abar.data(), kappa.data(),
                     bbar.data());
          kern.scan_forward({nt, nc, ns, abar.data(), bbar.data(), xb, cb, h.data(), y_tmp.data()});
          double* gx = grads[0] ? &(*grads[0])[bi * nt * nc] : gx_tmp.data();
          double* gc = grads[4] ? &(*grads[4])[bi * nt * ns] : gc_tmp.data();
          kern.scan_backward({nt, nc, ns, abar.data(), bbar.data(), xb, cb, h.data(), &g[bi * nt * nc], gx, gc,
                              g_abar.data(), g_bbar.data(), carry.data()});
          if (!grads[1] && !grads[2] && !grads[3]) continue;
          for (std::size_t t = 0; t < nt; ++t) {
            const std::size_t bt = bi * nt + t;
            for (std::size_t ch = 0; ch < nc; ++ch) {
              const double dl = (*ds)[bt * nc + ch];
              double d_delta = 0.0;
              for (std::size_t n = 0; n < ns; ++n) {
                const std::size_t k = t * cs + ch * ns + n;
                const double an = (*as)[ch * ns + n];
                const double u = dl * an;
                const double kap = kappa[k];
                const double dk = input_factor_derivative_from_exp(u, abar[k], kap, variant);
                const double bn = (*bs)[bt * ns + n];
                const double ga = g_abar[k] * abar[k];
                const double gb = g_bbar[k] * bn;
                d_delta += ga * an + gb * (dk * u + kap);
                if (grads[2]) (*grads[2])[ch * ns + n] += ga * dl + gb * dk * dl * dl;
                if (grads[3]) (*grads[3])[bt * ns + n] += g_bbar[k] * kap * dl;
              }
              if (grads[1]) (*grads[1])[bt * nc + ch] += d_delta;
            }
          }
        }
      });
}

Array selective_scan(const Array& x, const Array& delta, const Array& a, const Array& b,
                     const Array& c, ScanMode mode, ZohVariant variant) {
  using ad::Tensor;
  return selective_scan(Tensor::constant(x), Tensor::constant(delta), Tensor::constant(a),
                        Tensor::constant(b), Tensor::constant(c), mode, variant)
      .value();
}

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  if (in_dim == 0 || out_dim == 0) throw ConfigError("model: in_dim and out_dim must be positive");
  if (d_model == 0 || state_dim == 0 || expand == 0 || conv_width == 0) {
    throw ConfigError("model: d_model, state_dim, expand and conv_width must be positive");
  }
  if (!(dt_min > 0.0) || !(dt_max >= dt_min)) throw ConfigError("model: need 0 < dt_min <= dt_max");
}

ad::Tensor mamba_block_forward(const ad::Tensor& xp, const MambaBlockTensors& p,
                               const ModelConfig& cfg) {
  using namespace ad;
  const std::size_t en = cfg.inner();
  const std::size_t r = cfg.resolved_dt_rank();
  const std::size_t s = cfg.state_dim;
  if (xp.rank() != 3 || xp.dim(2) != cfg.d_model) {
    throw ShapeError("mamba block: expected [B, T, " + std::to_string(cfg.d_model) + "], got " +
                     shape_string(xp.shape()));
  }
  Tensor xz = matmul(xp, p.in_w) + p.in_b;
  Tensor stream = slice(xz, 2, 0, en);
  Tensor gate = slice(xz, 2, en, 2 * en);
  Tensor xs = silu(causal_conv1d(stream, p.conv_w, p.conv_b));
  Tensor dbc = matmul(xs, p.x_w);
  Tensor delta = softplus(matmul(slice(dbc, 2, 0, r), p.dt_w) + p.dt_b);
  Tensor bm = slice(dbc, 2, r, r + s);
  Tensor cm = slice(dbc, 2, r + s, r + 2 * s);
  Tensor a = neg(exp(p.a_log));
  Tensor y = selective_scan(xs, delta, a, bm, cm, cfg.scan_mode, cfg.zoh) + xs * p.d_skip;
  return matmul(y * silu(gate), p.out_w) + p.out_b;
}

// ---------------------------------------------------------------------------

std::vector<NamedArray> Backbone::layout(const ModelConfig& cfg) {
  const std::size_t n = cfg.d_model, en = cfg.inner(), s = cfg.state_dim;
  const std::size_t r = cfg.resolved_dt_rank(), k = cfg.conv_width;
  std::vector<NamedArray> out;
  auto add = [&](std::string name, Shape shape) { out.push_back({std::move(name), Array(std::move(shape))}); };
  auto add_norm = [&](const std::string& prefix) {
    add(prefix + ".weight", {n});
    if (cfg.norm == NormKind::layer) add(prefix + ".bias", {n});
  };
  add("in_proj.weight", {cfg.in_dim, n});
  add("in_proj.bias", {n});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string b = "blocks." + std::to_string(l);
    add_norm(b + ".norm1");
    add(b + ".mixer.in_proj.weight", {n, 2 * en});
    add(b + ".mixer.in_proj.bias", {2 * en});
    add(b + ".mixer.conv.weight", {k, en});
    add(b + ".mixer.conv.bias", {en});
    add(b + ".mixer.x_proj.weight", {en, r + 2 * s});
    add(b + ".mixer.dt_proj.weight", {r, en});
    add(b + ".mixer.dt_proj.bias", {en});
    add(b + ".mixer.a_log", {en, s});
    add(b + ".mixer.d", {en});
    add(b + ".mixer.out_proj.weight", {en, n});
    add(b + ".mixer.out_proj.bias", {n});
    add_norm(b + ".norm2");
    add(b + ".mlp.fc1.weight", {n, 2 * n});
    add(b + ".mlp.fc1.bias", {2 * n});
    add(b + ".mlp.fc2.weight", {2 * n, n});
    add(b + ".mlp.fc2.bias", {n});
  }
  add_norm("norm_f");
  add("out_proj.weight", {n, cfg.out_dim});
  add("out_proj.bias", {cfg.out_dim});
  return out;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Backbone Backbone::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Backbone bb;
  bb.cfg_ = cfg;
  bb.params_ = layout(cfg);
  Rng rng(seed);
  const std::size_t s = cfg.state_dim;
  for (auto& [name, arr] : bb.params_) {
    auto data = arr.data();
    if (ends_with(name, "norm1.weight") || ends_with(name, "norm2.weight") || name == "norm_f.weight") {
      std::fill(data.begin(), data.end(), 1.0);
    } else if (ends_with(name, ".a_log")) {
      for (std::size_t i = 0; i < arr.size(); ++i) data[i] = std::log(static_cast<double>(i % s + 1));
    } else if (ends_with(name, ".mixer.d")) {
      std::fill(data.begin(), data.end(), 1.0);
    } else if (ends_with(name, "dt_proj.bias")) {
      // dt ~ log-uniform in [dt_min, dt_max]; bias = softplus^-1(dt)
      const double lo = std::log(cfg.dt_min), hi = std::log(cfg.dt_max);
      for (double& v : data) {
        const double dt = std::exp(lo + (hi - lo) * rng.uniform());
        v = dt + std::log(-std::expm1(-dt));
      }
    } else if (ends_with(name, "dt_proj.weight")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.resolved_dt_rank()));
      for (double& v : data) v = rng.uniform(-bound, bound);
    } else if (ends_with(name, "conv.weight")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.conv_width));
      for (double& v : data) v = rng.uniform(-bound, bound);
    } else if (ends_with(name, ".weight") && arr.rank() == 2) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(arr.dim(0)));
      for (double& v : data) v = rng.uniform(-bound, bound);
    }
    // biases and norm offsets stay zero
  }
  return bb;
}

Backbone::Backbone(ModelConfig cfg, std::vector<NamedArray> params) : cfg_(std::move(cfg)) {
  cfg_.validate();
  auto expected = layout(cfg_);
  if (expected.size() != params.size()) {
    throw ShapeError("backbone: expected " + std::to_string(expected.size()) +
                     " parameter arrays, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i].name != params[i].name || expected[i].value.shape() != params[i].value.shape()) {
      throw ShapeError("backbone: parameter " + std::to_string(i) + " is '" + params[i].name + "' " +
                       shape_string(params[i].value.shape()) + ", expected '" + expected[i].name +
                       "' " + shape_string(expected[i].value.shape()));
    }
  }
  params_ = std::move(params);
}

std::size_t Backbone::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

std::vector<ad::Tensor> Backbone::parameter_tensors() const {
  std::vector<ad::Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(ad::Tensor::parameter(p.value));
  return out;
}

ad::Tensor Backbone::forward(const ad::Tensor& x, std::span<const ad::Tensor> params) const {
  using namespace ad;
  if (params.size() != params_.size()) throw ShapeError("backbone: parameter count mismatch");
  if (x.rank() != 3 || x.dim(2) != cfg_.in_dim) {
    throw ShapeError("backbone: expected input [B, T, " + std::to_string(cfg_.in_dim) + "], got " +
                     shape_string(x.shape()));
  }
  std::size_t cursor = 0;
  auto next = [&]() -> const Tensor& { return params[cursor++]; };
  auto norm = [&](const Tensor& v) {
    const Tensor& w = next();
    if (cfg_.norm == NormKind::layer) {
      const Tensor& b = next();
      return layer_norm(v, w, b);
    }
    return rms_norm(v, w);
  };

  Tensor h = matmul(x, next());
  h = h + next();
  Tensor residual;
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    residual = residual.defined() ? h + residual : h;
    Tensor normed = norm(residual);
    MambaBlockTensors mp;
    mp.in_w = next();
    mp.in_b = next();
    mp.conv_w = next();
    mp.conv_b = next();
    mp.x_w = next();
    mp.dt_w = next();
    mp.dt_b = next();
    mp.a_log = next();
    mp.d_skip = next();
    mp.out_w = next();
    mp.out_b = next();
    h = mamba_block_forward(normed, mp, cfg_);
    residual = h + residual;
    Tensor n2 = norm(residual);
    const Tensor& w1 = next();
    const Tensor& b1 = next();
    const Tensor& w2 = next();
    const Tensor& b2 = next();
    h = matmul(silu(matmul(n2, w1) + b1), w2) + b2;
  }
  residual = residual.defined() ? h + residual : h;
  Tensor out = norm(residual);
  out = matmul(out, next());
  return out + next();
}

Array Backbone::predict(const Array& x) const {
  std::vector<ad::Tensor> ps;
  ps.reserve(params_.size());
  for (const auto& p : params_) ps.push_back(ad::Tensor::constant(p.value));
  return forward(ad::Tensor::constant(x), ps).value();
}

}  // namespace kmamba::ssm
