#include "kmamba/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "kmamba/simd/kernels.hpp"

namespace kmamba {

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Array(std::move(shape), data_);
}

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace kmamba

namespace kmamba::ad {

namespace {

void check_finite(const Array& value, std::string_view op) {
  if (!value.all_finite()) {
    throw NumericalError("non-finite result in op '" + std::string(op) + "'");
  }
}

void ensure_grad(Node& node) {
  if (node.grad.shape() != node.value.shape() || node.grad.size() != node.value.size()) {
    node.grad = Array(node.value.shape());
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

Tensor Tensor::constant(Array value) {
  check_finite(value, "constant");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::parameter(Array value) {
  check_finite(value, "parameter");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

Tensor Tensor::from_op(std::string_view op, Array value, std::vector<Tensor> inputs,
                       BackwardFn backward) {
  check_finite(value, op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (auto& t : inputs) node->inputs.push_back(t.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

Tape Tape::record(const Tensor& output) {
  Tape tape;
  if (!output.defined() || !output.requires_grad()) return tape;
  std::unordered_set<const Node*> seen;
  // Iterative post-order DFS: a node is emitted after all of its inputs.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(output.node().get(), 0);
  seen.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

bool Tape::contains(const Node* node) const {
  return std::find(order_.begin(), order_.end(), node) != order_.end();
}

std::vector<Array> backward_grad(const Tensor& output, std::span<const Tensor> wrt) {
  if (!output.defined() || !output.requires_grad()) {
    throw Error("backward_grad: output has no recorded tape");
  }
  if (output.size() != 1) {
    throw ShapeError("backward_grad: output must be scalar, got " + shape_string(output.shape()));
  }
  Tape tape = Tape::record(output);
  for (const auto& w : wrt) {
    if (!w.defined() || !tape.contains(w.node().get())) {
      throw Error("backward_grad: requested tensor is not part of the graph");
    }
  }
  auto nodes = tape.nodes();
  for (Node* n : nodes) n->grad = Array(n->value.shape());
  nodes.back()->grad[0] = 1.0;

  std::vector<Array*> input_grads;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    input_grads.assign(n->inputs.size(), nullptr);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      Node* in = n->inputs[i].get();
      if (in->requires_grad) {
        ensure_grad(*in);
        input_grads[i] = &in->grad;
      }
    }
    n->backward(n->grad, input_grads);
  }

  std::vector<Array> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) result.push_back(w.node()->grad);
  for (Node* n : nodes) n->grad = Array();
  return result;
}

std::vector<Array> backward_grad(const Tensor& output, std::initializer_list<Tensor> wrt) {
  return backward_grad(output, std::span<const Tensor>(wrt.begin(), wrt.size()));
}

// ---------------------------------------------------------------------------
// Elementwise binary ops with leading-axis broadcast.

namespace {

enum class BinKind { add, sub, mul };

Tensor binary(const Tensor& a, const Tensor& b, BinKind kind, std::string_view name) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  // big is the operand that defines the output shape; small repeats over it.
  bool b_small;
  if (sa == sb || is_suffix(sb, sa)) {
    b_small = true;
  } else if (is_suffix(sa, sb)) {
    b_small = false;
  } else {
    throw ShapeError(std::string(name) + ": shapes " + shape_string(sa) + " and " +
                     shape_string(sb) + " do not broadcast");
  }
  const Array& big = b_small ? a.value() : b.value();
  const Array& small = b_small ? b.value() : a.value();
  const std::size_t n = big.size();
  const std::size_t m = small.size();
  Array out(big.shape());
  auto* o = out.data().data();
  const double* bp = big.data().data();
  const double* sp = small.data().data();
  for (std::size_t i = 0; m > 0 && i < n; i += m) {
    for (std::size_t j = 0; j < m; ++j) {
      const double x = b_small ? bp[i + j] : sp[j];
      const double y = b_small ? sp[j] : bp[i + j];
      switch (kind) {
        case BinKind::add: o[i + j] = x + y; break;
        case BinKind::sub: o[i + j] = x - y; break;
        case BinKind::mul: o[i + j] = x * y; break;
      }
    }
  }
  const bool keep = kind == BinKind::mul && (a.requires_grad() || b.requires_grad());
  Array av = keep ? a.value() : Array();
  Array bv = keep ? b.value() : Array();
  return Tensor::from_op(
      name, std::move(out), {a, b},
      [kind, b_small, m, av = std::move(av), bv = std::move(bv)](const Array& g, std::span<Array* const> grads) {
        const std::size_t n = g.size();
        // Index into the big/small operand for flat output index k.
        auto a_at = [&](std::size_t k) { return b_small ? av[k] : av[k % m]; };
        auto b_at = [&](std::size_t k) { return b_small ? bv[k % m] : bv[k]; };
        auto a_idx = [&](std::size_t k) { return b_small ? k : k % m; };
        auto b_idx = [&](std::size_t k) { return b_small ? k % m : k; };
        if (Array* ga = grads[0]) {
          for (std::size_t k = 0; k < n; ++k) {
            double d = g[k];
            if (kind == BinKind::mul) d *= b_at(k);
            (*ga)[a_idx(k)] += d;
          }
        }
        if (Array* gb = grads[1]) {
          for (std::size_t k = 0; k < n; ++k) {
            double d = g[k];
            if (kind == BinKind::sub) d = -d;
            if (kind == BinKind::mul) d *= a_at(k);
            (*gb)[b_idx(k)] += d;
          }
        }
      });
}

template <class F, class DF>
Tensor unary(const Tensor& a, std::string_view name, F f, DF df) {
  const Array& av = a.value();
  Array out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  if (!a.requires_grad()) return Tensor::from_op(name, std::move(out), {a}, nullptr);
  Array keep_in = av;
  Array keep_out = out;
  return Tensor::from_op(name, std::move(out), {a},
                         [df, keep_in = std::move(keep_in), keep_out = std::move(keep_out)](
                             const Array& g, std::span<Array* const> grads) {
                           Array& ga = *grads[0];
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             ga[i] += g[i] * df(keep_in[i], keep_out[i]);
                           }
                         });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinKind::mul, "mul"); }

double softplus_value(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor neg(const Tensor& a) {
  return unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor square(const Tensor& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor reciprocal(const Tensor& a) {
  return unary(
      a, "reciprocal", [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

Tensor softplus(const Tensor& a) {
  return unary(a, "softplus", softplus_value, [](double x, double) { return sigmoid_value(x); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, "silu", [](double x) { return x * sigmoid_value(x); },
      [](double x, double) {
        const double s = sigmoid_value(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (b.rank() != 2 || a.rank() < 1 || a.shape().back() != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                     shape_string(b.shape()));
  }
  const std::size_t k = b.dim(0);
  const std::size_t n = b.dim(1);
  const std::size_t m = k == 0 ? 0 : a.size() / k;
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Array out(out_shape);
  const auto& kern = simd::kernels();
  if (m > 0 && n > 0) kern.gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data().data());
  Array av = b.requires_grad() ? a.value() : Array();
  Array bv = a.requires_grad() ? b.value() : Array();
  return Tensor::from_op("matmul", std::move(out), {a, b},
                         [m, n, k, av = std::move(av), bv = std::move(bv)](
                             const Array& g, std::span<Array* const> grads) {
                           const auto& kern = simd::kernels();
                           if (m == 0 || n == 0) return;
                           if (Array* ga = grads[0]) {
                             kern.gemm_nt_acc(m, n, k, g.data().data(), bv.data().data(),
                                              ga->data().data());
                           }
                           if (Array* gb = grads[1]) {
                             kern.gemm_tn_acc(m, n, k, av.data().data(), g.data().data(),
                                              gb->data().data());
                           }
                         });
}

// ---------------------------------------------------------------------------

Tensor causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 3 || weight.rank() != 2 || bias.rank() != 1 || weight.dim(1) != x.dim(2) ||
      bias.dim(0) != x.dim(2) || weight.dim(0) == 0) {
    throw ShapeError("causal_conv1d: bad shapes x" + shape_string(x.shape()) + " w" +
                     shape_string(weight.shape()) + " b" + shape_string(bias.shape()));
  }
  const std::size_t nb = x.dim(0), nt = x.dim(1), nc = x.dim(2), kw = weight.dim(0);
  const Array& xv = x.value();
  const Array& wv = weight.value();
  const Array& bv = bias.value();
  Array out(x.shape());
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t t = 0; t < nt; ++t) {
      double* o = &out.at(b, t, 0);
      for (std::size_t c = 0; c < nc; ++c) o[c] = bv[c];
      for (std::size_t k = 0; k < kw; ++k) {
        // tap k sees x[t - (kw - 1) + k]
        if (t + k + 1 < kw) continue;
        const std::size_t src = t + k + 1 - kw;
        const double* xs = &xv.at(b, src, 0);
        const double* ws = &wv[k * nc];
        for (std::size_t c = 0; c < nc; ++c) o[c] += ws[c] * xs[c];
      }
    }
  }
  Array xk = weight.requires_grad() ? xv : Array();
  Array wk = x.requires_grad() ? wv : Array();
  return Tensor::from_op(
      "causal_conv1d", std::move(out), {x, weight, bias},
      [nb, nt, nc, kw, xk = std::move(xk), wk = std::move(wk)](const Array& g,
                                                             std::span<Array* const> grads) {
        Array* gx = grads[0];
        Array* gw = grads[1];
        Array* gbias = grads[2];
        for (std::size_t b = 0; b < nb; ++b) {
          for (std::size_t t = 0; t < nt; ++t) {
            const double* go = &g.at(b, t, 0);
            if (gbias) {
              for (std::size_t c = 0; c < nc; ++c) (*gbias)[c] += go[c];
            }
            for (std::size_t k = 0; k < kw; ++k) {
              if (t + k + 1 < kw) continue;
              const std::size_t src = t + k + 1 - kw;
              if (gx) {
                double* gxs = &gx->at(b, src, 0);
                const double* ws = &wk[k * nc];
                for (std::size_t c = 0; c < nc; ++c) gxs[c] += ws[c] * go[c];
              }
              if (gw) {
                const double* xs = &xk.at(b, src, 0);
                double* gws = &(*gw)[k * nc];
                for (std::size_t c = 0; c < nc; ++c) gws[c] += xs[c] * go[c];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------

namespace {

void check_norm_shapes(const Tensor& x, const Tensor& gamma, std::string_view name) {
  if (x.rank() < 1 || gamma.rank() != 1 || gamma.dim(0) != x.shape().back()) {
    throw ShapeError(std::string(name) + ": gamma " + shape_string(gamma.shape()) +
                     " does not match x " + shape_string(x.shape()));
  }
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_norm_shapes(x, gamma, "layer_norm");
  check_norm_shapes(x, beta, "layer_norm");
  const std::size_t d = x.shape().back();
  const std::size_t rows = d == 0 ? 0 : x.size() / d;
  const Array& xv = x.value();
  Array xhat(x.shape());
  std::vector<double> rstd(rows);
  Array out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * d];
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * rstd[r];
      out[r * d + j] = xhat[r * d + j] * gamma.value()[j] + beta.value()[j];
    }
  }
  Array gv = gamma.value();
  return Tensor::from_op(
      "layer_norm", std::move(out), {x, gamma, beta},
      [d, rows, xhat = std::move(xhat), rstd = std::move(rstd), gv = std::move(gv)](
          const Array& g, std::span<Array* const> grads) {
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = &g[r * d];
          const double* xh = &xhat[r * d];
          if (grads[1]) {
            for (std::size_t j = 0; j < d; ++j) (*grads[1])[j] += gr[j] * xh[j];
          }
          if (grads[2]) {
            for (std::size_t j = 0; j < d; ++j) (*grads[2])[j] += gr[j];
          }
          if (grads[0]) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gj = gr[j] * gv[j];
              mean_g += gj;
              mean_gx += gj * xh[j];
            }
            mean_g /= static_cast<double>(d);
            mean_gx /= static_cast<double>(d);
            double* gx = &(*grads[0])[r * d];
            for (std::size_t j = 0; j < d; ++j) {
              gx[j] += rstd[r] * (gr[j] * gv[j] - mean_g - xh[j] * mean_gx);
            }
          }
        }
      });
}

Tensor rms_norm(const Tensor& x, const Tensor& gamma, double eps) {
  check_norm_shapes(x, gamma, "rms_norm");
  const std::size_t d = x.shape().back();
  const std::size_t rows = d == 0 ? 0 : x.size() / d;
  const Array& xv = x.value();
  Array xhat(x.shape());
  std::vector<double> rinv(rows);
  Array out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &xv[r * d];
    double ms = 0.0;
    for (std::size_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
    ms /= static_cast<double>(d);
    rinv[r] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = xr[j] * rinv[r];
      out[r * d + j] = xhat[r * d + j] * gamma.value()[j];
    }
  }
  Array gv = gamma.value();
  return Tensor::from_op(
      "rms_norm", std::move(out), {x, gamma},
      [d, rows, xhat = std::move(xhat), rinv = std::move(rinv), gv = std::move(gv)](
          const Array& g, std::span<Array* const> grads) {
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = &g[r * d];
          const double* xh = &xhat[r * d];
          if (grads[1]) {
            for (std::size_t j = 0; j < d; ++j) (*grads[1])[j] += gr[j] * xh[j];
          }
          if (grads[0]) {
            double mean_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) mean_gx += gr[j] * gv[j] * xh[j];
            mean_gx /= static_cast<double>(d);
            double* gx = &(*grads[0])[r * d];
            for (std::size_t j = 0; j < d; ++j) {
              gx[j] += rinv[r] * (gr[j] * gv[j] - xh[j] * mean_gx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::from_op("sum", Array(Shape{}, std::vector<double>{s}), {a},
                         [](const Array& g, std::span<Array* const> grads) {
                           for (double& v : grads[0]->data()) v += g[0];
                         });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.data()) s += v;
  return Tensor::from_op("mean", Array(Shape{}, std::vector<double>{s * inv}), {a},
                         [inv](const Array& g, std::span<Array* const> grads) {
                           for (double& v : grads[0]->data()) v += g[0] * inv;
                         });
}

// ---------------------------------------------------------------------------

namespace {

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 0;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.rank() || begin > end || end > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_string(a.shape()));
  }
  const AxisSplit s = split_axis(a.shape(), axis);
  const std::size_t len = end - begin;
  Shape out_shape = a.shape();
  out_shape[axis] = len;
  Array out(out_shape);
  const Array& av = a.value();
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = &av[(o * s.extent + begin) * s.inner];
    std::copy(src, src + len * s.inner, &out[o * len * s.inner]);
  }
  return Tensor::from_op("slice", std::move(out), {a},
                         [s, begin, len](const Array& g, std::span<Array* const> grads) {
                           Array& ga = *grads[0];
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             double* dst = &ga[(o * s.extent + begin) * s.inner];
                             const double* src = &g[o * len * s.inner];
                             for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                           }
                         });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ShapeError("concat: shape " + shape_string(s) + " incompatible with " +
                         shape_string(first));
      }
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_axis(out_shape, axis);
  Array out(out_shape);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Array& pv = parts[pi].value();
    const std::size_t len = extents[pi];
    for (std::size_t o = 0; o < os.outer; ++o) {
      const double* src = &pv[o * len * os.inner];
      std::copy(src, src + len * os.inner, &out[(o * os.extent + offset) * os.inner]);
    }
    offset += len;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::from_op("concat", std::move(out), std::move(inputs),
                         [os, extents](const Array& g, std::span<Array* const> grads) {
                           std::size_t offset = 0;
                           for (std::size_t pi = 0; pi < grads.size(); ++pi) {
                             const std::size_t len = extents[pi];
                             if (Array* gp = grads[pi]) {
                               for (std::size_t o = 0; o < os.outer; ++o) {
                                 const double* src = &g[(o * os.extent + offset) * os.inner];
                                 double* dst = &(*gp)[o * len * os.inner];
                                 for (std::size_t i = 0; i < len * os.inner; ++i) dst[i] += src[i];
                               }
                             }
                             offset += len;
                           }
                         });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

}  // namespace kmamba::ad
