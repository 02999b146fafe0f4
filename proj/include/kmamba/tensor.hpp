#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "kmamba/array.hpp"

// Reverse-mode differentiation over the small operation set the sequence
// model needs. A Tensor is an immutable handle to a graph node; the graph is
// recorded implicitly whenever an input requires a gradient.

namespace kmamba::ad {

// Receives the gradient of the op output and accumulates into the gradients
// of its inputs. Entries of input_grads are null for inputs that do not
// require a gradient.
using BackwardFn = std::function<void(const Array& grad_out, std::span<Array* const> input_grads)>;

struct Node {
  Array value;
  Array grad;
  bool requires_grad = false;
  std::string_view op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Array value);
  static Tensor parameter(Array value);
  static Tensor scalar(double v) { return constant(Array(Shape{}, std::vector<double>{v})); }

  bool defined() const { return node_ != nullptr; }
  const Array& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t rank() const { return node_->value.rank(); }
  std::size_t size() const { return node_->value.size(); }
  std::span<const double> data() const { return node_->value.data(); }
  bool requires_grad() const { return node_->requires_grad; }
  std::string_view op() const { return node_->op; }
  double item() const;

  const std::shared_ptr<Node>& node() const { return node_; }

  // Creates the output of a custom op. The backward function is kept only
  // when at least one input requires a gradient. Throws NumericalError when
  // the value is not finite.
  static Tensor from_op(std::string_view op, Array value, std::vector<Tensor> inputs,
                        BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Ordered record of the differentiable part of the graph reachable from an
// output: inputs precede the ops that consume them, every node appears once.
class Tape {
 public:
  static Tape record(const Tensor& output);
  std::span<Node* const> nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }
  bool contains(const Node* node) const;

 private:
  std::vector<Node*> order_;
};

// Gradients of a scalar output with respect to each tensor in wrt.
std::vector<Array> backward_grad(const Tensor& output, std::span<const Tensor> wrt);
std::vector<Array> backward_grad(const Tensor& output, std::initializer_list<Tensor> wrt);

// Binary ops accept equal shapes or a right/left operand whose shape is a
// suffix of the other (broadcast over leading axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// a: [..., k], b: [k, n] -> [..., n]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);

// x: [B, T, C], weight: [K, C], bias: [C]. Left zero padding keeps T.
Tensor causal_conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Normalize over the last axis.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor rms_norm(const Tensor& x, const Tensor& gamma, double eps = 1e-5);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);

// Scalar helpers shared with the fused scan op.
double softplus_value(double x);
double sigmoid_value(double x);

}  // namespace kmamba::ad
