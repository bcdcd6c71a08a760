#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dferc/rng.hpp"

namespace dferc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// When enabled (the default), every tensor creation verifies that all stored
// values are finite and throws std::runtime_error otherwise.
void set_finite_checks(bool on);
bool finite_checks_enabled();

// While a NoGradGuard is alive, ops produce plain value tensors with no
// graph edges. Used for evaluation and for the finite-difference side of
// gradient checking.
bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;     // persistent accumulator, present iff requires_grad
  std::vector<double> adjoint;  // scratch owned by one backward pass
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Scatters this node's adjoint into the parents' adjoints.
  std::function<void(TensorNode&)> backprop;
  bool requires_grad = false;
  std::uint64_t visit = 0;
};
}  // namespace detail

// Dense 64-bit float tensor in row-major order, participating in a
// define-by-run reverse-mode differentiation graph. The graph is rebuilt on
// every forward pass; a Tensor is a cheap shared handle to one node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor of(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  // Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  static Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t dim(std::size_t axis) const;
  bool is_scalar() const;

  double item() const;  // value of a 1-element tensor
  double at(std::size_t flat_index) const;
  std::span<const double> values() const;
  // Raw write access for optimizers and finite-difference probes. Mutating a
  // tensor that is part of a live graph invalidates that graph.
  std::span<double> mutable_values();

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse-mode sweep from a scalar. Adjoint scratch is fresh per call and
  // accumulated into each participating node's persistent grad at the end,
  // so two sweeps from the same scalar double every grad buffer.
  void backward() const;

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& handle() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// ---- elementwise / arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_n(std::span<const Tensor> xs);
Tensor add_n(std::initializer_list<Tensor> xs);
// y = k*x + c elementwise with double constants.
Tensor affine_map(const Tensor& x, double k, double c);
inline Tensor scale(const Tensor& x, double k) { return affine_map(x, k, 0.0); }
Tensor smul(const Tensor& s, const Tensor& v);  // scalar tensor times tensor

Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
// log(max(x, eps)); gradient is 1/x where x > eps and 0 in the clamped region.
Tensor log_clamped(const Tensor& x, double eps = 1e-12);

// ---- reductions / indexing ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor pick(const Tensor& x, std::size_t index);
Tensor slice(const Tensor& x, std::size_t start, std::size_t len);
Tensor concat(std::span<const Tensor> xs);
Tensor concat(std::initializer_list<Tensor> xs);
// Mean squared difference over all coordinates.
Tensor mse(const Tensor& a, const Tensor& b);

// ---- linear algebra ----
// y = x W + b with x:[in], W:[in,out], b:[out].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w);

// ---- softmax-family ----
// Softmax over the trailing axis, computed with max subtraction.
Tensor softmax(const Tensor& x);
// Log of the sum of exponentials of a list of scalars (stable).
Tensor logsumexp(std::span<const Tensor> xs);

// ---- geometry ----
// Cosine similarity of two equal-length 1-D tensors. If either norm is
// below eps the result is the constant 0 with zero gradient.
Tensor cosine_sim(const Tensor& a, const Tensor& b, double eps = 1e-12);
// Rows of 1-D tensors stacked into a [k, d] matrix.
Tensor stack_rows(std::span<const Tensor> rows);
// Each row scaled to unit L2 norm; rows with norm below eps become zero
// rows with zero gradient.
Tensor normalize_rows(const Tensor& x, double eps = 1e-12);
// X X^T for X:[m, d].
Tensor gram(const Tensor& x);

// ---- graph utilities ----
Tensor detach(const Tensor& x);

namespace detail {
// Library-internal hook for fused ops defined outside tensor.cpp. The
// backprop callable scatters node.adjoint into the parents' adjoints via
// scatter_adjoint. Edges are recorded only when grad mode is on and some
// input requires grad.
Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backprop, const char* what);
// Adjoint buffer of a parent node (a discard sink if it has no grad).
std::vector<double>& scatter_adjoint(TensorNode& parent);
}  // namespace detail

}  // namespace dferc
