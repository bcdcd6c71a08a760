#include "dferc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dferc {

namespace {

thread_local bool g_finite_checks = true;
thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_visit_epoch{1};

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

void check_finite(std::span<const double> v, const char* what) {
  if (!g_finite_checks) return;
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string("non-finite value in ") + what);
    }
  }
}

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad, const char* what) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  check_finite(data, what);
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(n->value.size(), 0.0);
  return n;
}

// Result node for an op. Graph edges are only recorded when grad mode is on
// and at least one input participates in differentiation.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(TensorNode&)> backprop, const char* what) {
  check_finite(value, what);
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) {
      if (t.node() && t.node()->requires_grad) {
        needs = true;
        break;
      }
    }
  }
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& t : inputs) n->parents.push_back(t.handle());
    n->backprop = std::move(backprop);
  }
  return Tensor(std::move(n));
}

void require_defined(const Tensor& t, const char* what) {
  if (!t.defined()) throw std::invalid_argument(std::string(what) + ": undefined tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

void require_1d(const Tensor& t, const char* what) {
  if (t.shape().size() != 1) {
    throw std::invalid_argument(std::string(what) + ": expected 1-D tensor, got " +
                                shape_str(t.shape()));
  }
}

// Adjoint buffer of a node, allocated on demand. Constant parents get a
// real buffer too: it is wasted work but keeps every scatter loop bound
// equal to the parent's true size, and graphs only live for one step.
std::vector<double>& adjoint_of(TensorNode& n) {
  if (n.adjoint.size() != n.value.size()) n.adjoint.assign(n.value.size(), 0.0);
  return n.adjoint;
}

}  // namespace

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks_enabled() { return g_finite_checks; }

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

// ---- Tensor basics ----

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor(make_leaf(Shape{1}, {v}, requires_grad, "scalar"));
}

Tensor Tensor::of(Shape shape, std::vector<double> data, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad, "tensor"));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad, "zeros"));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, v), requires_grad, "full"));
}

Tensor Tensor::uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw std::invalid_argument("uniform_init: fan_in must be positive");
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (auto& x : data) x = rng.uniform(-bound, bound);
  return Tensor(make_leaf(std::move(shape), std::move(data), true, "uniform_init"));
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::size() const {
  require_defined(*this, "size");
  return node_->value.size();
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw std::invalid_argument("dim: axis out of range");
  return s[axis];
}

bool Tensor::is_scalar() const { return defined() && node_->value.size() == 1; }

double Tensor::item() const {
  require_defined(*this, "item");
  if (node_->value.size() != 1) {
    throw std::invalid_argument("item: tensor has " + std::to_string(node_->value.size()) +
                                " elements");
  }
  return node_->value[0];
}

double Tensor::at(std::size_t i) const {
  require_defined(*this, "at");
  if (i >= node_->value.size()) throw std::invalid_argument("at: index out of range");
  return node_->value[i];
}

std::span<const double> Tensor::values() const {
  require_defined(*this, "values");
  return node_->value;
}

std::span<double> Tensor::mutable_values() {
  require_defined(*this, "mutable_values");
  return node_->value;
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "mutable_grad");
  if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  return node_->grad;
}

void Tensor::zero_grad() {
  require_defined(*this, "zero_grad");
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tensor::backward() const {
  require_defined(*this, "backward");
  if (node_->value.size() != 1) {
    throw std::invalid_argument("backward: root must be a scalar");
  }
  if (!node_->requires_grad) return;

  // Topological order via iterative DFS; recursion depth over LSTM chains
  // would otherwise be unbounded.
  std::uint64_t epoch = g_visit_epoch.fetch_add(1, std::memory_order_relaxed);
  std::vector<TensorNode*> order;
  struct Frame {
    TensorNode* n;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  node_->visit = epoch;
  stack.push_back({node_.get(), 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      TensorNode* p = f.n->parents[f.next_parent++].get();
      if (p->requires_grad && p->visit != epoch) {
        p->visit = epoch;
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  adjoint_of(*node_)[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    if (n->adjoint.empty()) continue;  // never reached by any adjoint flow
    if (n->backprop) n->backprop(*n);
  }
  for (TensorNode* n : order) {
    if (n->adjoint.empty()) continue;
    if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
    for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += n->adjoint[i];
    n->adjoint.clear();
    n->adjoint.shrink_to_fit();
  }
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  require_same_shape(a, b, "add");
  std::vector<double> v(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] + bv[i];
  return make_result(
      a.shape(), std::move(v), {a, b},
      [](TensorNode& self) {
        for (int p = 0; p < 2; ++p) {
          auto& adj = adjoint_of(*self.parents[p]);
          for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += self.adjoint[i];
        }
      },
      "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  require_same_shape(a, b, "sub");
  std::vector<double> v(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] - bv[i];
  return make_result(
      a.shape(), std::move(v), {a, b},
      [](TensorNode& self) {
        auto& aa = adjoint_of(*self.parents[0]);
        auto& ba = adjoint_of(*self.parents[1]);
        for (std::size_t i = 0; i < aa.size(); ++i) {
          aa[i] += self.adjoint[i];
          ba[i] -= self.adjoint[i];
        }
      },
      "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  require_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  return make_result(
      a.shape(), std::move(v), {a, b},
      [](TensorNode& self) {
        auto& aa = adjoint_of(*self.parents[0]);
        auto& ba = adjoint_of(*self.parents[1]);
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        for (std::size_t i = 0; i < aa.size(); ++i) {
          aa[i] += self.adjoint[i] * bv[i];
          ba[i] += self.adjoint[i] * av[i];
        }
      },
      "mul");
}

Tensor add_n(std::span<const Tensor> xs) {
  if (xs.empty()) throw std::invalid_argument("add_n: empty input list");
  for (const auto& x : xs) {
    require_defined(x, "add_n");
    require_same_shape(xs[0], x, "add_n");
  }
  std::vector<double> v(xs[0].size(), 0.0);
  for (const auto& x : xs) {
    auto xv = x.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += xv[i];
  }
  return make_result(
      xs[0].shape(), std::move(v), std::vector<Tensor>(xs.begin(), xs.end()),
      [](TensorNode& self) {
        for (auto& p : self.parents) {
          auto& adj = adjoint_of(*p);
          for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += self.adjoint[i];
        }
      },
      "add_n");
}

Tensor add_n(std::initializer_list<Tensor> xs) {
  return add_n(std::span<const Tensor>(xs.begin(), xs.size()));
}

Tensor affine_map(const Tensor& x, double k, double c) {
  require_defined(x, "affine_map");
  std::vector<double> v(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = k * xv[i] + c;
  return make_result(
      x.shape(), std::move(v), {x},
      [k](TensorNode& self) {
        auto& adj = adjoint_of(*self.parents[0]);
        for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += k * self.adjoint[i];
      },
      "affine_map");
}

Tensor smul(const Tensor& s, const Tensor& v) {
  require_defined(s, "smul");
  require_defined(v, "smul");
  if (!s.is_scalar()) throw std::invalid_argument("smul: first argument must be a scalar");
  double sv = s.item();
  std::vector<double> out(v.size());
  auto vv = v.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * vv[i];
  return make_result(
      v.shape(), std::move(out), {s, v},
      [](TensorNode& self) {
        auto& sa = adjoint_of(*self.parents[0]);
        auto& va = adjoint_of(*self.parents[1]);
        double sv = self.parents[0]->value[0];
        const auto& vv = self.parents[1]->value;
        double acc = 0.0;
        for (std::size_t i = 0; i < va.size(); ++i) {
          va[i] += self.adjoint[i] * sv;
          acc += self.adjoint[i] * vv[i];
        }
        sa[0] += acc;
      },
      "smul");
}

Tensor tanh(const Tensor& x) {
  require_defined(x, "tanh");
  std::vector<double> v(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(xv[i]);
  return make_result(
      x.shape(), std::move(v), {x},
      [](TensorNode& self) {
        auto& adj = adjoint_of(*self.parents[0]);
        for (std::size_t i = 0; i < adj.size(); ++i) {
          adj[i] += self.adjoint[i] * (1.0 - self.value[i] * self.value[i]);
        }
      },
      "tanh");
}

Tensor sigmoid(const Tensor& x) {
  require_defined(x, "sigmoid");
  std::vector<double> v(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    double z = xv[i];
    v[i] = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return make_result(
      x.shape(), std::move(v), {x},
      [](TensorNode& self) {
        auto& adj = adjoint_of(*self.parents[0]);
        for (std::size_t i = 0; i < adj.size(); ++i) {
          adj[i] += self.adjoint[i] * self.value[i] * (1.0 - self.value[i]);
        }
      },
      "sigmoid");
}

Tensor relu(const Tensor& x) {
  require_defined(x, "relu");
  std::vector<double> v(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = xv[i] > 0 ? xv[i] : 0.0;
  return make_result(
      x.shape(), std::move(v), {x},
      [](TensorNode& self) {
        auto& adj = adjoint_of(*self.parents[0]);
        const auto& xv = self.parents[0]->value;
        for (std::size_t i = 0; i < adj.size(); ++i) {
          if (xv[i] > 0) adj[i] += self.adjoint[i];
        }
      },
      "relu");
}

Tensor log_clamped(const Tensor& x, double eps) {
  require_defined(x, "log_clamped");
  std::vector<double> v(x.size());
  auto xv = x.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(std::max(xv[i], eps));
  return make_result(
      x.shape(), std::move(v), {x},
      [eps](TensorNode& self) {
        auto& adj = adjoint_of(*self.parents[0]);
        const auto& xv = self.parents[0]->value;
        for (std::size_t i = 0; i < adj.size(); ++i) {
          if (xv[i] > eps) adj[i] += self.adjoint[i] / xv[i];
        }
      },
      "log_clamped");
}

// ---- reductions / indexing ----

Tensor sum(const Tensor& x) {
  require_defined(x, "sum");
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result(
      Shape{1}, {s}, {x},
      [](TensorNode& self) {
        auto& adj = adjoint_of(*self.parents[0]);
        for (auto& a : adj) a += self.adjoint[0];
      },
      "sum");
}

Tensor mean(const Tensor& x) {
  require_defined(x, "mean");
  if (x.size() == 0) throw std::invalid_argument("mean: empty tensor");
  double s = 0.0;
  for (double v : x.values()) s += v;
  double inv = 1.0 / static_cast<double>(x.size());
  return make_result(
      Shape{1}, {s * inv}, {x},
      [inv](TensorNode& self) {
        auto& adj = adjoint_of(*self.parents[0]);
        for (auto& a : adj) a += self.adjoint[0] * inv;
      },
      "mean");
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_defined(a, "dot");
  require_defined(b, "dot");
  require_1d(a, "dot");
  require_same_shape(a, b, "dot");
  double s = 0.0;
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  return make_result(
      Shape{1}, {s}, {a, b},
      [](TensorNode& self) {
        auto& aa = adjoint_of(*self.parents[0]);
        auto& ba = adjoint_of(*self.parents[1]);
        const auto& av = self.parents[0]->value;
        const auto& bv = self.parents[1]->value;
        double g = self.adjoint[0];
        for (std::size_t i = 0; i < aa.size(); ++i) {
          aa[i] += g * bv[i];
          ba[i] += g * av[i];
        }
      },
      "dot");
}

Tensor pick(const Tensor& x, std::size_t index) {
  require_defined(x, "pick");
  require_1d(x, "pick");
  if (index >= x.size()) {
    throw std::invalid_argument("pick: index " + std::to_string(index) + " out of range for " +
                                shape_str(x.shape()));
  }
  return make_result(
      Shape{1}, {x.at(index)}, {x},
      [index](TensorNode& self) { adjoint_of(*self.parents[0])[index] += self.adjoint[0]; },
      "pick");
}

Tensor slice(const Tensor& x, std::size_t start, std::size_t len) {
  require_defined(x, "slice");
  require_1d(x, "slice");
  if (start + len > x.size()) throw std::invalid_argument("slice: range out of bounds");
  auto xv = x.values();
  std::vector<double> v(xv.begin() + start, xv.begin() + start + len);
  return make_result(
      Shape{len}, std::move(v), {x},
      [start](TensorNode& self) {
        auto& adj = adjoint_of(*self.parents[0]);
        for (std::size_t i = 0; i < self.adjoint.size(); ++i) adj[start + i] += self.adjoint[i];
      },
      "slice");
}

Tensor concat(std::span<const Tensor> xs) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  std::vector<double> v;
  for (const auto& x : xs) {
    require_defined(x, "concat");
    require_1d(x, "concat");
    auto xv = x.values();
    v.insert(v.end(), xv.begin(), xv.end());
  }
  return make_result(
      Shape{v.size()}, std::move(v), std::vector<Tensor>(xs.begin(), xs.end()),
      [](TensorNode& self) {
        std::size_t off = 0;
        for (auto& p : self.parents) {
          auto& adj = adjoint_of(*p);
          for (std::size_t i = 0; i < adj.size(); ++i) adj[i] += self.adjoint[off + i];
          off += adj.size();
        }
      },
      "concat");
}

Tensor concat(std::initializer_list<Tensor> xs) {
  return concat(std::span<const Tensor>(xs.begin(), xs.size()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean(mul(d, d));
}

// ---- linear algebra ----

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_defined(x, "affine");
  require_defined(w, "affine");
  require_defined(b, "affine");
  require_1d(x, "affine");
  if (w.shape().size() != 2) throw std::invalid_argument("affine: weight must be 2-D");
  std::size_t in = w.dim(0), out = w.dim(1);
  if (x.size() != in || b.size() != out || b.shape().size() != 1) {
    throw std::invalid_argument("affine: dimension mismatch x" + shape_str(x.shape()) + " W" +
                                shape_str(w.shape()) + " b" + shape_str(b.shape()));
  }
  std::vector<double> y(b.values().begin(), b.values().end());
  auto xv = x.values(), wv = w.values();
  for (std::size_t i = 0; i < in; ++i) {
    double xi = xv[i];
    const double* wrow = wv.data() + i * out;
    for (std::size_t j = 0; j < out; ++j) y[j] += xi * wrow[j];
  }
  return make_result(
      Shape{out}, std::move(y), {x, w, b},
      [in, out](TensorNode& self) {
        auto& xa = adjoint_of(*self.parents[0]);
        auto& wa = adjoint_of(*self.parents[1]);
        auto& ba = adjoint_of(*self.parents[2]);
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        const auto& g = self.adjoint;
        for (std::size_t j = 0; j < out; ++j) ba[j] += g[j];
        for (std::size_t i = 0; i < in; ++i) {
          const double* wrow = wv.data() + i * out;
          double* warow = wa.data() + i * out;
          double xi = xv[i];
          double acc = 0.0;
          for (std::size_t j = 0; j < out; ++j) {
            acc += wrow[j] * g[j];
            warow[j] += xi * g[j];
          }
          xa[i] += acc;
        }
      },
      "affine");
}

Tensor linear(const Tensor& x, const Tensor& w) {
  require_defined(x, "linear");
  require_defined(w, "linear");
  require_1d(x, "linear");
  if (w.shape().size() != 2) throw std::invalid_argument("linear: weight must be 2-D");
  std::size_t in = w.dim(0), out = w.dim(1);
  if (x.size() != in) {
    throw std::invalid_argument("linear: dimension mismatch x" + shape_str(x.shape()) + " W" +
                                shape_str(w.shape()));
  }
  std::vector<double> y(out, 0.0);
  auto xv = x.values(), wv = w.values();
  for (std::size_t i = 0; i < in; ++i) {
    double xi = xv[i];
    const double* wrow = wv.data() + i * out;
    for (std::size_t j = 0; j < out; ++j) y[j] += xi * wrow[j];
  }
  return make_result(
      Shape{out}, std::move(y), {x, w},
      [in, out](TensorNode& self) {
        auto& xa = adjoint_of(*self.parents[0]);
        auto& wa = adjoint_of(*self.parents[1]);
        const auto& xv = self.parents[0]->value;
        const auto& wv = self.parents[1]->value;
        const auto& g = self.adjoint;
        for (std::size_t i = 0; i < in; ++i) {
          const double* wrow = wv.data() + i * out;
          double* warow = wa.data() + i * out;
          double xi = xv[i];
          double acc = 0.0;
          for (std::size_t j = 0; j < out; ++j) {
            acc += wrow[j] * g[j];
            warow[j] += xi * g[j];
          }
          xa[i] += acc;
        }
      },
      "linear");
}

// ---- softmax family ----

Tensor softmax(const Tensor& x) {
  require_defined(x, "softmax");
  const Shape& s = x.shape();
  if (s.empty()) throw std::invalid_argument("softmax: scalar input");
  std::size_t c = s.back();
  if (c == 0) throw std::invalid_argument("softmax: empty trailing axis");
  std::size_t rows = x.size() / c;
  std::vector<double> v(x.size());
  auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * c;
    double* o = v.data() + r * c;
    double m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(row[j] - m);
      z += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= z;
  }
  return make_result(
      s, std::move(v), {x},
      [c](TensorNode& self) {
        auto& adj = adjoint_of(*self.parents[0]);
        std::size_t rows = self.value.size() / c;
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = self.value.data() + r * c;
          const double* g = self.adjoint.data() + r * c;
          double* a = adj.data() + r * c;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += y[j] * g[j];
          for (std::size_t j = 0; j < c; ++j) a[j] += y[j] * (g[j] - dot);
        }
      },
      "softmax");
}

Tensor logsumexp(std::span<const Tensor> xs) {
  if (xs.empty()) throw std::invalid_argument("logsumexp: empty input list");
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& x : xs) {
    require_defined(x, "logsumexp");
    if (!x.is_scalar()) throw std::invalid_argument("logsumexp: inputs must be scalars");
    m = std::max(m, x.item());
  }
  double z = 0.0;
  std::vector<double> w(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    w[i] = std::exp(xs[i].item() - m);
    z += w[i];
  }
  for (auto& wi : w) wi /= z;
  double value = m + std::log(z);
  return make_result(
      Shape{1}, {value}, std::vector<Tensor>(xs.begin(), xs.end()),
      [w = std::move(w)](TensorNode& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i) {
          adjoint_of(*self.parents[i])[0] += self.adjoint[0] * w[i];
        }
      },
      "logsumexp");
}

// ---- geometry ----

Tensor cosine_sim(const Tensor& a, const Tensor& b, double eps) {
  require_defined(a, "cosine_sim");
  require_defined(b, "cosine_sim");
  require_1d(a, "cosine_sim");
  require_same_shape(a, b, "cosine_sim");
  auto av = a.values(), bv = b.values();
  double daa = 0.0, dbb = 0.0, dab = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    daa += av[i] * av[i];
    dbb += bv[i] * bv[i];
    dab += av[i] * bv[i];
  }
  double na = std::sqrt(daa), nb = std::sqrt(dbb);
  if (na < eps || nb < eps) {
    // Degenerate operand: defined as 0 with zero gradient.
    return Tensor::scalar(0.0);
  }
  double c = dab / (na * nb);
  std::vector<double> ga(av.size()), gb(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    ga[i] = bv[i] / (na * nb) - c * av[i] / daa;
    gb[i] = av[i] / (na * nb) - c * bv[i] / dbb;
  }
  return make_result(
      Shape{1}, {c}, {a, b},
      [ga = std::move(ga), gb = std::move(gb)](TensorNode& self) {
        auto& aa = adjoint_of(*self.parents[0]);
        auto& ba = adjoint_of(*self.parents[1]);
        double g = self.adjoint[0];
        for (std::size_t i = 0; i < aa.size(); ++i) {
          aa[i] += g * ga[i];
          ba[i] += g * gb[i];
        }
      },
      "cosine_sim");
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty input list");
  std::size_t d = rows[0].size();
  std::vector<double> v;
  v.reserve(rows.size() * d);
  for (const auto& r : rows) {
    require_defined(r, "stack_rows");
    require_1d(r, "stack_rows");
    if (r.size() != d) throw std::invalid_argument("stack_rows: rows differ in length");
    auto rv = r.values();
    v.insert(v.end(), rv.begin(), rv.end());
  }
  return make_result(
      Shape{rows.size(), d}, std::move(v), std::vector<Tensor>(rows.begin(), rows.end()),
      [d](TensorNode& self) {
        for (std::size_t r = 0; r < self.parents.size(); ++r) {
          auto& adj = adjoint_of(*self.parents[r]);
          const double* g = self.adjoint.data() + r * d;
          for (std::size_t i = 0; i < d; ++i) adj[i] += g[i];
        }
      },
      "stack_rows");
}

Tensor normalize_rows(const Tensor& x, double eps) {
  require_defined(x, "normalize_rows");
  if (x.shape().size() != 2) throw std::invalid_argument("normalize_rows: expected 2-D tensor");
  std::size_t m = x.dim(0), d = x.dim(1);
  std::vector<double> v(x.size());
  std::vector<double> norms(m);
  auto xv = x.values();
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * d;
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += row[i] * row[i];
    double n = std::sqrt(s);
    norms[r] = n;
    double* o = v.data() + r * d;
    if (n < eps) {
      std::fill(o, o + d, 0.0);
    } else {
      for (std::size_t i = 0; i < d; ++i) o[i] = row[i] / n;
    }
  }
  return make_result(
      Shape{m, d}, std::move(v), {x},
      [d, eps, norms = std::move(norms)](TensorNode& self) {
        auto& adj = adjoint_of(*self.parents[0]);
        std::size_t m = norms.size();
        for (std::size_t r = 0; r < m; ++r) {
          if (norms[r] < eps) continue;
          const double* y = self.value.data() + r * d;
          const double* g = self.adjoint.data() + r * d;
          double* a = adj.data() + r * d;
          double yg = 0.0;
          for (std::size_t i = 0; i < d; ++i) yg += y[i] * g[i];
          for (std::size_t i = 0; i < d; ++i) a[i] += (g[i] - yg * y[i]) / norms[r];
        }
      },
      "normalize_rows");
}

Tensor gram(const Tensor& x) {
  require_defined(x, "gram");
  if (x.shape().size() != 2) throw std::invalid_argument("gram: expected 2-D tensor");
  std::size_t m = x.dim(0), d = x.dim(1);
  std::vector<double> v(m * m);
  auto xv = x.values();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ri = xv.data() + i * d;
    for (std::size_t j = i; j < m; ++j) {
      const double* rj = xv.data() + j * d;
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += ri[k] * rj[k];
      v[i * m + j] = s;
      v[j * m + i] = s;
    }
  }
  return make_result(
      Shape{m, m}, std::move(v), {x},
      [m, d](TensorNode& self) {
        // dX = (G + G^T) X
        auto& adj = adjoint_of(*self.parents[0]);
        const auto& xv = self.parents[0]->value;
        const auto& g = self.adjoint;
        for (std::size_t i = 0; i < m; ++i) {
          double* ai = adj.data() + i * d;
          for (std::size_t j = 0; j < m; ++j) {
            double c = g[i * m + j] + g[j * m + i];
            if (c == 0.0) continue;
            const double* rj = xv.data() + j * d;
            for (std::size_t k = 0; k < d; ++k) ai[k] += c * rj[k];
          }
        }
      },
      "gram");
}

// ---- graph utilities ----

Tensor detach(const Tensor& x) {
  require_defined(x, "detach");
  auto xv = x.values();
  return Tensor::of(x.shape(), std::vector<double>(xv.begin(), xv.end()), false);
}

namespace detail {

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
               std::function<void(TensorNode&)> backprop, const char* what) {
  return make_result(std::move(shape), std::move(value), std::move(inputs), std::move(backprop),
                     what);
}

std::vector<double>& scatter_adjoint(TensorNode& parent) { return adjoint_of(parent); }

}  // namespace detail

}  // namespace dferc
