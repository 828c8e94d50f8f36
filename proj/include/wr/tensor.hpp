#pragma once

// Minimal reverse-mode differentiation core. A Tensor is a shared handle to a
// graph node; ops record a backward closure when any input requires a gradient.
// The tape lives exactly as long as the tensors referencing it, which in practice
// is one training step.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "wr/error.hpp"

namespace wr::ag {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// RAII scope that disables graph recording on this thread.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value.assign(ag::numel(shape), T(0));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (values.size() != ag::numel(shape))
      throw ArgumentError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw ArgumentError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  /// Same values, cut from the graph.
  Tensor detach() const { return from(shape(), node_->value, false); }

  /// Deep copy, optionally as a fresh leaf that requires grad.
  Tensor clone(bool requires_grad) const { return from(shape(), node_->value, requires_grad); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Throws NumericError if any value is NaN or infinite.
template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (T v : t.values())
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
}

/// Create the output node for an op. Records parents and the backward closure
/// only when recording is enabled and some input requires a gradient.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::initializer_list<const Tensor<T>*> inputs,
                      std::function<void(Node<T>&)> backward, const char* op) {
  auto out = Tensor<T>::from(std::move(shape), std::move(values), false);
  check_finite(out, op);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto* in : inputs) any = any || (in && in->defined() && in->requires_grad());
  if (!any) return out;
  auto& n = *out.node();
  n.requires_grad = true;
  for (const auto* in : inputs)
    if (in && in->defined()) n.parents.push_back(in->node());
  n.backward_fn = std::move(backward);
  return out;
}

/// Reverse sweep from `root`, seeding d(root)/d(root) = 1 (root must be scalar)
/// or the given seed gradient.
template <class T>
void backward(const Tensor<T>& root, std::span<const T> seed = {}) {
  if (!root.requires_grad()) return;
  if (seed.empty() && root.numel() != 1) throw ArgumentError("backward: non-scalar root needs a seed gradient");
  // Iterative DFS topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  auto& r = *root.node();
  r.ensure_grad();
  if (seed.empty()) {
    r.grad[0] += T(1);
  } else {
    if (seed.size() != r.value.size()) throw ArgumentError("backward: seed shape mismatch");
    for (std::size_t i = 0; i < seed.size(); ++i) r.grad[i] += seed[i];
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
  }
}

// --- elementwise / reshaping ops --------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ArgumentError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] + b.values()[i];
  auto pa = a.node(), pb = b.node();
  return make_result<T>(a.shape(), std::move(v), {&a, &b}, [pa, pb](Node<T>& self) {
    for (auto* p : {pa.get(), pb.get()})
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      }
  }, "add");
}

/// s * a + c elementwise.
template <class T>
Tensor<T> affine(const Tensor<T>& a, T s, T c = T(0)) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = s * a.values()[i] + c;
  auto pa = a.node();
  return make_result<T>(a.shape(), std::move(v), {&a}, [pa, s](Node<T>& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += s * self.grad[i];
  }, "affine");
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * a.values()[i];
  auto pa = a.node();
  return make_result<T>(a.shape(), std::move(v), {&a}, [pa](Node<T>& self) {
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += T(2) * pa->value[i] * self.grad[i];
  }, "square");
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  const T n = static_cast<T>(a.numel());
  T s = 0;
  for (T v : a.values()) s += v;
  auto pa = a.node();
  return make_result<T>({1}, {s / n}, {&a}, [pa, n](Node<T>& self) {
    pa->ensure_grad();
    const T g = self.grad[0] / n;
    for (auto& v : pa->grad) v += g;
  }, "mean");
}

/// Mean absolute difference between a and b (L1 / numel).
template <class T>
Tensor<T> mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ArgumentError("mean_abs_diff: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const T n = static_cast<T>(a.numel());
  T s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a.values()[i] - b.values()[i]);
  auto pa = a.node(), pb = b.node();
  return make_result<T>({1}, {s / n}, {&a, &b}, [pa, pb, n](Node<T>& self) {
    const T g = self.grad[0] / n;
    for (std::size_t i = 0; i < pa->value.size(); ++i) {
      const T d = pa->value[i] - pb->value[i];
      const T sg = d > 0 ? g : (d < 0 ? -g : T(0));
      if (pa->requires_grad) {
        pa->ensure_grad();
        pa->grad[i] += sg;
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        pb->grad[i] -= sg;
      }
    }
  }, "mean_abs_diff");
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (ag::numel(shape) != a.numel()) throw ArgumentError("reshape: element count mismatch");
  auto pa = a.node();
  return make_result<T>(std::move(shape), std::vector<T>(a.values().begin(), a.values().end()), {&a},
                        [pa](Node<T>& self) {
                          pa->ensure_grad();
                          for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
                        },
                        "reshape");
}

}  // namespace wr::ag
