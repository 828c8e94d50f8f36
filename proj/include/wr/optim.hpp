#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wr/tensor.hpp"

namespace wr::ag {

/// Named leaf tensors in a fixed order (the order parameters were created).
template <class T>
class ParamSet {
 public:
  Tensor<T>& add(std::string name, Tensor<T> t) {
    for (const auto& [n, _] : items_)
      if (n == name) throw ArgumentError("duplicate parameter name " + name);
    items_.emplace_back(std::move(name), std::move(t));
    return items_.back().second;
  }

  const Tensor<T>& at(const std::string& name) const {
    for (const auto& [n, t] : items_)
      if (n == name) return t;
    throw ArgumentError("no parameter named " + name);
  }
  Tensor<T>& at(const std::string& name) { return const_cast<Tensor<T>&>(std::as_const(*this).at(name)); }
  bool contains(const std::string& name) const {
    for (const auto& [n, _] : items_)
      if (n == name) return true;
    return false;
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  std::size_t size() const noexcept { return items_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

  /// Independent copy with fresh gradient state.
  ParamSet clone() const {
    ParamSet out;
    for (const auto& [n, t] : items_) out.add(n, t.clone(t.requires_grad()));
    return out;
  }

  bool values_equal(const ParamSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < items_.size(); ++i) {
      const auto& [na, a] = items_[i];
      const auto& [nb, b] = other.items_[i];
      if (na != nb || a.shape() != b.shape()) return false;
      if (!std::equal(a.values().begin(), a.values().end(), b.values().begin())) return false;
    }
    return true;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
};

struct RmspropOptions {
  double learning_rate = 0.0002;
  double decay = 0.9;  // rho
  double epsilon = 1e-8;
};

template <class T>
struct RmspropState {
  RmspropOptions options;
  std::map<std::string, std::vector<T>> mean_square;  // per-parameter accumulator v
};

/// v <- rho*v + (1-rho)*g^2;  p <- p - lr*g/(sqrt(v)+eps). Consumes and clears gradients.
template <class T>
void rmsprop_step(ParamSet<T>& params, RmspropState<T>& state) {
  const auto& o = state.options;
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    auto& v = state.mean_square[name];
    if (v.empty()) v.assign(p.numel(), T(0));
    if (v.size() != p.numel()) throw ArgumentError("rmsprop: accumulator shape mismatch for " + name);
    if (!p.has_grad()) {
      // Zero gradient: the accumulator decays, the parameter stays put.
      for (auto& a : v) a = static_cast<T>(o.decay) * a;
      continue;
    }
    const auto g = p.grad();
    for (T gi : g)
      if (!std::isfinite(gi)) throw NumericError("non-finite gradient for parameter " + name);
    auto vals = p.mutable_values();
    const T rho = static_cast<T>(o.decay), lr = static_cast<T>(o.learning_rate), eps = static_cast<T>(o.epsilon);
    for (std::size_t i = 0; i < vals.size(); ++i) {
      v[i] = rho * v[i] + (T(1) - rho) * g[i] * g[i];
      vals[i] -= lr * g[i] / (std::sqrt(v[i]) + eps);
    }
    p.zero_grad();
  }
}

}  // namespace wr::ag
