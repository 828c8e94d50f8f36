#pragma once

// Central finite-difference gradient checker for double-precision graphs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "wr/tensor.hpp"

namespace wr::ag {

struct GradCheckOptions {
  double step = 1e-5;
  double abs_floor = 1e-6;         // denominators below this are clamped
  std::size_t max_probes = 0;      // per input; 0 checks every element
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "input k[index]"
  std::size_t probes = 0;
};

/// Compares backward() against central differences of <R, f(inputs)> for a random
/// projection R. `f` must rebuild the graph from the current input values.
inline GradCheckResult check_gradients(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                                       const GradCheckOptions& opt = {}) {
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> nd(0.0, 1.0);

  for (auto& in : inputs) in.zero_grad();
  const auto out = f();
  std::vector<double> proj(out.numel());
  for (auto& r : proj) r = nd(rng);
  backward(out, std::span<const double>(proj));

  auto objective = [&] {
    NoGradGuard ng;
    const auto y = f();
    double s = 0.0;
    for (std::size_t i = 0; i < proj.size(); ++i) s += proj[i] * y.values()[i];
    return s;
  };

  GradCheckResult res;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& x = inputs[k];
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    std::vector<std::size_t> idx(x.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (opt.max_probes && idx.size() > opt.max_probes) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_probes);
    }
    auto vals = x.mutable_values();
    for (std::size_t i : idx) {
      const double orig = vals[i];
      vals[i] = orig + opt.step;
      const double up = objective();
      vals[i] = orig - opt.step;
      const double down = objective();
      vals[i] = orig;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), opt.abs_floor});
      const double rel = std::abs(numeric - analytic[i]) / denom;
      ++res.probes;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = "input " + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

/// Random leaf tensor with standard-normal entries scaled by `scale`.
inline Tensor<double> random_leaf(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor<double>::from(std::move(shape), std::move(v), true);
}

}  // namespace wr::ag
