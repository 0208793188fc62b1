#pragma once

#include <cmath>
#include <stdexcept>

#include "eraw/autograd.hpp"

namespace eraw {

/// Triangular cyclic learning rate: rises linearly from `low` to `high` over
/// `step_size` steps, falls back over the next `step_size`, and repeats.
struct CyclicLr {
  double low = 2e-6, high = 1e-5;
  int step_size = 2000;

  void validate() const {
    if (!(low > 0) || !(low < high)) throw std::invalid_argument("lr bounds must satisfy 0 < low < high");
    if (step_size < 1) throw std::invalid_argument("lr step_size must be >= 1");
  }

  double operator()(long it) const {
    const double cycle = std::floor(1.0 + double(it) / (2.0 * step_size));
    const double x = std::abs(double(it) / step_size - 2.0 * cycle + 1.0);
    return low + (high - low) * std::max(0.0, 1.0 - x);
  }
};

/// Adam with decoupled weight decay.
template <class T>
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
  long steps = 0;
  std::unordered_map<const Parameter<T>*, std::pair<Tensor<T>, Tensor<T>>> moments;

  void step(const ParamRefs<T>& params, const GradMap<T>& grads, double lr) {
    ++steps;
    const double c1 = 1.0 - std::pow(beta1, double(steps)), c2 = 1.0 - std::pow(beta2, double(steps));
    for (auto* p : params) {
      auto it = grads.find(p);
      auto& [m, v] = moments[p];
      if (m.size() != p->value.size()) {
        m = Tensor<T>(p->value.shape());
        v = Tensor<T>(p->value.shape());
      }
      for (std::int64_t i = 0; i < p->value.size(); ++i) {
        const double g = it == grads.end() ? 0.0 : double(it->second[i]);
        const double mi = beta1 * double(m[i]) + (1.0 - beta1) * g;
        const double vi = beta2 * double(v[i]) + (1.0 - beta2) * g * g;
        m[i] = T(mi);
        v[i] = T(vi);
        double w = double(p->value[i]);
        w -= lr * weight_decay * w;
        w -= lr * (mi / c1) / (std::sqrt(vi / c2) + eps);
        p->value[i] = T(w);
      }
    }
  }
};

/// Adds `g` into `acc` entry by entry (scaled), creating missing entries.
template <class T>
void accumulate(GradMap<T>& acc, const GradMap<T>& g, T scale = T(1)) {
  for (const auto& [p, t] : g) {
    auto it = acc.find(p);
    if (it == acc.end()) it = acc.emplace(p, Tensor<T>(t.shape())).first;
    for (std::int64_t i = 0; i < t.size(); ++i) it->second[i] += scale * t[i];
  }
}

}  // namespace eraw
