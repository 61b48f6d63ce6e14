#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "near/error.hpp"

namespace near {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments for a fixed list of tensors plus the step counter.
template <class T>
struct AdamState {
  AdamConfig cfg;
  std::vector<std::vector<T>> m, v;
  std::int64_t t = 0;

  AdamState() = default;
  explicit AdamState(const std::vector<std::size_t>& sizes, AdamConfig c = {}) : cfg(c) {
    for (auto n : sizes) {
      m.emplace_back(n, T(0));
      v.emplace_back(n, T(0));
    }
  }
};

/// One bias-corrected Adam update of every tensor; increments t.
template <class T>
void adam_step(AdamState<T>& s, std::span<const std::span<T>> params, std::span<const std::span<const T>> grads,
               double lr) {
  if (params.size() != s.m.size() || grads.size() != s.m.size())
    throw ShapeMismatch("adam_step: tensor count differs from optimizer state");
  ++s.t;
  const double b1 = s.cfg.beta1, b2 = s.cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k];
    auto g = grads[k];
    auto& m = s.m[k];
    auto& v = s.v[k];
    if (p.size() != m.size() || g.size() != m.size()) throw ShapeMismatch("adam_step: tensor size mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + s.cfg.eps));
    }
  }
}

}  // namespace near
