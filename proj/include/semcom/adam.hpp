#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "semcom/params.hpp"

namespace semcom {

struct NonFiniteGradientError : std::runtime_error {
  explicit NonFiniteGradientError(const std::string& what) : std::runtime_error(what) {}
};

// Adam with bias correction. Moments are kept per trainable parameter,
// aligned with the ParamStore order.
struct AdamState {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  long long t = 0;
  std::vector<std::vector<float>> m, v;

  static AdamState init(const ParamStore& store, float lr = 1e-3f) {
    AdamState s;
    s.lr = lr;
    s.m.resize(static_cast<std::size_t>(store.count()));
    s.v.resize(static_cast<std::size_t>(store.count()));
    for (int i = 0; i < store.count(); ++i) {
      s.m[static_cast<std::size_t>(i)].assign(store[i].value.size(), 0.0f);
      s.v[static_cast<std::size_t>(i)].assign(store[i].value.size(), 0.0f);
    }
    return s;
  }
};

// One Adam step over all trainable params. Rejects the whole step if any
// gradient entry is non-finite: parameters and moments are left untouched
// and the error is surfaced to the caller.
inline void adam_step(ParamStore& store, const std::vector<std::vector<float>>& grads,
                      AdamState& state) {
  if (static_cast<int>(grads.size()) != store.count())
    throw std::invalid_argument("adam_step: gradient list size mismatch");
  if (!(state.lr > 0.0f)) throw std::invalid_argument("adam_step: lr must be > 0");
  for (int i = 0; i < store.count(); ++i) {
    if (!store[i].trainable) continue;
    const auto& g = grads[static_cast<std::size_t>(i)];
    if (g.size() != store[i].value.size())
      throw std::invalid_argument("adam_step: grad shape mismatch for " + store[i].name);
    for (float x : g)
      if (!std::isfinite(x))
        throw NonFiniteGradientError("non-finite gradient in " + store[i].name);
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.t));
  for (int i = 0; i < store.count(); ++i) {
    if (!store[i].trainable) continue;
    auto& p = store[i].value;
    auto& m = state.m[static_cast<std::size_t>(i)];
    auto& v = state.v[static_cast<std::size_t>(i)];
    const auto& g = grads[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0f - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0f - state.beta2) * g[j] * g[j];
      const float mhat = m[j] / static_cast<float>(bc1);
      const float vhat = v[j] / static_cast<float>(bc2);
      p[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

inline double grad_l2_norm(const std::vector<std::vector<float>>& grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (float x : g) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

}  // namespace semcom
