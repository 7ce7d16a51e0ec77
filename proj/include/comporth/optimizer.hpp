#pragma once

#include <cmath>
#include <map>
#include <string>

#include "comporth/error.hpp"
#include "comporth/tensor.hpp"

namespace comporth {

// Named parameters plus per-parameter moment accumulators. Iteration is
// by name order, so updates and serialization are deterministic.
template <typename T>
struct ParamStore {
  std::map<std::string, Tensor<T>> params;
  std::map<std::string, Tensor<T>> grads;
  std::map<std::string, Tensor<T>> m1;
  std::map<std::string, Tensor<T>> m2;
  long step = 0;

  void add(const std::string& name, Tensor<T> value) {
    if (params.count(name)) throw ConfigError("duplicate parameter: " + name);
    grads[name] = Tensor<T>(value.shape);
    m1[name] = Tensor<T>(value.shape);
    m2[name] = Tensor<T>(value.shape);
    params[name] = std::move(value);
  }

  Tensor<T>& param(const std::string& name) { return params.at(name); }
  const Tensor<T>& param(const std::string& name) const { return params.at(name); }
  Tensor<T>& grad(const std::string& name) { return grads.at(name); }

  void zero_grads() {
    for (auto& [name, g] : grads) g.fill(T(0));
  }

  void accumulate(const std::string& name, const Tensor<T>& g) {
    Tensor<T>& acc = grads.at(name);
    if (acc.shape != g.shape)
      throw ShapeError("gradient for " + name + ": " + shape_string(g.shape) + " vs parameter " +
                       shape_string(acc.shape));
    for (long i = 0; i < acc.size(); ++i) acc[i] += g[i];
  }

  long total_size() const {
    long n = 0;
    for (const auto& [name, p] : params) n += p.size();
    return n;
  }
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected adaptive-moment update over every registered parameter.
template <typename T>
void adam_step(ParamStore<T>& store, const AdamConfig& cfg) {
  if (cfg.lr <= 0) throw ConfigError("adam_step: lr must be > 0");
  store.step += 1;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(store.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(store.step));
  for (auto& [name, p] : store.params) {
    const Tensor<T>& g = store.grads.at(name);
    Tensor<T>& m = store.m1.at(name);
    Tensor<T>& v = store.m2.at(name);
    for (long i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p[i] -= static_cast<T>(cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
    }
  }
}

}  // namespace comporth
