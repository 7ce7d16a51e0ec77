#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "comporth/error.hpp"
#include "comporth/rng.hpp"

namespace comporth {

// Dense row-major tensor with a runtime shape. Float for training,
// double for finite-difference gradient checks.
template <typename T>
struct Tensor {
  std::vector<long> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<long> s) : shape(std::move(s)), v(count(shape), T(0)) {}
  Tensor(std::vector<long> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<long>(v.size()) != count(shape))
      throw ShapeError("tensor data size does not match shape " + shape_string(shape));
  }

  static long count(const std::vector<long>& s) {
    long n = 1;
    for (long d : s) n *= d;
    return n;
  }

  long size() const { return static_cast<long>(v.size()); }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  T& operator[](long i) { return v[static_cast<size_t>(i)]; }
  const T& operator[](long i) const { return v[static_cast<size_t>(i)]; }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  void require_finite(const std::string& what) const {
    if (!all_finite()) throw NumericalError("non-finite values in " + what);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (long i = 0; i < size(); ++i) out[i] = static_cast<U>(v[i]);
    return out;
  }
};

template <typename T>
inline void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape) + " vs " +
                     shape_string(b.shape));
}

// Deterministic N(0,1) fill keyed by (seed, flat index).
template <typename T>
inline Tensor<T> seeded_normal(std::vector<long> shape, uint64_t seed) {
  Tensor<T> t(std::move(shape));
  CounterRng rng(seed);
  for (long i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.next_normal());
  return t;
}

}  // namespace comporth
