#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridread/rng.hpp"

namespace gridread {

struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// When enabled, differentiable ops reject NaN/Inf at their boundaries.
inline bool& tensor_debug_checks() {
  static bool enabled = false;
  return enabled;
}

// Dense row-major n-d array with an optional same-shape gradient buffer.
// Training uses T=float, gradient checks instantiate T=double.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, bool rg = false) : shape(std::move(s)), requires_grad(rg) {
    data.assign(numel(), T(0));
    if (requires_grad) grad.assign(numel(), T(0));
  }

  size_t numel() const {
    size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw ShapeError("negative dimension");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  void zero_grad() {
    if (requires_grad) grad.assign(data.size(), T(0));
  }

  void enable_grad() {
    requires_grad = true;
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }

  // NCHW accessors for 4-d tensors.
  T& at4(int n, int c, int h, int w) {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  T at4(int n, int c, int h, int w) const {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void check_finite(const char* where) const {
    if (!tensor_debug_checks()) return;
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v)))
        throw NumericError(std::string("non-finite value at ") + where);
  }
};

template <typename T>
inline Tensor<T> tensor_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape);
}

template <typename T>
inline Tensor<T> random_uniform(std::vector<int> shape, T lo, T hi, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// He-uniform fan-in initialization for conv weights [Cout, Cin/g, kh, kw].
template <typename T>
inline Tensor<T> he_uniform(std::vector<int> shape, Rng& rng) {
  size_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= static_cast<size_t>(shape[i]);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return random_uniform<T>(std::move(shape), static_cast<T>(-bound), static_cast<T>(bound), rng);
}

template <typename T>
inline std::string shape_str(const Tensor<T>& t) {
  std::string s = "[";
  for (size_t i = 0; i < t.shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.shape[i]);
  }
  return s + "]";
}

}  // namespace gridread
