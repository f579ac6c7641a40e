#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "memnav/error.hpp"
#include "memnav/rng.hpp"

namespace memnav::ad {

// Fixed alignment keeps vectorized kernels on the same code path run to run, so
// results do not depend on where the allocator happened to place a buffer.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major array of doubles. The gradient buffer is only allocated for
// parameters.
struct Tensor {
  Shape shape;
  Buffer values;
  Buffer grad;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), values(shape_size(shape), fill) {}
  Tensor(Shape s, const std::vector<double>& v) : shape(std::move(s)), values(v.begin(), v.end()) {
    if (values.size() != shape_size(shape)) {
      throw ShapeMismatch("tensor values " + std::to_string(values.size()) + " vs shape " +
                          shape_str(shape));
    }
  }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  // Product of all dimensions after the first.
  std::size_t row_size() const { return shape.empty() ? 0 : size() / shape[0]; }

  double* data() { return values.data(); }
  const double* data() const { return values.data(); }
  std::span<double> row(std::size_t i) { return {values.data() + i * row_size(), row_size()}; }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * row_size(), row_size()};
  }

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  bool has_grad() const { return grad.size() == values.size(); }
  void ensure_grad() {
    if (!has_grad()) grad.assign(values.size(), 0.0);
  }

  Tensor reshaped(Shape s) const {
    if (shape_size(s) != size()) {
      throw ShapeMismatch("cannot reshape " + shape_str(shape) + " to " + shape_str(s));
    }
    Tensor t;
    t.shape = std::move(s);
    t.values = values;
    return t;
  }
};

// Trainable tensor with a name (used as the checkpoint key).
struct Parameter {
  std::string name;
  Tensor value;
  bool grad_populated = false;

  Parameter(std::string n, Shape s) : name(std::move(n)), value(std::move(s)) { value.ensure_grad(); }

  void zero_grad() {
    std::fill(value.grad.begin(), value.grad.end(), 0.0);
    grad_populated = false;
  }

  // Uniform(-bound, bound) with bound = 1/sqrt(fan_in).
  void init_fan_in(std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : value.values) v = rng.uniform(-bound, bound);
  }

  // He-uniform for weights feeding a ReLU: bound = sqrt(6/fan_in).
  void init_he(std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : value.values) v = rng.uniform(-bound, bound);
  }
};

using ParameterList = std::vector<Parameter*>;

inline void require_shape(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeMismatch(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                        shape_str(t.shape));
  }
}

}  // namespace memnav::ad
