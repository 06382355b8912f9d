// Copyright 2026 The meshcrowd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace meshcrowd::ndgrad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Raised when operand shapes do not conform. The message names the
/// operation and the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b)
      : std::invalid_argument(op + ": shape mismatch " + to_string(a) +
                              " vs " + to_string(b)) {}
  ShapeError(const std::string& op, const std::string& detail)
      : std::invalid_argument(op + ": " + detail) {}
};

/// Dense row-major f64 array. Plain value type; differentiation records live
/// on a Tape (see tape.hpp).
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() : shape{}, data(1, 0.0) {}
  explicit Tensor(Shape s, double fill = 0.0)
      : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<double> values)
      : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape)) {
      throw ShapeError("Tensor", "shape " + to_string(shape) + " needs " +
                                     std::to_string(numel(shape)) +
                                     " values, got " +
                                     std::to_string(data.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0); }
  static Tensor ones(Shape s) { return Tensor(std::move(s), 1.0); }
  static Tensor eye(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double item() const {
    if (data.size() != 1) {
      throw ShapeError("item", "tensor of shape " + to_string(shape) +
                                   " is not a scalar");
    }
    return data[0];
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis,
                            const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(op, "axis " + std::to_string(axis) +
                             " out of range for shape " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace meshcrowd::ndgrad
