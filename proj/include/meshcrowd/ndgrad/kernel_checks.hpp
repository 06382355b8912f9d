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

// Registry of finite-difference checks, one per differentiable kernel. Each
// check contracts the kernel output against a fixed random tensor so every
// output coordinate contributes to the scalar.

#pragma once

#include <string>
#include <vector>

#include "meshcrowd/ndgrad/gradcheck.hpp"

namespace meshcrowd::ndgrad {

struct NamedCheck {
  std::string name;
  MultiScalarFn fn;
  NamedTensors inputs;
  GradCheckOptions options;
};

inline Tensor uniform_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

/// Uniform magnitudes in [gap, 1 + gap] with random signs; keeps inputs away
/// from kinks at zero.
inline Tensor signed_away_from_zero(Shape shape, std::uint64_t seed, double gap = 0.1) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data) {
    const double m = gap + rng.uniform();
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

namespace detail {

inline Var contract(Tape& t, const Var& y, std::uint64_t seed) {
  return sum(mul(y, t.constant(uniform_tensor(y.shape(), seed))));
}

}  // namespace detail

inline std::vector<NamedCheck> kernel_checks() {
  using detail::contract;
  std::vector<NamedCheck> checks;
  auto unary = [&](std::string name, auto op, Tensor x) {
    checks.push_back({"ops." + name,
                      [op](Tape& t, const std::vector<Var>& v) { return contract(t, op(v[0]), 101); },
                      {{"x", std::move(x)}},
                      {}});
  };
  auto binary = [&](std::string name, auto op, Tensor a, Tensor b) {
    checks.push_back({"ops." + name,
                      [op](Tape& t, const std::vector<Var>& v) { return contract(t, op(v[0], v[1]), 102); },
                      {{"a", std::move(a)}, {"b", std::move(b)}},
                      {}});
  };

  binary("add", [](const Var& a, const Var& b) { return add(a, b); }, uniform_tensor({3, 4}, 1), uniform_tensor({3, 4}, 2));
  binary("sub", [](const Var& a, const Var& b) { return sub(a, b); }, uniform_tensor({3, 4}, 3), uniform_tensor({3, 4}, 4));
  binary("mul", [](const Var& a, const Var& b) { return mul(a, b); }, uniform_tensor({3, 4}, 5), uniform_tensor({3, 4}, 6));
  binary("div", [](const Var& a, const Var& b) { return div(a, b); }, uniform_tensor({3, 4}, 7),
         signed_away_from_zero({3, 4}, 8, 0.5));
  binary("matmul", [](const Var& a, const Var& b) { return matmul(a, b); }, uniform_tensor({4, 5}, 9),
         uniform_tensor({5, 3}, 10));

  unary("scale", [](const Var& x) { return scale(x, -2.5); }, uniform_tensor({5}, 11));
  unary("add_scalar", [](const Var& x) { return add_scalar(x, 0.75); }, uniform_tensor({5}, 12));
  unary("exp", [](const Var& x) { return exp(x); }, uniform_tensor({5}, 13));
  unary("log", [](const Var& x) { return log(x); }, uniform_tensor({5}, 14, 0.2, 2.0));
  unary("sqrt", [](const Var& x) { return sqrt(x); }, uniform_tensor({5}, 15, 0.2, 2.0));
  unary("abs", [](const Var& x) { return abs(x); }, signed_away_from_zero({6}, 16));
  unary("square", [](const Var& x) { return square(x); }, uniform_tensor({5}, 17));
  unary("tanh", [](const Var& x) { return tanh(x); }, uniform_tensor({5}, 18, -2.0, 2.0));
  unary("sin", [](const Var& x) { return sin(x); }, uniform_tensor({5}, 41, -3.0, 3.0));
  unary("cos", [](const Var& x) { return cos(x); }, uniform_tensor({5}, 42, -3.0, 3.0));
  unary("sigmoid", [](const Var& x) { return sigmoid(x); }, uniform_tensor({5}, 19, -4.0, 4.0));
  unary("softplus", [](const Var& x) { return softplus(x); }, uniform_tensor({5}, 20, -4.0, 4.0));
  unary("relu", [](const Var& x) { return relu(x); }, signed_away_from_zero({6}, 21));
  unary("gelu", [](const Var& x) { return gelu(x); }, uniform_tensor({6}, 22, -3.0, 3.0));
  unary("reshape", [](const Var& x) { return reshape(x, {4, 3}); }, uniform_tensor({3, 4}, 23));
  unary("broadcast_to", [](const Var& x) { return broadcast_to(x, {2, 3, 4}); }, uniform_tensor({3, 1}, 24));
  unary("transpose", [](const Var& x) { return transpose(x); }, uniform_tensor({3, 5}, 25));
  unary("slice", [](const Var& x) { return slice(x, 1, 1, 3); }, uniform_tensor({3, 4, 2}, 26));
  unary("index_select", [](const Var& x) { return index_select(x, {2, 0, 2}); }, uniform_tensor({3, 4}, 27));
  unary("sum", [](const Var& x) { return sum(x); }, uniform_tensor({3, 4}, 28));
  unary("mean", [](const Var& x) { return mean(x); }, uniform_tensor({3, 4}, 29));
  unary("sum_axis", [](const Var& x) { return sum_axis(x, 1); }, uniform_tensor({3, 4, 2}, 30));
  unary("mean_axis", [](const Var& x) { return mean_axis(x, 0, true); }, uniform_tensor({3, 4}, 31));
  unary("norm_axis", [](const Var& x) { return norm_axis(x, 0); }, uniform_tensor({3, 5}, 32));
  unary("softmax", [](const Var& x) { return softmax(x, 1); }, uniform_tensor({3, 5}, 33, -2.0, 2.0));
  unary("layer_norm", [](const Var& x) { return layer_norm(x); }, uniform_tensor({3, 6}, 34));
  unary("group_norm", [](const Var& x) { return group_norm(x, 2); }, uniform_tensor({4, 3, 3}, 35));

  checks.push_back({"ops.concat",
                    [](Tape& t, const std::vector<Var>& v) { return contract(t, concat({v[0], v[1]}, 1), 103); },
                    {{"a", uniform_tensor({2, 3}, 36)}, {"b", uniform_tensor({2, 2}, 37)}},
                    {}});
  checks.push_back({"ops.conv2d",
                    [](Tape& t, const std::vector<Var>& v) {
                      return contract(t, conv2d(v[0], v[1], v[2], 2, 1), 104);
                    },
                    {{"x", uniform_tensor({2, 6, 6}, 38)},
                     {"w", uniform_tensor({3, 2, 3, 3}, 39)},
                     {"b", uniform_tensor({3}, 40)}},
                    {}});
  return checks;
}

}  // namespace meshcrowd::ndgrad
