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

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "meshcrowd/ndgrad/ops.hpp"
#include "meshcrowd/rng.hpp"

namespace meshcrowd::ndgrad {

struct GradCheckReport {
  /// (parameter name, max relative error over checked coordinates)
  std::vector<std::pair<std::string, double>> per_parameter;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = true;
  std::size_t coordinates_checked = 0;
  std::size_t coordinates_skipped = 0;
};

class GradCheckError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// |a - b| / max(1e-8, |a| + |b|)
inline double relative_error(double ad, double fd) {
  return std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd));
}

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  /// 0 checks every coordinate; otherwise a seeded random subset of this size
  /// per parameter.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  /// When > 0, only coordinates with |AD gradient| >= this value are
  /// eligible. Used where structural zeros (e.g. softmax shift invariance)
  /// would otherwise compare 0 against finite-difference rounding noise.
  double min_abs_grad = 0.0;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
using MultiScalarFn = std::function<Var(Tape&, const std::vector<Var>&)>;
using ScalarFn = std::function<Var(Tape&, const Var&)>;

/// Compares reverse-mode gradients of `f` w.r.t. every named input against
/// central finite differences.
inline GradCheckReport grad_check(const MultiScalarFn& f, const NamedTensors& params,
                                  const GradCheckOptions& opt = {}) {
  if (!(opt.step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  auto evaluate = [&](const NamedTensors& values) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(values.size());
    for (const auto& [name, t] : values) leaves.push_back(tape.constant(t));
    return f(tape, leaves).item();
  };

  Tape tape;
  std::vector<Var> leaves;
  for (const auto& [name, t] : params) leaves.push_back(tape.leaf(t));
  Var loss = f(tape, leaves);
  if (!loss.value().all_finite()) throw GradCheckError("grad_check: non-finite loss at base point");
  Gradients grads = tape.backward(loss);

  GradCheckReport report;
  report.tolerance = opt.tol;
  Rng rng(opt.seed);
  NamedTensors work = params;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor g = grads[leaves[p]];
    const std::size_t n = params[p].second.size();
    std::vector<std::size_t> coords;
    for (std::size_t i = 0; i < n; ++i)
      if (opt.min_abs_grad <= 0.0 || std::abs(g.data[i]) >= opt.min_abs_grad) coords.push_back(i);
    report.coordinates_skipped += n - coords.size();
    const std::size_t eligible = coords.size();
    if (opt.max_coords != 0 && opt.max_coords < eligible) {
      for (std::size_t i = 0; i < opt.max_coords; ++i) {
        std::swap(coords[i], coords[i + rng.index(eligible - i)]);
      }
      coords.resize(opt.max_coords);
      std::sort(coords.begin(), coords.end());
    }
    double worst = 0.0;
    for (std::size_t c : coords) {
      const double x0 = params[p].second.data[c];
      work[p].second.data[c] = x0 + opt.step;
      const double fp = evaluate(work);
      work[p].second.data[c] = x0 - opt.step;
      const double fm = evaluate(work);
      work[p].second.data[c] = x0;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw GradCheckError("grad_check: non-finite value when perturbing " + params[p].first +
                             "[" + std::to_string(c) + "]");
      }
      const double fd = (fp - fm) / (2.0 * opt.step);
      worst = std::max(worst, relative_error(g.data[c], fd));
      ++report.coordinates_checked;
    }
    report.per_parameter.emplace_back(params[p].first, worst);
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  report.pass = report.max_rel_error <= opt.tol;
  return report;
}

/// Single-input convenience form.
inline GradCheckReport grad_check(const ScalarFn& f, const Tensor& x, double step, double tol) {
  GradCheckOptions opt;
  opt.step = step;
  opt.tol = tol;
  return grad_check([&](Tape& t, const std::vector<Var>& v) { return f(t, v[0]); },
                    NamedTensors{{"x", x}}, opt);
}

}  // namespace meshcrowd::ndgrad
