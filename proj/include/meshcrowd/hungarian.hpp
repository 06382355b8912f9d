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
#include <limits>
#include <stdexcept>
#include <vector>

namespace meshcrowd {

/// Minimum-cost assignment for a rows x cols cost matrix (row-major).
/// Returns, for each row, its assigned column or -1 when rows > cols leaves it
/// unassigned. Exactly min(rows, cols) pairs are produced.
/// Shortest augmenting paths with potentials, O(n^2 m).
inline std::vector<int> hungarian(const std::vector<double>& cost, std::size_t rows, std::size_t cols) {
  if (cost.size() != rows * cols) throw std::invalid_argument("hungarian: cost size != rows * cols");
  for (double c : cost)
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian: non-finite cost");
  if (rows == 0 || cols == 0) return std::vector<int>(rows, -1);
  const bool transposed = rows > cols;
  const std::size_t n = transposed ? cols : rows;  // n <= m
  const std::size_t m = transposed ? rows : cols;
  auto a = [&](std::size_t i, std::size_t j) {  // 1-based
    return transposed ? cost[(j - 1) * cols + (i - 1)] : cost[(i - 1) * cols + (j - 1)];
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> out(rows, -1);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    if (transposed) {
      out[j - 1] = static_cast<int>(p[j] - 1);
    } else {
      out[p[j] - 1] = static_cast<int>(j - 1);
    }
  }
  return out;
}

/// Sum of the assigned costs, in row order.
inline double assignment_cost(const std::vector<double>& cost, std::size_t cols, const std::vector<int>& assign) {
  double total = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i)
    if (assign[i] >= 0) total += cost[i * cols + static_cast<std::size_t>(assign[i])];
  return total;
}

}  // namespace meshcrowd
