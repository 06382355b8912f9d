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

// Differentiable kernels over Var. Every op computes its forward value eagerly
// and registers a backward rule on the tape of its inputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "meshcrowd/ndgrad/tape.hpp"

namespace meshcrowd::ndgrad {

namespace detail {

inline Tape& common_tape(const char* op, std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const Var& v : vars) {
    if (!v.valid()) throw std::invalid_argument(std::string(op) + ": invalid Var");
    if (t == nullptr) {
      t = v.tape();
    } else if (t != v.tape()) {
      throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
    }
  }
  return *t;
}

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw ShapeError(op, a.shape(), b.shape());
}

template <typename F, typename DF>
Var unary(const char* op, const Var& x, F f, DF df) {
  Tape& tape = detail::common_tape(op, {x});
  const Tensor& xv = x.value();
  Tensor out(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) out.data[i] = f(xv.data[i]);
  VarId xi = x.id();
  return tape.record(op, {xi}, std::move(out),
                     [xi, df](Tape& t, VarId self, const Tensor& g) {
                       Tensor* gx = t.grad_of(xi);
                       if (!gx) return;
                       const Tensor& xv = t.value(xi);
                       const Tensor& yv = t.value(self);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         gx->data[i] += g.data[i] * df(xv.data[i], yv.data[i]);
                       }
                     });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary (identical shapes; broadcast is explicit via broadcast_to)

inline Var add(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape("add", {a, b});
  detail::require_same_shape("add", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  VarId ai = a.id(), bi = b.id();
  return tape.record("add", {ai, bi}, std::move(out),
                     [ai, bi](Tape& t, VarId, const Tensor& g) {
                       for (VarId id : {ai, bi}) {
                         if (Tensor* gx = t.grad_of(id)) {
                           for (std::size_t i = 0; i < g.size(); ++i) gx->data[i] += g.data[i];
                         }
                       }
                     });
}

inline Var sub(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape("sub", {a, b});
  detail::require_same_shape("sub", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
  VarId ai = a.id(), bi = b.id();
  return tape.record("sub", {ai, bi}, std::move(out),
                     [ai, bi](Tape& t, VarId, const Tensor& g) {
                       if (Tensor* ga = t.grad_of(ai)) {
                         for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i];
                       }
                       if (Tensor* gb = t.grad_of(bi)) {
                         for (std::size_t i = 0; i < g.size(); ++i) gb->data[i] -= g.data[i];
                       }
                     });
}

inline Var mul(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape("mul", {a, b});
  detail::require_same_shape("mul", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  VarId ai = a.id(), bi = b.id();
  return tape.record("mul", {ai, bi}, std::move(out),
                     [ai, bi](Tape& t, VarId, const Tensor& g) {
                       const auto& av = t.value(ai).data;
                       const auto& bv = t.value(bi).data;
                       if (Tensor* ga = t.grad_of(ai)) {
                         for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] * bv[i];
                       }
                       if (Tensor* gb = t.grad_of(bi)) {
                         for (std::size_t i = 0; i < g.size(); ++i) gb->data[i] += g.data[i] * av[i];
                       }
                     });
}

inline Var div(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape("div", {a, b});
  detail::require_same_shape("div", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] /= bv[i];
  VarId ai = a.id(), bi = b.id();
  return tape.record("div", {ai, bi}, std::move(out),
                     [ai, bi](Tape& t, VarId self, const Tensor& g) {
                       const auto& bv = t.value(bi).data;
                       const auto& yv = t.value(self).data;
                       if (Tensor* ga = t.grad_of(ai)) {
                         for (std::size_t i = 0; i < g.size(); ++i) ga->data[i] += g.data[i] / bv[i];
                       }
                       if (Tensor* gb = t.grad_of(bi)) {
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           gb->data[i] -= g.data[i] * yv[i] / bv[i];
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Scalar and elementwise unary

inline Var scale(const Var& x, double s) {
  return detail::unary("scale", x, [s](double v) { return s * v; },
                       [s](double, double) { return s; });
}

inline Var add_scalar(const Var& x, double s) {
  return detail::unary("add_scalar", x, [s](double v) { return v + s; },
                       [](double, double) { return 1.0; });
}

inline Var neg(const Var& x) { return scale(x, -1.0); }

inline Var exp(const Var& x) {
  return detail::unary("exp", x, [](double v) { return std::exp(v); },
                       [](double, double y) { return y; });
}

inline Var log(const Var& x) {
  return detail::unary("log", x, [](double v) { return std::log(v); },
                       [](double v, double) { return 1.0 / v; });
}

inline Var sqrt(const Var& x) {
  return detail::unary("sqrt", x, [](double v) { return std::sqrt(v); },
                       [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

/// |x| with subgradient 0 at x == 0.
inline Var abs(const Var& x) {
  return detail::unary("abs", x, [](double v) { return std::abs(v); },
                       [](double v, double) {
                         return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                       });
}

inline Var square(const Var& x) {
  return detail::unary("square", x, [](double v) { return v * v; },
                       [](double v, double) { return 2.0 * v; });
}

inline Var tanh(const Var& x) {
  return detail::unary("tanh", x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Var sin(const Var& x) {
  return detail::unary("sin", x, [](double v) { return std::sin(v); },
                       [](double v, double) { return std::cos(v); });
}

inline Var cos(const Var& x) {
  return detail::unary("cos", x, [](double v) { return std::cos(v); },
                       [](double v, double) { return -std::sin(v); });
}

inline double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

inline double softplus_scalar(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

inline Var sigmoid(const Var& x) {
  return detail::unary("sigmoid", x, sigmoid_scalar,
                       [](double, double y) { return y * (1.0 - y); });
}

/// log(1 + e^x), numerically stable for large |x|.
inline Var softplus(const Var& x) {
  return detail::unary("softplus", x, softplus_scalar,
                       [](double v, double) { return sigmoid_scalar(v); });
}

/// Subgradient 0 at the kink.
inline Var relu(const Var& x) {
  return detail::unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

/// Tanh approximation of GELU; smooth everywhere.
inline Var gelu(const Var& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double c = 0.044715;
  return detail::unary(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::tanh(k * (v + c * v * v * v))); },
      [](double v, double) {
        double u = k * (v + c * v * v * v);
        double th = std::tanh(u);
        double du = k * (1.0 + 3.0 * c * v * v);
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(const Var& x, Shape shape) {
  Tape& tape = detail::common_tape("reshape", {x});
  if (numel(shape) != x.size()) throw ShapeError("reshape", x.shape(), shape);
  Tensor out(std::move(shape), x.value().data);
  VarId xi = x.id();
  return tape.record("reshape", {xi}, std::move(out),
                     [xi](Tape& t, VarId, const Tensor& g) {
                       if (Tensor* gx = t.grad_of(xi)) {
                         for (std::size_t i = 0; i < g.size(); ++i) gx->data[i] += g.data[i];
                       }
                     });
}

namespace detail {

// Maps each flat output index of `out_shape` to the flat index in `in_shape`
// under right-aligned broadcasting.
inline std::vector<std::size_t> broadcast_index(const Shape& in_shape,
                                                const Shape& out_shape) {
  const std::size_t R = out_shape.size();
  const std::size_t r = in_shape.size();
  std::vector<std::size_t> in_stride(R, 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < r; ++k) {
    std::size_t ii = r - 1 - k;
    std::size_t oi = R - 1 - k;
    in_stride[oi] = in_shape[ii] == 1 ? 0 : stride;
    stride *= in_shape[ii];
  }
  std::size_t total = numel(out_shape);
  std::vector<std::size_t> map(total);
  std::vector<std::size_t> counter(R, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < total; ++flat) {
    map[flat] = src;
    for (std::size_t d = R; d-- > 0;) {
      ++counter[d];
      src += in_stride[d];
      if (counter[d] < out_shape[d]) break;
      src -= in_stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return map;
}

}  // namespace detail

/// Right-aligned broadcast to `shape`; each input dim must equal the target
/// dim or be 1. Input rank may not exceed the target rank.
inline Var broadcast_to(const Var& x, Shape shape) {
  Tape& tape = detail::common_tape("broadcast_to", {x});
  const Shape& xs = x.shape();
  bool ok = xs.size() <= shape.size();
  for (std::size_t k = 0; ok && k < xs.size(); ++k) {
    std::size_t a = xs[xs.size() - 1 - k];
    std::size_t b = shape[shape.size() - 1 - k];
    ok = (a == b || a == 1);
  }
  if (!ok) throw ShapeError("broadcast_to", xs, shape);
  auto map = std::make_shared<std::vector<std::size_t>>(detail::broadcast_index(xs, shape));
  Tensor out(std::move(shape));
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = xv[(*map)[i]];
  VarId xi = x.id();
  return tape.record("broadcast_to", {xi}, std::move(out),
                     [xi, map](Tape& t, VarId, const Tensor& g) {
                       if (Tensor* gx = t.grad_of(xi)) {
                         for (std::size_t i = 0; i < g.size(); ++i) gx->data[(*map)[i]] += g.data[i];
                       }
                     });
}

inline Var transpose(const Var& x) {
  Tape& tape = detail::common_tape("transpose", {x});
  if (x.shape().size() != 2) throw ShapeError("transpose", "expects rank 2, got " + to_string(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({n, m});
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = xv(i, j);
  VarId xi = x.id();
  return tape.record("transpose", {xi}, std::move(out),
                     [xi, m, n](Tape& t, VarId, const Tensor& g) {
                       if (Tensor* gx = t.grad_of(xi)) {
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) (*gx)(i, j) += g(j, i);
                       }
                     });
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  Tape& tape = detail::common_tape("concat", {parts.front()});
  Shape base = parts.front().shape();
  if (axis >= base.size()) throw ShapeError("concat", "axis out of range for " + to_string(base));
  std::size_t total_len = 0;
  std::vector<VarId> ids;
  for (const Var& p : parts) {
    detail::common_tape("concat", {parts.front(), p});
    Shape s = p.shape();
    if (s.size() != base.size()) throw ShapeError("concat", base, s);
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != base[d]) throw ShapeError("concat", base, s);
    }
    total_len += s[axis];
    ids.push_back(p.id());
  }
  Shape out_shape = base;
  out_shape[axis] = total_len;
  AxisSplit os = split_axis(out_shape, axis, "concat");
  Tensor out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const Tensor& pv = p.value();
    const std::size_t len = pv.shape[axis];
    for (std::size_t o = 0; o < os.outer; ++o) {
      const double* src = pv.data.data() + o * len * os.inner;
      double* dst = out.data.data() + (o * os.len + off) * os.inner;
      std::copy(src, src + len * os.inner, dst);
    }
    off += len;
  }
  return tape.record("concat", ids, std::move(out),
                     [ids, offsets, os](Tape& t, VarId, const Tensor& g) {
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         Tensor* gx = t.grad_of(ids[k]);
                         if (!gx) continue;
                         const std::size_t len = gx->size() / (os.outer * os.inner);
                         for (std::size_t o = 0; o < os.outer; ++o) {
                           const double* src = g.data.data() + (o * os.len + offsets[k]) * os.inner;
                           double* dst = gx->data.data() + o * len * os.inner;
                           for (std::size_t i = 0; i < len * os.inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

/// Half-open slice [begin, end) along `axis`.
inline Var slice(const Var& x, std::size_t axis, std::size_t begin, std::size_t end) {
  Tape& tape = detail::common_tape("slice", {x});
  AxisSplit s = split_axis(x.shape(), axis, "slice");
  if (begin > end || end > s.len) {
    throw ShapeError("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                  ") invalid for shape " + to_string(x.shape()) + " axis " +
                                  std::to_string(axis));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t len = end - begin;
  const auto& xv = x.value().data;
  for (std::size_t o = 0; o < s.outer; ++o) {
    const double* src = xv.data() + (o * s.len + begin) * s.inner;
    std::copy(src, src + len * s.inner, out.data.data() + o * len * s.inner);
  }
  VarId xi = x.id();
  return tape.record("slice", {xi}, std::move(out),
                     [xi, s, begin, len](Tape& t, VarId, const Tensor& g) {
                       Tensor* gx = t.grad_of(xi);
                       if (!gx) return;
                       for (std::size_t o = 0; o < s.outer; ++o) {
                         double* dst = gx->data.data() + (o * s.len + begin) * s.inner;
                         const double* src = g.data.data() + o * len * s.inner;
                         for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                       }
                     });
}

/// Gathers rows (index into axis 0); repeated indices accumulate gradients.
inline Var index_select(const Var& x, const std::vector<std::size_t>& rows) {
  Tape& tape = detail::common_tape("index_select", {x});
  if (x.shape().empty()) throw ShapeError("index_select", "scalar input");
  const std::size_t n = x.dim(0);
  const std::size_t row = x.size() / std::max<std::size_t>(n, 1);
  Shape out_shape = x.shape();
  out_shape[0] = rows.size();
  Tensor out(out_shape);
  const auto& xv = x.value().data;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) {
      throw ShapeError("index_select", "row " + std::to_string(rows[r]) +
                                           " out of range for shape " + to_string(x.shape()));
    }
    std::copy(xv.begin() + rows[r] * row, xv.begin() + (rows[r] + 1) * row,
              out.data.begin() + r * row);
  }
  VarId xi = x.id();
  return tape.record("index_select", {xi}, std::move(out),
                     [xi, rows, row](Tape& t, VarId, const Tensor& g) {
                       Tensor* gx = t.grad_of(xi);
                       if (!gx) return;
                       for (std::size_t r = 0; r < rows.size(); ++r)
                         for (std::size_t i = 0; i < row; ++i)
                           gx->data[rows[r] * row + i] += g.data[r * row + i];
                     });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  Tape& tape = detail::common_tape("matmul", {a, b});
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const double* av = a.value().data.data();
  const double* bv = b.value().data.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  VarId ai = a.id(), bi = b.id();
  return tape.record("matmul", {ai, bi}, std::move(out),
                     [ai, bi, m, k, n](Tape& t, VarId, const Tensor& g) {
                       const double* av = t.value(ai).data.data();
                       const double* bv = t.value(bi).data.data();
                       if (Tensor* ga = t.grad_of(ai)) {
                         // dA = G B^T
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             double acc = 0.0;
                             for (std::size_t j = 0; j < n; ++j) acc += g.data[i * n + j] * bv[p * n + j];
                             ga->data[i * k + p] += acc;
                           }
                       }
                       if (Tensor* gb = t.grad_of(bi)) {
                         // dB = A^T G
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t p = 0; p < k; ++p) {
                             const double aip = av[i * k + p];
                             if (aip == 0.0) continue;
                             for (std::size_t j = 0; j < n; ++j) gb->data[p * n + j] += aip * g.data[i * n + j];
                           }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& x) {
  Tape& tape = detail::common_tape("sum", {x});
  double s = 0.0;
  for (double v : x.value().data) s += v;
  VarId xi = x.id();
  return tape.record("sum", {xi}, Tensor::scalar(s),
                     [xi](Tape& t, VarId, const Tensor& g) {
                       if (Tensor* gx = t.grad_of(xi)) {
                         for (double& v : gx->data) v += g.data[0];
                       }
                     });
}

inline Var mean(const Var& x) {
  return scale(sum(x), 1.0 / static_cast<double>(std::max<std::size_t>(x.size(), 1)));
}

inline Var sum_axis(const Var& x, std::size_t axis, bool keepdim = false) {
  Tape& tape = detail::common_tape("sum_axis", {x});
  AxisSplit s = split_axis(x.shape(), axis, "sum_axis");
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  Tensor out(out_shape);
  const auto& xv = x.value().data;
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i)
        out.data[o * s.inner + i] += xv[(o * s.len + l) * s.inner + i];
  VarId xi = x.id();
  return tape.record("sum_axis", {xi}, std::move(out),
                     [xi, s](Tape& t, VarId, const Tensor& g) {
                       Tensor* gx = t.grad_of(xi);
                       if (!gx) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t l = 0; l < s.len; ++l)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             gx->data[(o * s.len + l) * s.inner + i] += g.data[o * s.inner + i];
                     });
}

inline Var mean_axis(const Var& x, std::size_t axis, bool keepdim = false) {
  const double len = static_cast<double>(split_axis(x.shape(), axis, "mean_axis").len);
  return scale(sum_axis(x, axis, keepdim), 1.0 / std::max(len, 1.0));
}

/// Euclidean norm along `axis` (axis removed). Gradient is 0 where the norm
/// is exactly 0.
inline Var norm_axis(const Var& x, std::size_t axis) {
  Tape& tape = detail::common_tape("norm_axis", {x});
  AxisSplit s = split_axis(x.shape(), axis, "norm_axis");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(out_shape);
  const auto& xv = x.value().data;
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        double v = xv[(o * s.len + l) * s.inner + i];
        acc += v * v;
      }
      out.data[o * s.inner + i] = std::sqrt(acc);
    }
  VarId xi = x.id();
  return tape.record("norm_axis", {xi}, std::move(out),
                     [xi, s](Tape& t, VarId self, const Tensor& g) {
                       Tensor* gx = t.grad_of(xi);
                       if (!gx) return;
                       const auto& xv = t.value(xi).data;
                       const auto& nv = t.value(self).data;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           const double nrm = nv[o * s.inner + i];
                           if (nrm == 0.0) continue;
                           const double f = g.data[o * s.inner + i] / nrm;
                           for (std::size_t l = 0; l < s.len; ++l) {
                             const std::size_t idx = (o * s.len + l) * s.inner + i;
                             gx->data[idx] += f * xv[idx];
                           }
                         }
                     });
}

inline Var softmax(const Var& x, std::size_t axis) {
  Tape& tape = detail::common_tape("softmax", {x});
  AxisSplit s = split_axis(x.shape(), axis, "softmax");
  Tensor out(x.shape());
  const auto& xv = x.value().data;
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, xv[(o * s.len + l) * s.inner + i]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const std::size_t idx = (o * s.len + l) * s.inner + i;
        out.data[idx] = std::exp(xv[idx] - mx);
        z += out.data[idx];
      }
      for (std::size_t l = 0; l < s.len; ++l) out.data[(o * s.len + l) * s.inner + i] /= z;
    }
  VarId xi = x.id();
  return tape.record("softmax", {xi}, std::move(out),
                     [xi, s](Tape& t, VarId self, const Tensor& g) {
                       Tensor* gx = t.grad_of(xi);
                       if (!gx) return;
                       const auto& yv = t.value(self).data;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           double dot = 0.0;
                           for (std::size_t l = 0; l < s.len; ++l) {
                             const std::size_t idx = (o * s.len + l) * s.inner + i;
                             dot += g.data[idx] * yv[idx];
                           }
                           for (std::size_t l = 0; l < s.len; ++l) {
                             const std::size_t idx = (o * s.len + l) * s.inner + i;
                             gx->data[idx] += yv[idx] * (g.data[idx] - dot);
                           }
                         }
                     });
}

// ---------------------------------------------------------------------------
// Normalisation

namespace detail {

// Standardises consecutive blocks of `block` values (zero mean, unit
// variance, biased estimator).
inline Var normalize_blocks(const char* op, const Var& x, std::size_t block, double eps) {
  Tape& tape = common_tape(op, {x});
  const std::size_t nblocks = x.size() / block;
  Tensor out(x.shape());
  auto inv_std = std::make_shared<std::vector<double>>(nblocks);
  const auto& xv = x.value().data;
  for (std::size_t b = 0; b < nblocks; ++b) {
    const double* src = xv.data() + b * block;
    double mu = 0.0;
    for (std::size_t i = 0; i < block; ++i) mu += src[i];
    mu /= static_cast<double>(block);
    double var = 0.0;
    for (std::size_t i = 0; i < block; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(block);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[b] = is;
    for (std::size_t i = 0; i < block; ++i) out.data[b * block + i] = (src[i] - mu) * is;
  }
  VarId xi = x.id();
  return tape.record(op, {xi}, std::move(out),
                     [xi, block, nblocks, inv_std](Tape& t, VarId self, const Tensor& g) {
                       Tensor* gx = t.grad_of(xi);
                       if (!gx) return;
                       const auto& yv = t.value(self).data;
                       const double inv_n = 1.0 / static_cast<double>(block);
                       for (std::size_t b = 0; b < nblocks; ++b) {
                         const double* gb = g.data.data() + b * block;
                         const double* yb = yv.data() + b * block;
                         double gm = 0.0, gy = 0.0;
                         for (std::size_t i = 0; i < block; ++i) {
                           gm += gb[i];
                           gy += gb[i] * yb[i];
                         }
                         gm *= inv_n;
                         gy *= inv_n;
                         const double is = (*inv_std)[b];
                         for (std::size_t i = 0; i < block; ++i) {
                           gx->data[b * block + i] += is * (gb[i] - gm - yb[i] * gy);
                         }
                       }
                     });
}

}  // namespace detail

/// Standardises along the last axis (no affine; compose with mul/add).
inline Var layer_norm(const Var& x, double eps = 1e-5) {
  if (x.shape().empty()) throw ShapeError("layer_norm", "scalar input");
  return detail::normalize_blocks("layer_norm", x, x.shape().back(), eps);
}

/// Group normalisation of a C x H x W map (no affine).
inline Var group_norm(const Var& x, std::size_t groups, double eps = 1e-5) {
  if (x.shape().size() != 3 || groups == 0 || x.dim(0) % groups != 0) {
    throw ShapeError("group_norm", "expects C x H x W with C divisible by groups, got " +
                                       to_string(x.shape()) + " groups=" + std::to_string(groups));
  }
  return detail::normalize_blocks("group_norm", x, x.size() / groups, eps);
}

// ---------------------------------------------------------------------------
// Convolution

/// 2D cross-correlation of a single C_in x H x W image with C_out x C_in x k x k
/// weights and a length-C_out bias; zero padding.
inline Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t pad) {
  Tape& tape = detail::common_tape("conv2d", {x, w, b});
  if (x.shape().size() != 3 || w.shape().size() != 4 || w.dim(1) != x.dim(0) ||
      w.dim(2) != w.dim(3) || b.shape() != Shape{w.dim(0)} || stride == 0) {
    throw ShapeError("conv2d", x.shape(), w.shape());
  }
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t co = w.dim(0), k = w.dim(2);
  if (h + 2 * pad < k || wd + 2 * pad < k) throw ShapeError("conv2d", x.shape(), w.shape());
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - k) / stride + 1;
  Tensor out({co, ho, wo});
  const double* xv = x.value().data.data();
  const double* wv = w.value().data.data();
  const double* bv = b.value().data.data();
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t o = 0; o < co; ++o) {
    double* dst = out.data.data() + o * ho * wo;
    std::fill(dst, dst + ho * wo, bv[o]);
    for (std::size_t c = 0; c < ci; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wt = wv[((o * ci + c) * k + ky) * k + kx];
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ipad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            const double* src = xv + (c * h + static_cast<std::size_t>(iy)) * wd;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ipad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
              dst[oy * wo + ox] += wt * src[ix];
            }
          }
        }
  }
  VarId xi = x.id(), wi = w.id(), bi = b.id();
  return tape.record(
      "conv2d", {xi, wi, bi}, std::move(out),
      [=](Tape& t, VarId, const Tensor& g) {
        const double* xv = t.value(xi).data.data();
        const double* wv = t.value(wi).data.data();
        Tensor* gx = t.grad_of(xi);
        Tensor* gw = t.grad_of(wi);
        if (Tensor* gb = t.grad_of(bi)) {
          for (std::size_t o = 0; o < co; ++o)
            for (std::size_t p = 0; p < ho * wo; ++p) gb->data[o] += g.data[o * ho * wo + p];
        }
        if (!gx && !gw) return;
        for (std::size_t o = 0; o < co; ++o) {
          const double* go = g.data.data() + o * ho * wo;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t widx = ((o * ci + c) * k + ky) * k + kx;
                const double wt = wv[widx];
                double acc = 0.0;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ipad;
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  const std::size_t row = (c * h + static_cast<std::size_t>(iy)) * wd;
                  for (std::size_t ox = 0; ox < wo; ++ox) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ipad;
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                    const double gv = go[oy * wo + ox];
                    acc += gv * xv[row + static_cast<std::size_t>(ix)];
                    if (gx) gx->data[row + static_cast<std::size_t>(ix)] += gv * wt;
                  }
                }
                if (gw) gw->data[widx] += acc;
              }
        }
      });
}

// ---------------------------------------------------------------------------
// Operators

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }

/// Row-vector bias broadcast over the leading dims of x.
inline Var add_bias(const Var& x, const Var& bias) { return add(x, broadcast_to(bias, x.shape())); }

/// x W + b for x: N x in, W: in x out, b: out.
inline Var linear(const Var& x, const Var& w, const Var& b) { return add_bias(matmul(x, w), b); }

/// Dot product of two equal-shape tensors.
inline Var dot(const Var& a, const Var& b) { return sum(mul(a, b)); }

}  // namespace meshcrowd::ndgrad
