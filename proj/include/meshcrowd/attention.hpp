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

// Multi-scale deformable attention and the transformer layers built on it.
//
// Feature maps are stored token-major: one [sum_l H_l * W_l, C] matrix with
// level l occupying rows [start_l, start_l + H_l * W_l) in row-major (y, x)
// order. Sampling locations are in pixel units of each level, with integer
// coordinates at cell centres; a normalised reference (u, v) maps to
// (u * W_l - 0.5, v * H_l - 0.5).

#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "meshcrowd/ndgrad.hpp"
#include "meshcrowd/params.hpp"

namespace meshcrowd::attn {

namespace nd = meshcrowd::ndgrad;
using nd::Shape;
using nd::Tape;
using nd::Tensor;
using nd::Var;

enum class Boundary { kZeros, kPeriodic };

struct LevelShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t cells() const { return height * width; }
};

struct FeatureMapSet {
  std::vector<LevelShape> levels;
  Var tokens;  // [sum cells, C]

  std::size_t start(std::size_t level) const {
    std::size_t s = 0;
    for (std::size_t l = 0; l < level; ++l) s += levels[l].cells();
    return s;
  }
  std::size_t total_cells() const { return start(levels.size()); }
  std::size_t channels() const { return tokens.dim(1); }

  void validate(bool require_decreasing = true) const {
    if (levels.empty()) throw nd::ShapeError("FeatureMapSet", "no levels");
    if (tokens.shape().size() != 2 || tokens.dim(0) != total_cells()) {
      throw nd::ShapeError("FeatureMapSet", "tokens " + nd::to_string(tokens.shape()) +
                                                " do not match " + std::to_string(total_cells()) + " cells");
    }
    for (std::size_t l = 1; require_decreasing && l < levels.size(); ++l) {
      if (levels[l].height >= levels[l - 1].height || levels[l].width >= levels[l - 1].width) {
        throw nd::ShapeError("FeatureMapSet", "level sizes must be strictly decreasing");
      }
    }
  }
};

/// Token-major view of a single C x H x W map.
inline FeatureMapSet single_map(const Var& map) {
  if (map.shape().size() != 3) throw nd::ShapeError("single_map", "expects C x H x W");
  const std::size_t C = map.dim(0), H = map.dim(1), W = map.dim(2);
  return {{{H, W}}, nd::transpose(nd::reshape(map, {C, H * W}))};
}

// ---------------------------------------------------------------------------
// Sampling kernel

namespace detail {

struct Corner {
  std::ptrdiff_t row = -1;  // token row, -1 when outside the map
  double w = 0.0;
  double dwdx = 0.0;
  double dwdy = 0.0;
};

inline std::array<Corner, 4> bilinear_corners(double x, double y, const LevelShape& s, std::size_t start,
                                              Boundary boundary) {
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double fx = x - fx0, fy = y - fy0;
  const auto x0 = static_cast<std::ptrdiff_t>(fx0), y0 = static_cast<std::ptrdiff_t>(fy0);
  const auto W = static_cast<std::ptrdiff_t>(s.width), H = static_cast<std::ptrdiff_t>(s.height);
  std::array<Corner, 4> c;
  const std::ptrdiff_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const std::ptrdiff_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const double ws[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  const double dx[4] = {-(1 - fy), (1 - fy), -fy, fy};
  const double dy[4] = {-(1 - fx), -fx, (1 - fx), fx};
  for (int k = 0; k < 4; ++k) {
    std::ptrdiff_t cx = xs[k], cy = ys[k];
    if (boundary == Boundary::kPeriodic) {
      cx = ((cx % W) + W) % W;
      cy = ((cy % H) + H) % H;
    } else if (cx < 0 || cx >= W || cy < 0 || cy >= H) {
      continue;
    }
    c[k] = {static_cast<std::ptrdiff_t>(start) + cy * W + cx, ws[k], dx[k], dy[k]};
  }
  return c;
}

}  // namespace detail

/// Core of multi-scale deformable attention.
///   value:     [N_tokens, C] token-major memory (heads own contiguous C/H slices)
///   locations: [Nq, H, L, P, 2] pixel coordinates per level
///   weights:   [Nq, H, L * P]
/// Returns [Nq, C]: for each head, sum over levels and points of
/// weight * bilinear(value_head, location).
inline Var deform_sample(const Var& value, const std::vector<LevelShape>& levels, const Var& locations,
                         const Var& weights, std::size_t heads, Boundary boundary = Boundary::kZeros) {
  Tape& tape = *value.tape();
  const std::size_t L = levels.size();
  if (locations.shape().size() != 5 || locations.dim(1) != heads || locations.dim(2) != L ||
      locations.dim(4) != 2) {
    throw nd::ShapeError("deform_sample", "locations must be [Nq, heads, levels, points, 2], got " +
                                              nd::to_string(locations.shape()));
  }
  const std::size_t Nq = locations.dim(0), P = locations.dim(3);
  if (weights.shape() != Shape{Nq, heads, L * P}) throw nd::ShapeError("deform_sample", weights.shape(), Shape{Nq, heads, L * P});
  const std::size_t C = value.dim(1);
  if (heads == 0 || C % heads != 0) throw nd::ShapeError("deform_sample", "channels not divisible by heads");
  std::vector<std::size_t> starts(L);
  std::size_t total = 0;
  for (std::size_t l = 0; l < L; ++l) {
    starts[l] = total;
    total += levels[l].cells();
  }
  if (value.dim(0) != total) throw nd::ShapeError("deform_sample", "value rows do not match level cells");
  const std::size_t D = C / heads;

  const auto& vv = value.value().data;
  const auto& lv = locations.value().data;
  const auto& wv = weights.value().data;
  Tensor out({Nq, C});
  for (std::size_t q = 0; q < Nq; ++q)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t p = 0; p < P; ++p) {
          const std::size_t li = (((q * heads + h) * L + l) * P + p) * 2;
          const double a = wv[(q * heads + h) * L * P + l * P + p];
          auto corners = detail::bilinear_corners(lv[li], lv[li + 1], levels[l], starts[l], boundary);
          double* dst = out.data.data() + q * C + h * D;
          for (const auto& c : corners) {
            if (c.row < 0 || c.w == 0.0) continue;
            const double* src = vv.data() + static_cast<std::size_t>(c.row) * C + h * D;
            const double f = a * c.w;
            for (std::size_t d = 0; d < D; ++d) dst[d] += f * src[d];
          }
        }

  nd::VarId vi = value.id(), li_ = locations.id(), wi = weights.id();
  auto lvls = std::make_shared<std::vector<LevelShape>>(levels);
  return tape.record(
      "deform_sample", {vi, li_, wi}, std::move(out),
      [=](Tape& t, nd::VarId, const Tensor& g) {
        const auto& vv = t.value(vi).data;
        const auto& lv = t.value(li_).data;
        const auto& wv = t.value(wi).data;
        Tensor* gv = t.grad_of(vi);
        Tensor* gl = t.grad_of(li_);
        Tensor* gw = t.grad_of(wi);
        for (std::size_t q = 0; q < Nq; ++q)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t l = 0; l < L; ++l)
              for (std::size_t p = 0; p < P; ++p) {
                const std::size_t li = (((q * heads + h) * L + l) * P + p) * 2;
                const std::size_t wi_ = (q * heads + h) * L * P + l * P + p;
                const double a = wv[wi_];
                auto corners = detail::bilinear_corners(lv[li], lv[li + 1], (*lvls)[l], starts[l], boundary);
                const double* go = g.data.data() + q * C + h * D;
                double gsample = 0.0, gx = 0.0, gy = 0.0;
                for (const auto& c : corners) {
                  if (c.row < 0) continue;
                  const std::size_t base = static_cast<std::size_t>(c.row) * C + h * D;
                  double dotv = 0.0;
                  for (std::size_t d = 0; d < D; ++d) dotv += go[d] * vv[base + d];
                  gsample += c.w * dotv;
                  gx += c.dwdx * dotv;
                  gy += c.dwdy * dotv;
                  if (gv && c.w != 0.0) {
                    const double f = a * c.w;
                    for (std::size_t d = 0; d < D; ++d) gv->data[base + d] += f * go[d];
                  }
                }
                if (gw) gw->data[wi_] += gsample;
                if (gl) {
                  gl->data[li] += a * gx;
                  gl->data[li + 1] += a * gy;
                }
              }
      });
}

/// Bilinear sample of a C x H x W map at pixel position p = (x, y); zero
/// padding outside the map unless `boundary` is periodic. Returns [C].
inline Var bilinear_sample(const Var& map, const Var& p, Boundary boundary = Boundary::kZeros) {
  if (p.shape() != Shape{2}) throw nd::ShapeError("bilinear_sample", p.shape(), Shape{2});
  FeatureMapSet fm = single_map(map);
  Tape& tape = *map.tape();
  Var loc = nd::reshape(p, {1, 1, 1, 1, 2});
  Var w = tape.constant(Tensor({1, 1, 1}, 1.0));
  return nd::reshape(deform_sample(fm.tokens, fm.levels, loc, w, 1, boundary), {map.dim(0)});
}

// ---------------------------------------------------------------------------
// Positional encoding

/// Angular frequency of band k out of n: pi * 64^(k / n).
inline double band_frequency(std::size_t k, std::size_t n) {
  return std::numbers::pi * std::pow(64.0, static_cast<double>(k) / static_cast<double>(n));
}

/// 2D sinusoidal encoding of a normalised position. Layout: [sin(w_k u),
/// cos(w_k u), sin(w_k v), cos(w_k v)] blocks of C/4 channels each.
inline Tensor sinusoidal_pos_encoding(double u, double v, std::size_t width) {
  if (width == 0 || width % 4 != 0) {
    throw std::invalid_argument("sinusoidal_pos_encoding: width must be a positive multiple of 4");
  }
  const std::size_t n = width / 4;
  Tensor out({width});
  for (std::size_t k = 0; k < n; ++k) {
    const double w = band_frequency(k, n);
    out.data[k] = std::sin(w * u);
    out.data[n + k] = std::cos(w * u);
    out.data[2 * n + k] = std::sin(w * v);
    out.data[3 * n + k] = std::cos(w * v);
  }
  return out;
}

/// Differentiable batch form over refs [N, 2]; returns [N, width].
inline Var sinusoidal_pos_encoding(const Var& refs, std::size_t width) {
  if (width == 0 || width % 4 != 0) {
    throw std::invalid_argument("sinusoidal_pos_encoding: width must be a positive multiple of 4");
  }
  if (refs.shape().size() != 2 || refs.dim(1) != 2) throw nd::ShapeError("sinusoidal_pos_encoding", refs.shape(), Shape{0, 2});
  Tape& tape = *refs.tape();
  const std::size_t N = refs.dim(0), n = width / 4;
  Tensor freq({N, n});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k = 0; k < n; ++k) freq(i, k) = band_frequency(k, n);
  Var f = tape.constant(std::move(freq));
  std::vector<Var> parts;
  for (std::size_t axis = 0; axis < 2; ++axis) {
    Var phase = nd::mul(nd::broadcast_to(nd::slice(refs, 1, axis, axis + 1), {N, n}), f);
    parts.push_back(nd::sin(phase));
    parts.push_back(nd::cos(phase));
  }
  return nd::concat(parts, 1);
}

// ---------------------------------------------------------------------------
// Deformable attention

struct DeformAttnConfig {
  std::size_t channels = 256;
  std::size_t heads = 8;
  std::size_t levels = 3;
  std::size_t points = 4;
  Boundary boundary = Boundary::kZeros;
};

/// Offset projection starts at zero weight with biases placing the points of
/// head h on a ray at angle 2*pi*h/H, point p at distance p + 1 (pixels of
/// each level). Attention logits start uniform.
inline void init_deform_attn(ParameterStore& store, const std::string& prefix, const DeformAttnConfig& cfg,
                             Rng& rng) {
  const std::size_t C = cfg.channels, H = cfg.heads, L = cfg.levels, P = cfg.points;
  if (H == 0 || C % H != 0) throw std::invalid_argument("deform_attn: channels must be divisible by heads");
  init::linear(store, prefix + ".value", C, C, rng);
  store.add(prefix + ".offset.w", Tensor({C, H * L * P * 2}));
  Tensor ob({H * L * P * 2});
  for (std::size_t h = 0; h < H; ++h) {
    const double ang = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(H);
    double cx = std::cos(ang), cy = std::sin(ang);
    const double m = std::max(std::abs(cx), std::abs(cy));
    cx /= m;
    cy /= m;
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t p = 0; p < P; ++p) {
        const std::size_t i = ((h * L + l) * P + p) * 2;
        ob.data[i] = cx * static_cast<double>(p + 1);
        ob.data[i + 1] = cy * static_cast<double>(p + 1);
      }
  }
  store.add(prefix + ".offset.b", std::move(ob));
  store.add(prefix + ".attn.w", Tensor({C, H * L * P}));
  store.add(prefix + ".attn.b", Tensor({H * L * P}));
  init::linear(store, prefix + ".out", C, C, rng);
}

struct DeformAttnTrace {
  Tensor weights;    // [Nq, H, L * P], softmax-normalised per (query, head)
  Tensor locations;  // [Nq, H, L, P, 2]
};

/// Sampling locations for normalised refs [Nq, 2] plus pixel offsets
/// [Nq, H * L * P * 2].
inline Var sampling_locations(Tape& tape, const Var& refs, const Var& offsets, const std::vector<LevelShape>& levels,
                              std::size_t heads, std::size_t points) {
  const std::size_t Nq = refs.dim(0), L = levels.size();
  Shape full{Nq, heads, L, points, 2};
  Tensor scale(full);
  for (std::size_t q = 0; q < Nq; ++q)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t p = 0; p < points; ++p) {
          const std::size_t i = (((q * heads + h) * L + l) * points + p) * 2;
          scale.data[i] = static_cast<double>(levels[l].width);
          scale.data[i + 1] = static_cast<double>(levels[l].height);
        }
  Var base = nd::mul(nd::broadcast_to(nd::reshape(refs, {Nq, 1, 1, 1, 2}), full), tape.constant(std::move(scale)));
  return nd::add(nd::add_scalar(base, -0.5), nd::reshape(offsets, full));
}

/// queries: [Nq, C] (position embedding already added), refs: [Nq, 2]
/// normalised. Returns [Nq, C].
inline Var deform_attn(BoundParams& P, const std::string& prefix, const DeformAttnConfig& cfg, const Var& queries,
                       const Var& refs, const FeatureMapSet& memory, DeformAttnTrace* trace = nullptr) {
  Tape& tape = P.tape();
  const std::size_t C = cfg.channels, H = cfg.heads, L = cfg.levels, K = cfg.points;
  if (queries.shape().size() != 2 || queries.dim(1) != C) {
    throw nd::ShapeError("deform_attn", queries.shape(), Shape{0, C});
  }
  if (refs.shape() != Shape{queries.dim(0), 2}) throw nd::ShapeError("deform_attn", refs.shape(), Shape{queries.dim(0), 2});
  if (memory.levels.size() != L || memory.channels() != C) {
    throw nd::ShapeError("deform_attn", "memory has " + std::to_string(memory.levels.size()) + " levels x " +
                                            std::to_string(memory.channels()) + " channels; config expects " +
                                            std::to_string(L) + " x " + std::to_string(C));
  }
  const std::size_t Nq = queries.dim(0);
  Var value = apply_linear(P, prefix + ".value", memory.tokens);
  Var offsets = apply_linear(P, prefix + ".offset", queries);
  Var logits = nd::reshape(apply_linear(P, prefix + ".attn", queries), {Nq, H, L * K});
  Var weights = nd::softmax(logits, 2);
  Var locs = sampling_locations(tape, refs, offsets, memory.levels, H, K);
  if (trace) *trace = {weights.value(), locs.value()};
  Var sampled = deform_sample(value, memory.levels, locs, weights, H, cfg.boundary);
  return apply_linear(P, prefix + ".out", sampled);
}

// ---------------------------------------------------------------------------
// Dense multi-head self-attention (decoder queries only)

inline void init_self_attention(ParameterStore& store, const std::string& prefix, std::size_t C, Rng& rng) {
  for (const char* n : {".q", ".k", ".v", ".out"}) init::linear(store, prefix + n, C, C, rng);
}

/// Standard scaled dot-product attention; queries/keys from `qk`, values
/// from `v`. Optional trace receives each head's [N, N] weight matrix.
inline Var self_attention(BoundParams& P, const std::string& prefix, std::size_t heads, const Var& qk, const Var& v,
                          std::vector<Tensor>* trace = nullptr) {
  const std::size_t N = qk.dim(0), C = qk.dim(1);
  if (heads == 0 || C % heads != 0) throw nd::ShapeError("self_attention", "channels not divisible by heads");
  const std::size_t D = C / heads;
  Var q = apply_linear(P, prefix + ".q", qk);
  Var k = apply_linear(P, prefix + ".k", qk);
  Var val = apply_linear(P, prefix + ".v", v);
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = nd::slice(q, 1, h * D, (h + 1) * D);
    Var kh = nd::slice(k, 1, h * D, (h + 1) * D);
    Var vh = nd::slice(val, 1, h * D, (h + 1) * D);
    Var att = nd::softmax(nd::scale(nd::matmul(qh, nd::transpose(kh)), 1.0 / std::sqrt(static_cast<double>(D))), 1);
    if (trace) trace->push_back(att.value());
    outs.push_back(nd::matmul(att, vh));
  }
  (void)N;
  return apply_linear(P, prefix + ".out", heads == 1 ? outs[0] : nd::concat(outs, 1));
}

// ---------------------------------------------------------------------------
// Encoder / decoder layers (pre-norm, residual sublayers)

struct LayerConfig {
  std::size_t channels = 256;
  std::size_t heads = 8;
  std::size_t levels = 3;
  std::size_t points = 4;
  std::size_t ffn_hidden = 512;
  Boundary boundary = Boundary::kZeros;

  DeformAttnConfig deform() const { return {channels, heads, levels, points, boundary}; }
};

inline void init_ffn(ParameterStore& store, const std::string& prefix, std::size_t C, std::size_t hidden, Rng& rng) {
  init::linear(store, prefix + ".fc1", C, hidden, rng);
  init::linear(store, prefix + ".fc2", hidden, C, rng);
}

inline Var ffn(BoundParams& P, const std::string& prefix, const Var& x) {
  return apply_linear(P, prefix + ".fc2", nd::gelu(apply_linear(P, prefix + ".fc1", x)));
}

inline void init_encoder_layer(ParameterStore& store, const std::string& prefix, const LayerConfig& cfg, Rng& rng) {
  init::layer_norm(store, prefix + ".norm1", cfg.channels);
  init_deform_attn(store, prefix + ".attn", cfg.deform(), rng);
  init::layer_norm(store, prefix + ".norm2", cfg.channels);
  init_ffn(store, prefix + ".ffn", cfg.channels, cfg.ffn_hidden, rng);
}

/// tokens, pos: [N, C]; refs: [N, 2] normalised; memory: the (un-normalised)
/// maps the tokens attend into. In the model, memory holds the same tokens
/// in grid order.
inline Var encoder_layer(BoundParams& P, const std::string& prefix, const LayerConfig& cfg, const Var& tokens,
                         const Var& pos, const Var& refs, const FeatureMapSet& memory) {
  Var q = apply_layer_norm(P, prefix + ".norm1", tokens);
  FeatureMapSet normed{memory.levels, apply_layer_norm(P, prefix + ".norm1", memory.tokens)};
  Var x = nd::add(tokens, deform_attn(P, prefix + ".attn", cfg.deform(), nd::add(q, pos), refs, normed));
  return nd::add(x, ffn(P, prefix + ".ffn", apply_layer_norm(P, prefix + ".norm2", x)));
}

inline void init_decoder_layer(ParameterStore& store, const std::string& prefix, const LayerConfig& cfg, Rng& rng) {
  init::layer_norm(store, prefix + ".norm1", cfg.channels);
  init_self_attention(store, prefix + ".self", cfg.channels, rng);
  init::layer_norm(store, prefix + ".norm2", cfg.channels);
  init_deform_attn(store, prefix + ".cross", cfg.deform(), rng);
  init::layer_norm(store, prefix + ".norm3", cfg.channels);
  init_ffn(store, prefix + ".ffn", cfg.channels, cfg.ffn_hidden, rng);
}

/// queries, qpos: [Q, C]; refs: [Q, 2]; memory: encoder output.
inline Var decoder_layer(BoundParams& P, const std::string& prefix, const LayerConfig& cfg, const Var& queries,
                         const Var& qpos, const Var& refs, const FeatureMapSet& memory,
                         std::vector<Tensor>* self_trace = nullptr) {
  Var n1 = apply_layer_norm(P, prefix + ".norm1", queries);
  Var x = nd::add(queries, self_attention(P, prefix + ".self", cfg.heads, nd::add(n1, qpos), n1, self_trace));
  Var n2 = apply_layer_norm(P, prefix + ".norm2", x);
  x = nd::add(x, deform_attn(P, prefix + ".cross", cfg.deform(), nd::add(n2, qpos), refs, memory));
  return nd::add(x, ffn(P, prefix + ".ffn", apply_layer_norm(P, prefix + ".norm3", x)));
}

}  // namespace meshcrowd::attn
