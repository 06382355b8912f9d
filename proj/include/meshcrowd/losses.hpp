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

// Query matching and training losses. All L1-type terms are means.

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "meshcrowd/hungarian.hpp"
#include "meshcrowd/pipeline.hpp"
#include "meshcrowd/scene.hpp"

namespace meshcrowd::losses {

namespace nd = meshcrowd::ndgrad;
using nd::Shape;
using nd::Tape;
using nd::Tensor;
using nd::Var;

inline constexpr double kDegenerateNorm = 1e-8;

struct LossWeights {
  double l3d = 5.0;
  double l2d = 5.0;
  double smpl = 1.0;
  double rt = 1.0;
  double rt_dir = 1.0;  // weight of the directional term inside the relative loss
  double presence = 1.0;

  void validate() const {
    for (double w : {l3d, l2d, smpl, rt, rt_dir, presence})
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
  }
};

inline nlohmann::json to_json(const LossWeights& w) {
  return {{"l3d", w.l3d}, {"l2d", w.l2d},       {"smpl", w.smpl},
          {"rt", w.rt},   {"rt_dir", w.rt_dir}, {"presence", w.presence}};
}

inline LossWeights loss_weights_from_json(const nlohmann::json& j) {
  check_keys(j, {"l3d", "l2d", "smpl", "rt", "rt_dir", "presence"}, "loss_weights");
  LossWeights w;
  try {
    w.l3d = j.value("l3d", w.l3d);
    w.l2d = j.value("l2d", w.l2d);
    w.smpl = j.value("smpl", w.smpl);
    w.rt = j.value("rt", w.rt);
    w.rt_dir = j.value("rt_dir", w.rt_dir);
    w.presence = j.value("presence", w.presence);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("loss_weights: ") + e.what());
  }
  w.validate();
  return w;
}

// ---------------------------------------------------------------------------
// Matching

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (query, gt), ordered by gt index
  std::vector<std::size_t> unmatched_queries;

  bool is_matched(std::size_t q) const {
    return std::any_of(pairs.begin(), pairs.end(), [q](const auto& p) { return p.first == q; });
  }
};

/// Mean Euclidean distance between two K x 2 joint sets over visible joints
/// (all joints if none is visible), divided by the image size.
inline double joint_distance_2d(const Tensor& a, const Tensor& b, const Tensor& vis, double image_size) {
  const std::size_t K = b.dim(0);
  double sum = 0.0, n = 0.0;
  bool any = false;
  for (std::size_t k = 0; k < K; ++k) any = any || vis.data[k] > 0.5;
  for (std::size_t k = 0; k < K; ++k) {
    if (any && vis.data[k] <= 0.5) continue;
    sum += std::hypot(a(k, 0) - b(k, 0), a(k, 1) - b(k, 1));
    n += 1.0;
  }
  return sum / n / image_size;
}

inline constexpr double kUnprojectableCost = 1e6;

/// pred2d[q] is the projected K x 2 joints of query q, or an empty tensor when
/// the query's joints are not in front of the camera.
inline MatchResult match(const std::vector<Tensor>& pred2d, const std::vector<double>& presence_logits,
                         const std::vector<PersonGT>& gt, double image_size, double presence_weight) {
  const std::size_t Q = pred2d.size(), n = gt.size();
  if (n > Q) {
    throw std::invalid_argument("match: " + std::to_string(n) + " people but only " + std::to_string(Q) +
                                " queries; raise the query count");
  }
  if (presence_logits.size() != Q) throw std::invalid_argument("match: presence count != query count");
  std::vector<double> cost(Q * n);
  for (std::size_t q = 0; q < Q; ++q)
    for (std::size_t i = 0; i < n; ++i) {
      const double c2d = pred2d[q].size() == 0 ? kUnprojectableCost
                                               : joint_distance_2d(pred2d[q], gt[i].joints2d, gt[i].visibility, image_size);
      cost[q * n + i] = c2d + presence_weight * (1.0 - nd::sigmoid_scalar(presence_logits[q]));
    }
  auto assign = hungarian(cost, Q, n);
  MatchResult r;
  for (std::size_t q = 0; q < Q; ++q) {
    if (assign[q] >= 0) {
      r.pairs.emplace_back(q, static_cast<std::size_t>(assign[q]));
    } else {
      r.unmatched_queries.push_back(q);
    }
  }
  std::sort(r.pairs.begin(), r.pairs.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  return r;
}

/// Projected joints per query, empty where any joint has z <= 1e-6.
inline std::vector<Tensor> project_queries(const std::vector<Tensor>& joints3d, const body::CameraIntrinsics& cam) {
  std::vector<Tensor> out;
  for (const auto& j : joints3d) {
    bool ok = true;
    for (std::size_t k = 0; k < j.dim(0); ++k) ok = ok && j(k, 2) > 1e-6;
    out.push_back(ok ? body::project_points(j, cam) : Tensor(Shape{0}));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss terms

inline Var mean_abs_diff(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) throw nd::ShapeError(op, a.shape(), b.shape());
  return nd::mean(nd::abs(nd::sub(a, b)));
}

/// Mean absolute coordinate error between predicted and target joints.
inline Var loss_3d(const Var& X, const Var& X_gt) { return mean_abs_diff("loss_3d", X, X_gt); }

struct Loss2DInput {
  Var joints3d;      // K x 3 prediction
  Tensor joints2d;   // K x 2 target
  Tensor visibility; // K
};

/// Mean over visible joints of (|du| + |dv|) / (2 * image_size). People with a
/// joint at z <= 1e-6 are skipped and counted in `skipped`.
inline Var loss_2d(Tape& tape, const std::vector<Loss2DInput>& people, const body::CameraIntrinsics& cam,
                   double image_size, int* skipped = nullptr) {
  Var total;
  double nvis = 0.0;
  for (const auto& p : people) {
    const std::size_t K = p.joints3d.dim(0);
    if (p.joints2d.shape != Shape{K, 2} || p.visibility.shape != Shape{K}) {
      throw nd::ShapeError("loss_2d", p.joints2d.shape, Shape{K, 2});
    }
    bool ok = true;
    for (std::size_t k = 0; k < K; ++k) ok = ok && p.joints3d.value()(k, 2) > 1e-6;
    if (!ok) {
      if (skipped) ++*skipped;
      continue;
    }
    Tensor mask({K, 2});
    for (std::size_t k = 0; k < K; ++k) {
      mask(k, 0) = mask(k, 1) = p.visibility.data[k] > 0.5 ? 1.0 : 0.0;
      nvis += mask(k, 0);
    }
    Var err = nd::sum(nd::mul(nd::abs(nd::sub(body::project(p.joints3d, cam), tape.constant(p.joints2d))),
                              tape.constant(std::move(mask))));
    total = total.valid() ? nd::add(total, err) : err;
  }
  if (nvis == 0.0) return tape.scalar(0.0);
  return nd::scale(total, 1.0 / (2.0 * nvis * image_size));
}

/// Mean absolute error over rotation entries plus mean absolute error over
/// shape coefficients.
inline Var loss_smpl(const Var& theta, const Var& beta, const Var& theta_gt, const Var& beta_gt) {
  return nd::add(mean_abs_diff("loss_smpl", theta, theta_gt), mean_abs_diff("loss_smpl", beta, beta_gt));
}

/// D[c, i, j] = X[i, c] - X[j, c] for X: N x 3. Returns 3 x N x N.
inline Var displacement_matrix(const Var& X) {
  if (X.shape().size() != 2 || X.dim(1) != 3 || X.dim(0) == 0) {
    throw nd::ShapeError("displacement_matrix", "expects N x 3 joints, got " + nd::to_string(X.shape()));
  }
  const std::size_t N = X.dim(0);
  Var Xt = nd::transpose(X);
  return nd::sub(nd::broadcast_to(nd::reshape(Xt, {3, N, 1}), {3, N, N}),
                 nd::broadcast_to(nd::reshape(Xt, {3, 1, N}), {3, N, N}));
}

inline Tensor off_diagonal_mask(std::size_t N) {
  Tensor m({N, N}, 1.0);
  for (std::size_t i = 0; i < N; ++i) m(i, i) = 0.0;
  return m;
}

/// Mean |(|D| - |D*|)| over off-diagonal entries.
inline Var loss_rt_distance(const Var& D, const Var& D_gt) {
  if (D.shape() != D_gt.shape() || D.shape().size() != 3 || D.dim(0) != 3) {
    throw nd::ShapeError("loss_rt_distance", D.shape(), D_gt.shape());
  }
  Tape& tape = *D.tape();
  const std::size_t N = D.dim(1);
  if (N < 2) return tape.scalar(0.0);
  Var diff = nd::abs(nd::sub(nd::norm_axis(D, 0), nd::norm_axis(D_gt, 0)));
  return nd::scale(nd::sum(nd::mul(diff, tape.constant(off_diagonal_mask(N)))),
                   1.0 / static_cast<double>(N * (N - 1)));
}

/// 1 - mean cosine between D and D* over pairs where both displacements have
/// norm > 1e-8. With no such pair the loss is 0 and `degenerate` is set.
inline Var loss_rt_directional(const Var& D, const Var& D_gt, bool* degenerate = nullptr) {
  if (D.shape() != D_gt.shape() || D.shape().size() != 3 || D.dim(0) != 3) {
    throw nd::ShapeError("loss_rt_directional", D.shape(), D_gt.shape());
  }
  Tape& tape = *D.tape();
  const std::size_t N = D.dim(1);
  Var n = nd::norm_axis(D, 0), ng = nd::norm_axis(D_gt, 0);
  Tensor valid({N, N}), pad({N, N});
  double count = 0.0;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      const bool v = i != j && n.value()(i, j) > kDegenerateNorm && ng.value()(i, j) > kDegenerateNorm;
      valid(i, j) = v ? 1.0 : 0.0;
      pad(i, j) = v ? 0.0 : 1.0;
      count += valid(i, j);
    }
  if (degenerate) *degenerate = count == 0.0;
  if (count == 0.0) return tape.scalar(0.0);
  Var padv = tape.constant(std::move(pad));
  Var dot = nd::sum_axis(nd::mul(D, D_gt), 0);
  Var denom = nd::mul(nd::add(n, padv), nd::add(ng, padv));
  Var cos = nd::mul(nd::div(dot, denom), tape.constant(std::move(valid)));
  return nd::add_scalar(nd::scale(nd::sum(cos), -1.0 / count), 1.0);
}

/// Binary cross-entropy on presence logits: matched queries target 1,
/// the rest 0; mean over queries.
inline Var loss_presence(const Var& logits, const MatchResult& m) {
  Tape& tape = *logits.tape();
  const std::size_t Q = logits.size();
  Tensor sign({Q}, 1.0);  // softplus(x) for target 0, softplus(-x) for target 1
  for (const auto& [q, i] : m.pairs) {
    if (q >= Q) throw std::out_of_range("loss_presence: query index out of range");
    sign.data[q] = -1.0;
  }
  return nd::mean(nd::softplus(nd::mul(nd::reshape(logits, {Q}), tape.constant(std::move(sign)))));
}

struct LossTerms {
  Var l3d, l2d, smpl, rt_distance, rt_directional, presence;
};

inline Var loss_total(const LossTerms& t, const LossWeights& w) {
  Var rt = nd::add(t.rt_distance, nd::scale(t.rt_directional, w.rt_dir));
  Var out = nd::scale(t.l3d, w.l3d);
  out = nd::add(out, nd::scale(t.l2d, w.l2d));
  out = nd::add(out, nd::scale(t.smpl, w.smpl));
  out = nd::add(out, nd::scale(rt, w.rt));
  return nd::add(out, nd::scale(t.presence, w.presence));
}

// ---------------------------------------------------------------------------
// Whole-scene loss

struct SceneLoss {
  LossTerms terms;
  Var total;
  MatchResult match;
  int skipped_2d = 0;
  bool rt_degenerate = false;
};

/// Matches queries to people, runs the body model for matched queries and
/// evaluates every term on the matched set, ordered by ground-truth index.
inline SceneLoss scene_loss(Tape& tape, const body::BodyTemplate& tmpl, const body::CameraIntrinsics& cam,
                            double image_size, const model::Predictions& preds, const Scene& scene,
                            const LossWeights& w) {
  const std::size_t Q = preds.num_queries();
  std::vector<body::BodyOutput> bodies;
  std::vector<Tensor> joints;
  for (std::size_t q = 0; q < Q; ++q) {
    bodies.push_back(model::query_body(tape, tmpl, preds, q));
    joints.push_back(bodies.back().joints.value());
  }
  SceneLoss out;
  out.match = match(project_queries(joints, cam), preds.presence.value().data, scene.people, image_size, w.presence);

  std::vector<Var> X, Xg, th, thg, be, beg;
  std::vector<Loss2DInput> in2d;
  for (const auto& [q, i] : out.match.pairs) {
    const PersonGT& g = scene.people[i];
    X.push_back(bodies[q].joints);
    Xg.push_back(tape.constant(g.joints3d));
    th.push_back(nd::slice(preds.rotations, 0, q, q + 1));
    thg.push_back(tape.constant(Tensor(Shape{1, g.rotations.dim(0), 3, 3}, g.rotations.data)));
    be.push_back(nd::slice(preds.beta, 0, q, q + 1));
    beg.push_back(tape.constant(Tensor(Shape{1, g.beta.size()}, g.beta.data)));
    in2d.push_back({bodies[q].joints, g.joints2d, g.visibility});
  }
  if (X.empty()) {
    Var zero = tape.scalar(0.0);
    out.terms = {zero, zero, zero, zero, zero, loss_presence(preds.presence, out.match)};
    out.total = loss_total(out.terms, w);
    return out;
  }
  Var Xall = nd::concat(X, 0), Xgall = nd::concat(Xg, 0);
  out.terms.l3d = loss_3d(Xall, Xgall);
  out.terms.l2d = loss_2d(tape, in2d, cam, image_size, &out.skipped_2d);
  out.terms.smpl = loss_smpl(nd::concat(th, 0), nd::concat(be, 0), nd::concat(thg, 0), nd::concat(beg, 0));
  Var D = displacement_matrix(Xall), Dg = displacement_matrix(Xgall);
  out.terms.rt_distance = loss_rt_distance(D, Dg);
  out.terms.rt_directional = loss_rt_directional(D, Dg, &out.rt_degenerate);
  out.terms.presence = loss_presence(preds.presence, out.match);
  out.total = loss_total(out.terms, w);
  return out;
}

}  // namespace meshcrowd::losses
