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

// Pose and mesh error metrics (MPJPE, PA-MPJPE, PVE, joint PA-MPJPE), the
// similarity Procrustes solver behind them, and per-dataset reports.

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "meshcrowd/hungarian.hpp"
#include "meshcrowd/losses.hpp"
#include "meshcrowd/scene.hpp"

namespace meshcrowd::metrics {

using ndgrad::Tensor;

/// x -> s * R * x + d
struct SimilarityTransform {
  std::array<double, 9> R{1, 0, 0, 0, 1, 0, 0, 0, 1};
  std::array<double, 3> d{0, 0, 0};
  double s = 1.0;

  std::array<double, 3> apply(const double* x) const {
    std::array<double, 3> y{};
    for (int r = 0; r < 3; ++r) y[r] = s * (R[r * 3] * x[0] + R[r * 3 + 1] * x[1] + R[r * 3 + 2] * x[2]) + d[r];
    return y;
  }
  Tensor apply(const Tensor& X) const {
    Tensor out(X.shape);
    for (std::size_t i = 0; i < X.dim(0); ++i) {
      auto y = apply(X.data.data() + i * 3);
      std::copy(y.begin(), y.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * 3));
    }
    return out;
  }
};

inline constexpr double kMillimeters = 1000.0;

namespace detail {

inline Eigen::Matrix<double, Eigen::Dynamic, 3> as_matrix(const Tensor& X, const char* what) {
  if (X.rank() != 2 || X.dim(1) != 3) throw std::invalid_argument(std::string(what) + ": expected M x 3 points");
  Eigen::Matrix<double, Eigen::Dynamic, 3> m(X.dim(0), 3);
  for (std::size_t i = 0; i < X.dim(0); ++i)
    for (std::size_t c = 0; c < 3; ++c) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = X(i, c);
  return m;
}

inline void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape != b.shape || a.rank() != 2 || a.dim(1) != 3)
    throw std::invalid_argument(std::string(what) + ": point sets must share an M x 3 shape");
}

inline double mean_distance(const Tensor& a, const Tensor& b) {
  double sum = 0.0;
  const std::size_t n = a.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = a(i, 0) - b(i, 0), dy = a(i, 1) - b(i, 1), dz = a(i, 2) - b(i, 2);
    sum += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return sum / static_cast<double>(n);
}

inline Tensor subtract_point(const Tensor& X, const double* p) {
  Tensor out = X;
  for (std::size_t i = 0; i < X.dim(0); ++i)
    for (std::size_t c = 0; c < 3; ++c) out(i, c) -= p[c];
  return out;
}

}  // namespace detail

/// Least-squares similarity (or rigid, with_scale=false) alignment of P onto Q.
inline SimilarityTransform procrustes(const Tensor& P, const Tensor& Q, bool with_scale = true) {
  detail::check_same(P, Q, "procrustes");
  if (P.dim(0) < 3) throw std::invalid_argument("procrustes: need at least 3 points");
  auto p = detail::as_matrix(P, "procrustes");
  auto q = detail::as_matrix(Q, "procrustes");
  const Eigen::RowVector3d pm = p.colwise().mean(), qm = q.colwise().mean();
  p.rowwise() -= pm;
  q.rowwise() -= qm;

  Eigen::JacobiSVD<Eigen::Matrix<double, Eigen::Dynamic, 3>> rank_svd(p);
  const auto sv = rank_svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0))
    throw std::invalid_argument("procrustes: source points are degenerate (centered rank < 2)");

  const Eigen::Matrix3d H = q.transpose() * p;  // target x source
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d U = svd.matrixU(), V = svd.matrixV();
  Eigen::Vector3d flip(1.0, 1.0, (U * V.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
  const Eigen::Matrix3d R = U * flip.asDiagonal() * V.transpose();

  double s = 1.0;
  if (with_scale) s = svd.singularValues().dot(flip) / p.squaredNorm();
  const Eigen::Vector3d d = qm.transpose() - s * R * pm.transpose();

  SimilarityTransform out;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out.R[r * 3 + c] = R(r, c);
    out.d[r] = d(r);
  }
  out.s = s;
  return out;
}

/// Mean joint error after moving both root joints to the origin, in mm.
inline double mpjpe(const Tensor& X, const Tensor& X_gt, std::size_t root = 0) {
  detail::check_same(X, X_gt, "mpjpe");
  if (root >= X.dim(0)) throw std::invalid_argument("mpjpe: root index out of range");
  return kMillimeters * detail::mean_distance(detail::subtract_point(X, X.data.data() + root * 3),
                                              detail::subtract_point(X_gt, X_gt.data.data() + root * 3));
}

/// Mean joint error after the optimal similarity alignment of X onto X_gt, in mm.
inline double pa_mpjpe(const Tensor& X, const Tensor& X_gt) {
  return kMillimeters * detail::mean_distance(procrustes(X, X_gt).apply(X), X_gt);
}

/// Mean vertex error after subtracting each side's (regressed) root joint, in mm.
inline double pve(const Tensor& V, const Tensor& V_gt, const std::array<double, 3>& root,
                  const std::array<double, 3>& root_gt) {
  detail::check_same(V, V_gt, "pve");
  return kMillimeters *
         detail::mean_distance(detail::subtract_point(V, root.data()), detail::subtract_point(V_gt, root_gt.data()));
}

/// One Procrustes alignment over the concatenated joints of all matched
/// people, in mm. pairs hold (prediction index, ground-truth index).
inline double j_pa_mpjpe(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt,
                         const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("j_pa_mpjpe: no matched people");
  std::vector<double> a, b;
  for (auto [p, g] : pairs) {
    detail::check_same(pred.at(p), gt.at(g), "j_pa_mpjpe");
    a.insert(a.end(), pred[p].data.begin(), pred[p].data.end());
    b.insert(b.end(), gt[g].data.begin(), gt[g].data.end());
  }
  const std::size_t n = a.size() / 3;
  return pa_mpjpe(Tensor({n, 3}, std::move(a)), Tensor({n, 3}, std::move(b)));
}

// ---------------------------------------------------------------------------
// Scene evaluation

/// A predicted person, already run through the body model.
struct PredictedPerson {
  Tensor joints3d;  // K x 3
  Tensor vertices;  // V x 3
};

inline PredictedPerson predicted_person(const body::PersonState& s, const body::BodyTemplate& tmpl) {
  auto mj = body::mesh_for(s, tmpl);
  return {mj.joints, mj.vertices};
}

struct PersonMetrics {
  std::size_t prediction = 0;
  std::size_t gt = 0;
  double mpjpe = 0, pa_mpjpe = 0, pve = 0;
};

struct SceneMetrics {
  std::uint64_t id = 0;
  std::size_t num_gt = 0, num_pred = 0, missed = 0, spurious = 0;
  std::vector<PersonMetrics> people;  // in ground-truth order
  std::optional<double> j_pa_mpjpe;   // empty when nothing matched
};

/// Matches predictions to ground truth on 2D joint distance alone and scores
/// every matched pair. Unprojectable predictions cost kUnprojectableCost.
inline SceneMetrics evaluate_scene(const std::vector<PredictedPerson>& preds, const Scene& scene,
                                   const body::CameraIntrinsics& cam, std::size_t image_size, std::size_t root = 0) {
  SceneMetrics out;
  out.id = scene.id;
  out.num_gt = scene.people.size();
  out.num_pred = preds.size();
  const std::size_t G = scene.people.size(), N = preds.size();
  std::vector<double> cost(G * N);
  for (std::size_t p = 0; p < N; ++p) {
    bool projectable = true;
    for (std::size_t k = 0; k < preds[p].joints3d.dim(0); ++k) projectable = projectable && preds[p].joints3d(k, 2) > 1e-6;
    Tensor x2 = projectable ? body::project_points(preds[p].joints3d, cam) : Tensor();
    for (std::size_t g = 0; g < G; ++g) {
      const auto& gt = scene.people[g];
      cost[g * N + p] = projectable ? losses::joint_distance_2d(x2, gt.joints2d, gt.visibility, static_cast<double>(image_size))
                                    : losses::kUnprojectableCost;
    }
  }
  std::vector<int> assign = (G && N) ? hungarian(cost, G, N) : std::vector<int>(G, -1);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<Tensor> pj, gj;
  for (std::size_t g = 0; g < G; ++g) {
    if (assign[g] < 0) {
      ++out.missed;
      continue;
    }
    const auto p = static_cast<std::size_t>(assign[g]);
    const auto& gt = scene.people[g];
    const auto& pr = preds[p];
    PersonMetrics m;
    m.prediction = p;
    m.gt = g;
    m.mpjpe = mpjpe(pr.joints3d, gt.joints3d, root);
    m.pa_mpjpe = pa_mpjpe(pr.joints3d, gt.joints3d);
    m.pve = pve(pr.vertices, gt.vertices, {pr.joints3d(root, 0), pr.joints3d(root, 1), pr.joints3d(root, 2)},
                {gt.joints3d(root, 0), gt.joints3d(root, 1), gt.joints3d(root, 2)});
    out.people.push_back(m);
    pairs.emplace_back(pairs.size(), pairs.size());
    pj.push_back(pr.joints3d);
    gj.push_back(gt.joints3d);
  }
  out.spurious = N - out.people.size();
  if (!pairs.empty()) out.j_pa_mpjpe = j_pa_mpjpe(pj, gj, pairs);
  return out;
}

inline constexpr const char* kReportSchema = "meshcrowd-report/1";

struct MetricReport {
  std::vector<SceneMetrics> scenes;

  struct Aggregate {
    double mpjpe = 0, pa_mpjpe = 0, pve = 0, j_pa_mpjpe = 0;
    std::size_t matched = 0, missed = 0, spurious = 0;
    std::size_t scenes = 0, scenes_without_match = 0;
  };

  /// Person metrics average over matched people, J-PA-MPJPE over scenes with
  /// at least one match. Folded in scene order. Means are NaN when empty.
  Aggregate aggregate() const {
    Aggregate a;
    std::size_t jn = 0;
    for (const auto& s : scenes) {
      ++a.scenes;
      a.missed += s.missed;
      a.spurious += s.spurious;
      for (const auto& p : s.people) {
        ++a.matched;
        a.mpjpe += p.mpjpe;
        a.pa_mpjpe += p.pa_mpjpe;
        a.pve += p.pve;
      }
      if (s.j_pa_mpjpe) {
        ++jn;
        a.j_pa_mpjpe += *s.j_pa_mpjpe;
      } else {
        ++a.scenes_without_match;
      }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double m = static_cast<double>(a.matched);
    a.mpjpe = a.matched ? a.mpjpe / m : nan;
    a.pa_mpjpe = a.matched ? a.pa_mpjpe / m : nan;
    a.pve = a.matched ? a.pve / m : nan;
    a.j_pa_mpjpe = jn ? a.j_pa_mpjpe / static_cast<double>(jn) : nan;
    return a;
  }
};

namespace detail {
inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
}  // namespace detail

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : r.scenes) {
    nlohmann::json people = nlohmann::json::array();
    for (const auto& p : s.people)
      people.push_back({{"prediction", p.prediction},
                        {"gt", p.gt},
                        {"mpjpe_mm", p.mpjpe},
                        {"pa_mpjpe_mm", p.pa_mpjpe},
                        {"pve_mm", p.pve}});
    rows.push_back({{"id", s.id},
                    {"num_gt", s.num_gt},
                    {"num_pred", s.num_pred},
                    {"matched", s.people.size()},
                    {"missed", s.missed},
                    {"spurious", s.spurious},
                    {"j_pa_mpjpe_mm", s.j_pa_mpjpe ? nlohmann::json(*s.j_pa_mpjpe) : nlohmann::json(nullptr)},
                    {"people", people}});
  }
  const auto a = r.aggregate();
  return {{"schema", kReportSchema},
          {"aggregate",
           {{"mpjpe_mm", detail::number_or_null(a.mpjpe)},
            {"pa_mpjpe_mm", detail::number_or_null(a.pa_mpjpe)},
            {"pve_mm", detail::number_or_null(a.pve)},
            {"j_pa_mpjpe_mm", detail::number_or_null(a.j_pa_mpjpe)},
            {"matched", a.matched},
            {"missed", a.missed},
            {"spurious", a.spurious},
            {"scenes", a.scenes},
            {"scenes_without_match", a.scenes_without_match}}},
          {"scenes", rows}};
}

}  // namespace meshcrowd::metrics
