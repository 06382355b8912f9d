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

// SMPL-style parametric body: shape blendshapes, forward kinematics over a
// joint tree, linear blend skinning, linear joint regression and a pinhole
// camera. Pose-corrective blendshapes are not modelled.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "meshcrowd/ndgrad.hpp"
#include "meshcrowd/rng.hpp"

namespace meshcrowd::body {

namespace nd = meshcrowd::ndgrad;
using nd::Shape;
using nd::Tape;
using nd::Tensor;
using nd::Var;

inline constexpr const char* kTemplateSchema = "body-template/1";

/// Rest-pose body definition. Units are meters in a camera-aligned frame
/// (x right, y down, z forward), so an upright body points its head to -y.
struct BodyTemplate {
  Tensor vertices;      // V x 3
  std::vector<int> parents;  // K, -1 for the root
  Tensor rest_joints;   // K x 3
  Tensor shape_dirs;    // B x V x 3
  Tensor weights;       // V x K skinning weights
  Tensor regressor;     // V x K joint regressor
  std::vector<std::array<int, 3>> faces;
  std::vector<std::string> joint_names;

  std::size_t num_vertices() const { return vertices.dim(0); }
  std::size_t num_joints() const { return parents.size(); }
  std::size_t num_betas() const { return shape_dirs.dim(0); }

  /// Throws std::invalid_argument naming the first violated invariant.
  void validate() const;
};

struct TemplateConfig {
  std::size_t num_joints = 8;  // 1..8, prefix of the default skeleton
  std::size_t ring_size = 4;   // vertices per cross-section ring; V = 2 * ring * K
  std::size_t num_betas = 4;
};

struct CameraIntrinsics {
  double focal = 500.0;
  double cx = 0.0;
  double cy = 0.0;

  static CameraIntrinsics for_image(std::size_t image_size, double focal = 500.0) {
    return {focal, image_size / 2.0, image_size / 2.0};
  }
  void validate() const {
    if (!(focal > 0.0)) throw std::invalid_argument("camera: focal length must be positive");
  }
};

/// Pose, shape and placement of one person. rotations: K x 3 x 3, local to
/// each joint's parent frame; beta: B; translation in the camera frame.
struct PersonState {
  Tensor rotations;
  Tensor beta;
  std::array<double, 3> translation{0.0, 0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Procedural template

namespace detail {

struct BoneSpec {
  const char* name;
  int parent;
  std::array<double, 3> joint;
  std::array<double, 3> end;
  double radius;
};

inline const std::array<BoneSpec, 8>& default_skeleton() {
  static const std::array<BoneSpec, 8> bones{{
      {"pelvis", -1, {0.0, 0.0, 0.0}, {0.0, -0.25, 0.0}, 0.12},
      {"spine", 0, {0.0, -0.25, 0.0}, {0.0, -0.45, 0.0}, 0.11},
      {"head", 1, {0.0, -0.55, 0.0}, {0.0, -0.80, 0.0}, 0.09},
      {"l_shoulder", 1, {0.18, -0.45, 0.0}, {0.45, -0.45, 0.0}, 0.05},
      {"l_elbow", 3, {0.45, -0.45, 0.0}, {0.70, -0.45, 0.0}, 0.04},
      {"r_shoulder", 1, {-0.18, -0.45, 0.0}, {-0.45, -0.45, 0.0}, 0.05},
      {"r_elbow", 5, {-0.45, -0.45, 0.0}, {-0.70, -0.45, 0.0}, 0.04},
      {"legs", 0, {0.0, 0.05, 0.0}, {0.0, 0.95, 0.0}, 0.14},
  }};
  return bones;
}

inline std::array<double, 3> normalized(std::array<double, 3> v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

inline std::array<double, 3> cross(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

}  // namespace detail

/// Builds a humanoid template with one box-like segment per joint. The
/// regressor places each joint at the centroid of its segment's proximal
/// ring, which is centred on the rest joint, so regressing the rest mesh
/// reproduces the rest joints.
inline BodyTemplate make_template(const TemplateConfig& cfg = {}) {
  const auto& bones = detail::default_skeleton();
  if (cfg.num_joints < 1 || cfg.num_joints > bones.size()) {
    throw std::invalid_argument("template: num_joints must be in [1, 8]");
  }
  if (cfg.ring_size < 3) throw std::invalid_argument("template: ring_size must be >= 3");
  const std::size_t K = cfg.num_joints;
  const std::size_t R = cfg.ring_size;
  const std::size_t V = 2 * R * K;
  const std::size_t B = cfg.num_betas;

  BodyTemplate t;
  t.vertices = Tensor({V, 3});
  t.rest_joints = Tensor({K, 3});
  t.shape_dirs = Tensor({B, V, 3});
  t.weights = Tensor({V, K});
  t.regressor = Tensor({V, K});

  Rng rng(0x5eedb0d1ULL);
  std::vector<std::array<double, 3>> extra_dirs(K * (B > 4 ? B - 4 : 0));
  for (auto& d : extra_dirs) d = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};

  for (std::size_t j = 0; j < K; ++j) {
    const auto& bone = bones[j];
    t.parents.push_back(bone.parent);
    t.joint_names.emplace_back(bone.name);
    for (int c = 0; c < 3; ++c) t.rest_joints(j, c) = bone.joint[c];

    const auto axis = detail::normalized(
        {bone.end[0] - bone.joint[0], bone.end[1] - bone.joint[1], bone.end[2] - bone.joint[2]});
    const std::array<double, 3> ref = std::abs(axis[2]) < 0.9 ? std::array<double, 3>{0, 0, 1}
                                                                : std::array<double, 3>{1, 0, 0};
    const auto u = detail::normalized(detail::cross(axis, ref));
    const auto w = detail::cross(axis, u);

    for (std::size_t ring = 0; ring < 2; ++ring) {
      const auto& center = ring == 0 ? bone.joint : bone.end;
      for (std::size_t k = 0; k < R; ++k) {
        const std::size_t v = (j * 2 + ring) * R + k;
        const double ang = 2.0 * 3.14159265358979323846 * (static_cast<double>(k) + 0.5) /
                           static_cast<double>(R);
        std::array<double, 3> radial{};
        for (int c = 0; c < 3; ++c) {
          radial[c] = std::cos(ang) * u[c] + std::sin(ang) * w[c];
          t.vertices(v, c) = center[c] + bone.radius * radial[c];
        }
        // skinning: proximal ring blends with the parent bone
        if (ring == 0 && bone.parent >= 0) {
          t.weights(v, j) = 0.6;
          t.weights(v, static_cast<std::size_t>(bone.parent)) = 0.4;
        } else {
          t.weights(v, j) = 1.0;
        }
        if (ring == 0) t.regressor(v, j) = 1.0 / static_cast<double>(R);

        // shape basis: size, height, girth, shoulder width, then seeded extras
        for (std::size_t b = 0; b < B; ++b) {
          std::array<double, 3> d{};
          const double* p = &t.vertices.data[v * 3];
          switch (b) {
            case 0: d = {0.05 * p[0], 0.05 * p[1], 0.05 * p[2]}; break;
            case 1: d = {0.0, 0.06 * p[1], 0.0}; break;
            case 2: d = {0.015 * radial[0], 0.015 * radial[1], 0.015 * radial[2]}; break;
            case 3:
              if (j >= 3 && j <= 6) d = {bone.joint[0] > 0 ? 0.025 : -0.025, 0.0, 0.0};
              break;
            default: {
              const auto& e = extra_dirs[j * (B - 4) + (b - 4)];
              d = {0.01 * e[0], 0.01 * e[1], 0.01 * e[2]};
            }
          }
          for (int c = 0; c < 3; ++c) t.shape_dirs(b, v, c) = d[c];
        }
      }
    }
    // faces: side quads between the rings plus a fan cap on each end
    const int base = static_cast<int>(j * 2 * R);
    const int r = static_cast<int>(R);
    for (int k = 0; k < r; ++k) {
      const int a0 = base + k, a1 = base + (k + 1) % r;
      const int b0 = base + r + k, b1 = base + r + (k + 1) % r;
      t.faces.push_back({a0, b0, b1});
      t.faces.push_back({a0, b1, a1});
    }
    for (int k = 1; k + 1 < r; ++k) {
      t.faces.push_back({base, base + k + 1, base + k});
      t.faces.push_back({base + r, base + r + k, base + r + k + 1});
    }
  }
  // parents precede children in the default skeleton, so any prefix is a tree
  t.validate();
  return t;
}

inline void BodyTemplate::validate() const {
  const std::size_t V = num_vertices();
  const std::size_t K = num_joints();
  if (vertices.shape != Shape{V, 3}) throw std::invalid_argument("template: vertices must be V x 3");
  if (rest_joints.shape != Shape{K, 3}) throw std::invalid_argument("template: rest joints must be K x 3");
  if (shape_dirs.rank() != 3 || shape_dirs.dim(1) != V || shape_dirs.dim(2) != 3) {
    throw std::invalid_argument("template: shape_dirs must be B x V x 3");
  }
  if (weights.shape != Shape{V, K}) throw std::invalid_argument("template: weights must be V x K");
  if (regressor.shape != Shape{V, K}) throw std::invalid_argument("template: regressor must be V x K");
  if (K == 0 || parents[0] != -1) throw std::invalid_argument("template: joint 0 must be the root");
  for (std::size_t j = 1; j < K; ++j) {
    if (parents[j] < 0 || static_cast<std::size_t>(parents[j]) >= j) {
      throw std::invalid_argument("template: parent index must precede child (joint " +
                                  std::to_string(j) + ")");
    }
  }
  for (std::size_t v = 0; v < V; ++v) {
    double s = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      if (weights(v, j) < 0.0) throw std::invalid_argument("template: negative skinning weight");
      s += weights(v, j);
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw std::invalid_argument("template: skinning weights of vertex " + std::to_string(v) +
                                  " do not sum to 1");
    }
  }
  for (std::size_t j = 0; j < K; ++j) {
    double s = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      if (regressor(v, j) < 0.0) throw std::invalid_argument("template: negative regressor weight");
      s += regressor(v, j);
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw std::invalid_argument("template: regressor column " + std::to_string(j) +
                                  " does not sum to 1");
    }
  }
  for (const auto& f : faces) {
    for (int idx : f) {
      if (idx < 0 || static_cast<std::size_t>(idx) >= V) {
        throw std::invalid_argument("template: face index out of range");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Differentiable forward pieces

/// T + sum_b beta_b S_b. beta: [B].
inline Var shape_mesh(Tape& tape, const BodyTemplate& tmpl, const Var& beta) {
  const std::size_t B = tmpl.num_betas();
  const std::size_t V = tmpl.num_vertices();
  if (beta.shape() != Shape{B}) {
    throw nd::ShapeError("shape_mesh", "beta has shape " + nd::to_string(beta.shape()) +
                                           ", template expects [" + std::to_string(B) + "]");
  }
  Var dirs = tape.constant(Tensor({B, V * 3}, tmpl.shape_dirs.data));
  Var offset = nd::reshape(nd::matmul(nd::reshape(beta, {1, B}), dirs), {V, 3});
  return nd::add(tape.constant(tmpl.vertices), offset);
}

/// X = Jreg^T M for a V x 3 mesh.
inline Var regress_joints(Tape& tape, const Var& mesh, const Tensor& regressor) {
  if (mesh.shape().size() != 2 || mesh.dim(1) != 3 || regressor.rank() != 2 ||
      regressor.dim(0) != mesh.dim(0)) {
    throw nd::ShapeError("regress_joints", mesh.shape(), regressor.shape);
  }
  Tensor jt({regressor.dim(1), regressor.dim(0)});
  for (std::size_t v = 0; v < regressor.dim(0); ++v)
    for (std::size_t j = 0; j < regressor.dim(1); ++j) jt(j, v) = regressor(v, j);
  return nd::matmul(tape.constant(std::move(jt)), mesh);
}

/// Max deviation of R^T R from identity and of det R from 1.
inline double rotation_error(const double* r) {
  double err = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += r[k * 3 + i] * r[k * 3 + j];
      err = std::max(err, std::abs(s - (i == j ? 1.0 : 0.0)));
    }
  const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                     r[2] * (r[3] * r[7] - r[4] * r[6]);
  return std::max(err, std::abs(det - 1.0));
}

/// Forward kinematics + linear blend skinning. rest: V x 3, rotations:
/// K x 3 x 3 (local). Joint centres come from regressing the rest mesh.
inline Var pose_mesh(Tape& tape, const BodyTemplate& tmpl, const Var& rest, const Var& rotations,
                     double rotation_tol = 1e-4) {
  const std::size_t K = tmpl.num_joints();
  const std::size_t V = tmpl.num_vertices();
  if (rotations.shape() != Shape{K, 3, 3}) {
    throw nd::ShapeError("pose_mesh", rotations.shape(), Shape{K, 3, 3});
  }
  if (rest.shape() != Shape{V, 3}) throw nd::ShapeError("pose_mesh", rest.shape(), Shape{V, 3});
  for (std::size_t j = 0; j < K; ++j) {
    if (rotation_error(&rotations.value().data[j * 9]) > rotation_tol) {
      throw std::invalid_argument("pose_mesh: rotation of joint " + std::to_string(j) +
                                  " is not orthonormal with det +1");
    }
  }
  Var joints = regress_joints(tape, rest, tmpl.regressor);
  std::vector<Var> joint_rows(K), global_rot(K), global_trans(K);
  for (std::size_t j = 0; j < K; ++j) joint_rows[j] = nd::slice(joints, 0, j, j + 1);  // 1 x 3
  for (std::size_t j = 0; j < K; ++j) {
    Var local = nd::reshape(nd::slice(rotations, 0, j, j + 1), {3, 3});
    const int p = tmpl.parents[j];
    if (p < 0) {
      global_rot[j] = local;
      global_trans[j] = joint_rows[j];
    } else {
      const auto pi = static_cast<std::size_t>(p);
      global_rot[j] = nd::matmul(global_rot[pi], local);
      // row-vector form: t_j = (J_j - J_p) R_p^T + t_p
      Var bone = nd::sub(joint_rows[j], joint_rows[pi]);
      global_trans[j] = nd::add(nd::matmul(bone, nd::transpose(global_rot[pi])), global_trans[pi]);
    }
  }
  Var posed;
  for (std::size_t j = 0; j < K; ++j) {
    Tensor w({V, 1});
    bool any = false;
    for (std::size_t v = 0; v < V; ++v) {
      w.data[v] = tmpl.weights(v, j);
      any = any || w.data[v] != 0.0;
    }
    if (!any) continue;
    Var centered = nd::sub(rest, nd::broadcast_to(joint_rows[j], {V, 3}));
    Var moved = nd::add(nd::matmul(centered, nd::transpose(global_rot[j])),
                        nd::broadcast_to(global_trans[j], {V, 3}));
    Var term = nd::mul(moved, nd::broadcast_to(tape.constant(std::move(w)), {V, 3}));
    posed = posed.valid() ? nd::add(posed, term) : term;
  }
  return posed;
}

/// Pinhole projection of P x 3 camera-frame points to P x 2 pixels.
inline Var project(const Var& points, const CameraIntrinsics& cam) {
  cam.validate();
  if (points.shape().size() != 2 || points.dim(1) != 3) {
    throw nd::ShapeError("project", "expects P x 3 points, got " + nd::to_string(points.shape()));
  }
  const std::size_t P = points.dim(0);
  const Tensor& pv = points.value();
  Tensor out({P, 2});
  for (std::size_t i = 0; i < P; ++i) {
    const double z = pv(i, 2);
    if (!(z > 1e-6)) {
      throw std::domain_error("project: point " + std::to_string(i) + " has depth " +
                              std::to_string(z) + " (must be > 1e-6)");
    }
    out(i, 0) = cam.focal * pv(i, 0) / z + cam.cx;
    out(i, 1) = cam.focal * pv(i, 1) / z + cam.cy;
  }
  nd::VarId pi = points.id();
  const double f = cam.focal;
  return points.tape()->record("project", {pi}, std::move(out),
                               [pi, P, f](Tape& t, nd::VarId, const Tensor& g) {
                                 Tensor* gp = t.grad_of(pi);
                                 if (!gp) return;
                                 const Tensor& pv = t.value(pi);
                                 for (std::size_t i = 0; i < P; ++i) {
                                   const double x = pv(i, 0), y = pv(i, 1), z = pv(i, 2);
                                   const double gu = g(i, 0), gv = g(i, 1);
                                   (*gp)(i, 0) += gu * f / z;
                                   (*gp)(i, 1) += gv * f / z;
                                   (*gp)(i, 2) -= (gu * x + gv * y) * f / (z * z);
                                 }
                               });
}

/// Gram-Schmidt map from N x 6 (two column vectors) to N x 3 x 3 rotations
/// whose columns are (b1, b2, b1 x b2).
inline Var rot6d_to_matrix(const Var& r6) {
  if (r6.shape().size() != 2 || r6.dim(1) != 6) {
    throw nd::ShapeError("rot6d_to_matrix", "expects N x 6, got " + nd::to_string(r6.shape()));
  }
  const std::size_t N = r6.dim(0);
  Var a1 = nd::slice(r6, 1, 0, 3);
  Var a2 = nd::slice(r6, 1, 3, 6);
  auto expand = [N](const Var& v) { return nd::broadcast_to(nd::reshape(v, {N, 1}), {N, 3}); };

  Var n1 = nd::norm_axis(a1, 1);
  for (double v : n1.value().data) {
    if (!(v > 1e-8)) throw std::domain_error("rot6d_to_matrix: first vector is degenerate");
  }
  Var b1 = nd::div(a1, expand(n1));
  Var proj = nd::sum_axis(nd::mul(b1, a2), 1);
  Var u2 = nd::sub(a2, nd::mul(expand(proj), b1));
  Var n2 = nd::norm_axis(u2, 1);
  for (double v : n2.value().data) {
    if (!(v > 1e-8)) throw std::domain_error("rot6d_to_matrix: vectors are near-parallel");
  }
  Var b2 = nd::div(u2, expand(n2));
  auto col = [](const Var& v, std::size_t c) { return nd::slice(v, 1, c, c + 1); };
  Var b3 = nd::concat({nd::sub(nd::mul(col(b1, 1), col(b2, 2)), nd::mul(col(b1, 2), col(b2, 1))),
                       nd::sub(nd::mul(col(b1, 2), col(b2, 0)), nd::mul(col(b1, 0), col(b2, 2))),
                       nd::sub(nd::mul(col(b1, 0), col(b2, 1)), nd::mul(col(b1, 1), col(b2, 0)))},
                      1);
  return nd::concat({nd::reshape(b1, {N, 3, 1}), nd::reshape(b2, {N, 3, 1}), nd::reshape(b3, {N, 3, 1})},
                    2);
}

// ---------------------------------------------------------------------------
// Whole-body convenience

struct BodyOutput {
  Var vertices;  // V x 3, camera frame
  Var joints;    // K x 3, camera frame
};

/// Camera-frame mesh and joints from differentiable parameters.
/// rotations: K x 3 x 3, beta: [B], translation: [3].
inline BodyOutput body_forward(Tape& tape, const BodyTemplate& tmpl, const Var& rotations,
                               const Var& beta, const Var& translation) {
  const std::size_t V = tmpl.num_vertices();
  Var rest = shape_mesh(tape, tmpl, beta);
  Var posed = pose_mesh(tape, tmpl, rest, rotations);
  Var placed = nd::add(posed, nd::broadcast_to(nd::reshape(translation, {1, 3}), {V, 3}));
  return {placed, regress_joints(tape, placed, tmpl.regressor)};
}

struct MeshAndJoints {
  Tensor vertices;  // V x 3
  Tensor joints;    // K x 3
};

/// Value-level body forward for a person: vertices = pose(shape(beta)) + t,
/// joints regressed from the placed vertices.
inline MeshAndJoints mesh_for(const PersonState& person, const BodyTemplate& tmpl) {
  Tape tape;
  Tensor t({3}, {person.translation[0], person.translation[1], person.translation[2]});
  auto out = body_forward(tape, tmpl, tape.constant(person.rotations), tape.constant(person.beta),
                          tape.constant(std::move(t)));
  return {out.vertices.value(), out.joints.value()};
}

inline Tensor project_points(const Tensor& points, const CameraIntrinsics& cam) {
  Tape tape;
  return project(tape.constant(points), cam).value();
}

/// Rodrigues formula; axis need not be normalised (zero axis -> identity).
inline std::array<double, 9> axis_angle_to_matrix(std::array<double, 3> axis, double angle) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  if (n == 0.0 || angle == 0.0) return {1, 0, 0, 0, 1, 0, 0, 0, 1};
  const double x = axis[0] / n, y = axis[1] / n, z = axis[2] / n;
  const double c = std::cos(angle), s = std::sin(angle), C = 1.0 - c;
  return {c + x * x * C,     x * y * C - z * s, x * z * C + y * s,
          y * x * C + z * s, c + y * y * C,     y * z * C - x * s,
          z * x * C - y * s, z * y * C + x * s, c + z * z * C};
}

inline Tensor identity_rotations(std::size_t K) {
  Tensor r({K, 3, 3});
  for (std::size_t j = 0; j < K; ++j)
    for (std::size_t i = 0; i < 3; ++i) r(j, i, i) = 1.0;
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const BodyTemplate& t) {
  nlohmann::json j;
  j["schema"] = kTemplateSchema;
  j["num_vertices"] = t.num_vertices();
  j["num_joints"] = t.num_joints();
  j["num_betas"] = t.num_betas();
  j["parents"] = t.parents;
  j["joint_names"] = t.joint_names;
  j["T"] = t.vertices.data;
  j["rest_joints"] = t.rest_joints.data;
  j["S"] = t.shape_dirs.data;
  j["weights"] = t.weights.data;
  j["Jreg"] = t.regressor.data;
  j["faces"] = t.faces;
  return j;
}

inline BodyTemplate template_from_json(const nlohmann::json& j) {
  if (j.value("schema", std::string{}) != kTemplateSchema) {
    throw std::invalid_argument(std::string("template: expected schema ") + kTemplateSchema);
  }
  const auto V = j.at("num_vertices").get<std::size_t>();
  const auto K = j.at("num_joints").get<std::size_t>();
  const auto B = j.at("num_betas").get<std::size_t>();
  BodyTemplate t;
  t.parents = j.at("parents").get<std::vector<int>>();
  t.joint_names = j.at("joint_names").get<std::vector<std::string>>();
  t.vertices = Tensor({V, 3}, j.at("T").get<std::vector<double>>());
  t.rest_joints = Tensor({K, 3}, j.at("rest_joints").get<std::vector<double>>());
  t.shape_dirs = Tensor({B, V, 3}, j.at("S").get<std::vector<double>>());
  t.weights = Tensor({V, K}, j.at("weights").get<std::vector<double>>());
  t.regressor = Tensor({V, K}, j.at("Jreg").get<std::vector<double>>());
  t.faces = j.at("faces").get<std::vector<std::array<int, 3>>>();
  if (t.parents.size() != K) throw std::invalid_argument("template: parents length != num_joints");
  t.validate();
  return t;
}

inline nlohmann::json to_json(const TemplateConfig& c) {
  return {{"num_joints", c.num_joints}, {"ring_size", c.ring_size}, {"num_betas", c.num_betas}};
}

inline TemplateConfig template_config_from_json(const nlohmann::json& j) {
  TemplateConfig c;
  c.num_joints = j.value("num_joints", c.num_joints);
  c.ring_size = j.value("ring_size", c.ring_size);
  c.num_betas = j.value("num_betas", c.num_betas);
  return c;
}

inline nlohmann::json to_json(const CameraIntrinsics& c) {
  return {{"focal", c.focal}, {"cx", c.cx}, {"cy", c.cy}};
}

inline CameraIntrinsics camera_from_json(const nlohmann::json& j) {
  CameraIntrinsics c{j.at("focal").get<double>(), j.at("cx").get<double>(), j.at("cy").get<double>()};
  c.validate();
  return c;
}

}  // namespace meshcrowd::body
