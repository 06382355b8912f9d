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

#include <gtest/gtest.h>

#include <array>

#include "meshcrowd/bodymodel.hpp"
#include "test_util.hpp"

namespace nd = meshcrowd::ndgrad;
namespace body = meshcrowd::body;
using nd::Tape;
using nd::Tensor;
using nd::Var;

namespace {

Tensor random_rotations(std::size_t K, std::uint64_t seed, double max_angle = 1.0) {
  meshcrowd::Rng rng(seed);
  Tensor r({K, 3, 3});
  for (std::size_t j = 0; j < K; ++j) {
    auto m = body::axis_angle_to_matrix({rng.normal(), rng.normal(), rng.normal()},
                                        rng.uniform(0.0, max_angle));
    std::copy(m.begin(), m.end(), r.data.begin() + static_cast<std::ptrdiff_t>(j * 9));
  }
  return r;
}

void expect_near(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape, b.shape);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], tol) << "index " << i;
}

}  // namespace

TEST(Template, DefaultSizesAndInvariants) {
  auto t = body::make_template();
  EXPECT_EQ(t.num_vertices(), 64u);
  EXPECT_EQ(t.num_joints(), 8u);
  EXPECT_EQ(t.num_betas(), 4u);
  EXPECT_NO_THROW(t.validate());
  auto broken = t;
  broken.weights(0, 0) += 0.1;
  EXPECT_THROW(broken.validate(), std::invalid_argument);
  broken = t;
  broken.parents[3] = 5;
  EXPECT_THROW(broken.validate(), std::invalid_argument);
}

TEST(Template, JsonRoundTrip) {
  auto t = body::make_template({8, 4, 6});
  auto back = body::template_from_json(body::to_json(t));
  EXPECT_EQ(back.vertices.data, t.vertices.data);
  EXPECT_EQ(back.shape_dirs.data, t.shape_dirs.data);
  EXPECT_EQ(back.parents, t.parents);
  EXPECT_EQ(back.faces, t.faces);
  auto j = body::to_json(t);
  j["schema"] = "body-template/0";
  EXPECT_THROW(body::template_from_json(j), std::invalid_argument);
}

TEST(ShapeMesh, ZeroBetaIsTemplate) {
  auto t = body::make_template();
  Tape tape;
  Var m = body::shape_mesh(tape, t, tape.constant(Tensor({4})));
  EXPECT_EQ(m.value().data, t.vertices.data);
}

TEST(ShapeMesh, OneHotExtractsBasis) {
  auto t = body::make_template();
  Tape tape;
  Var m = body::shape_mesh(tape, t, tape.constant(Tensor({4}, {1, 0, 0, 0})));
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_DOUBLE_EQ(m.value().data[i], t.vertices.data[i] + t.shape_dirs.data[i]);
  }
}

TEST(ShapeMesh, IsAffineInBeta) {
  auto t = body::make_template();
  Tensor b1 = meshcrowd::testing::random_tensor({4}, 1, -2, 2);
  Tensor b2 = meshcrowd::testing::random_tensor({4}, 2, -2, 2);
  const double a = 0.3;
  Tensor mix({4});
  for (int i = 0; i < 4; ++i) mix.data[i] = a * b1.data[i] + (1 - a) * b2.data[i];
  Tape tape;
  auto m1 = body::shape_mesh(tape, t, tape.constant(b1)).value();
  auto m2 = body::shape_mesh(tape, t, tape.constant(b2)).value();
  auto mm = body::shape_mesh(tape, t, tape.constant(mix)).value();
  for (std::size_t i = 0; i < mm.size(); ++i) {
    EXPECT_NEAR(mm.data[i], a * m1.data[i] + (1 - a) * m2.data[i], 1e-12);
  }
}

TEST(ShapeMesh, LengthMismatchThrows) {
  auto t = body::make_template();
  Tape tape;
  EXPECT_THROW(body::shape_mesh(tape, t, tape.constant(Tensor({3}))), nd::ShapeError);
}

TEST(PoseMesh, IdentityPoseKeepsRest) {
  auto t = body::make_template();
  Tape tape;
  Var rest = body::shape_mesh(tape, t, tape.constant(Tensor({4}, {0.5, -1, 1.5, 0.2})));
  Var posed = body::pose_mesh(tape, t, rest, tape.constant(body::identity_rotations(8)));
  expect_near(posed.value(), rest.value(), 1e-12);
}

TEST(PoseMesh, RootRotationIsRigid) {
  auto t = body::make_template();
  Tensor rot = body::identity_rotations(8);
  auto R = body::axis_angle_to_matrix({0.3, -1.0, 0.4}, 1.1);
  std::copy(R.begin(), R.end(), rot.data.begin());
  Tape tape;
  Var rest = tape.constant(t.vertices);
  Var posed = body::pose_mesh(tape, t, rest, tape.constant(rot));
  const Tensor& root = t.rest_joints;
  for (std::size_t v = 0; v < t.num_vertices(); ++v) {
    for (int i = 0; i < 3; ++i) {
      double expect = root(0, i);
      for (int k = 0; k < 3; ++k) expect += R[i * 3 + k] * (t.vertices(v, k) - root(0, k));
      EXPECT_NEAR(posed.value()(v, i), expect, 1e-12);
    }
  }
}

TEST(PoseMesh, TwoJointChainMatchesHomogeneousComposition) {
  // Oracle: explicit 4x4 products T(J0) R0 T(J1 - J0) R1 T(-J1) applied to a
  // vertex skinned fully to the child.
  auto t = body::make_template({2, 4, 4});
  Tensor rot = body::identity_rotations(2);
  auto Rx = body::axis_angle_to_matrix({1, 0, 0}, 3.14159265358979323846 / 2);
  std::copy(Rx.begin(), Rx.end(), rot.data.begin() + 9);

  using M4 = std::array<std::array<double, 4>, 4>;
  auto mul4 = [](const M4& a, const M4& b) {
    M4 c{};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 4; ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
  };
  auto trans = [](double x, double y, double z) {
    M4 m{};
    for (int i = 0; i < 4; ++i) m[i][i] = 1;
    m[0][3] = x;
    m[1][3] = y;
    m[2][3] = z;
    return m;
  };
  M4 rx{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rx[i][j] = Rx[i * 3 + j];
  rx[3][3] = 1;
  const double j0[3] = {0, 0, 0}, j1[3] = {0, -0.25, 0};
  M4 chain = mul4(mul4(mul4(trans(j0[0], j0[1], j0[2]), trans(j1[0] - j0[0], j1[1] - j0[1], j1[2] - j0[2])), rx),
                  trans(-j1[0], -j1[1], -j1[2]));

  Tape tape;
  Var posed = body::pose_mesh(tape, t, tape.constant(t.vertices), tape.constant(rot));
  // distal ring of the spine (vertices 12..15) is skinned only to joint 1
  for (std::size_t v = 12; v < 16; ++v) {
    ASSERT_EQ(t.weights(v, 1), 1.0);
    const double p[4] = {t.vertices(v, 0), t.vertices(v, 1), t.vertices(v, 2), 1.0};
    for (int i = 0; i < 3; ++i) {
      double expect = 0;
      for (int k = 0; k < 4; ++k) expect += chain[i][k] * p[k];
      EXPECT_NEAR(posed.value()(v, i), expect, 1e-12);
    }
  }
  // a 90 degree turn about x sends the bone's -y extent to -z
  EXPECT_NEAR(posed.value()(12, 2), -0.20, 0.12);
}

TEST(PoseMesh, RejectsNonRotation) {
  auto t = body::make_template();
  Tensor rot = body::identity_rotations(8);
  rot(2, 0, 0) = 1.01;
  Tape tape;
  EXPECT_THROW(body::pose_mesh(tape, t, tape.constant(t.vertices), tape.constant(rot)),
               std::invalid_argument);
}

TEST(RegressJoints, OneHotAndCentroid) {
  Tensor mesh({5, 3});
  for (std::size_t i = 0; i < mesh.size(); ++i) mesh.data[i] = static_cast<double>(i) * 0.5 - 1.0;
  Tensor reg({5, 2});
  reg(3, 0) = 1.0;
  for (std::size_t v = 0; v < 4; ++v) reg(v, 1) = 0.25;
  Tape tape;
  auto X = body::regress_joints(tape, tape.constant(mesh), reg).value();
  for (int c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(X(0, c), mesh(3, c));
    EXPECT_NEAR(X(1, c), (mesh(0, c) + mesh(1, c) + mesh(2, c) + mesh(3, c)) / 4.0, 1e-15);
  }
  EXPECT_THROW(body::regress_joints(tape, tape.constant(Tensor({4, 3})), reg), nd::ShapeError);
}

TEST(RegressJoints, RestMeshReproducesRestJoints) {
  auto t = body::make_template();
  Tape tape;
  Var posed = body::pose_mesh(tape, t, body::shape_mesh(tape, t, tape.constant(Tensor({4}))),
                              tape.constant(body::identity_rotations(8)));
  expect_near(body::regress_joints(tape, posed, t.regressor).value(), t.rest_joints, 1e-12);
}

TEST(Project, PrincipalPointAndSimilarTriangles) {
  body::CameraIntrinsics cam{500.0, 32.0, 40.0};
  Tensor pts({3, 3}, {0, 0, 4.0, 4.0 / 500.0 * 7.0, 0, 4.0, 0.3, -0.2, 2.0});
  auto uv = body::project_points(pts, cam);
  EXPECT_DOUBLE_EQ(uv(0, 0), 32.0);
  EXPECT_DOUBLE_EQ(uv(0, 1), 40.0);
  EXPECT_NEAR(uv(1, 0), 39.0, 1e-12);
  EXPECT_NEAR(uv(1, 1), 40.0, 1e-12);
  Tensor far = pts;
  far(2, 2) = 4.0;
  auto uv2 = body::project_points(far, cam);
  EXPECT_NEAR(uv2(2, 0) - 32.0, (uv(2, 0) - 32.0) / 2.0, 1e-12);
  EXPECT_NEAR(uv2(2, 1) - 40.0, (uv(2, 1) - 40.0) / 2.0, 1e-12);
}

TEST(Project, RejectsPointsAtCameraPlane) {
  Tensor pts({1, 3}, {0.1, 0.1, 0.0});
  EXPECT_THROW(body::project_points(pts, {500, 32, 32}), std::domain_error);
}

TEST(Rot6d, IdentityAndQuarterTurn) {
  Tape tape;
  auto R = body::rot6d_to_matrix(tape.constant(Tensor({2, 6}, {1, 0, 0, 0, 1, 0, 0, 1, 0, -1, 0, 0}))).value();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(R(0, i, j), i == j ? 1.0 : 0.0);
  // second: columns (e2, -e1, e3) => maps e1 -> e2, a 90 degree turn about z
  const double expect[3][3] = {{0, -1, 0}, {1, 0, 0}, {0, 0, 1}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(R(1, i, j), expect[i][j], 1e-15);
}

TEST(Rot6d, RandomInputsGiveRotations) {
  Tape tape;
  auto R = body::rot6d_to_matrix(tape.constant(meshcrowd::testing::random_tensor({200, 6}, 77))).value();
  for (std::size_t n = 0; n < 200; ++n) EXPECT_LT(body::rotation_error(&R.data[n * 9]), 1e-10);
}

TEST(Rot6d, DegenerateInputThrows) {
  Tape tape;
  EXPECT_THROW(body::rot6d_to_matrix(tape.constant(Tensor({1, 6}, {0, 0, 0, 0, 1, 0}))), std::domain_error);
  EXPECT_THROW(body::rot6d_to_matrix(tape.constant(Tensor({1, 6}, {1, 0, 0, 2, 0, 0}))), std::domain_error);
}

TEST(BodyForward, GlobalRigidMotionMovesJointsRigidly) {
  auto t = body::make_template();
  Tensor rot = random_rotations(8, 5, 0.8);
  Tensor beta = meshcrowd::testing::random_tensor({4}, 6, -2, 2);
  body::PersonState base{rot, beta, {0.2, -0.1, 5.0}};
  auto before = body::mesh_for(base, t);

  auto Rg = body::axis_angle_to_matrix({1, 2, -0.5}, 0.7);
  const std::array<double, 3> d{0.4, 0.3, 1.5};
  // compose the root rotation; the root joint stays fixed, so the equivalent
  // translation is R t + d + (I - R) root
  body::PersonState moved = base;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += Rg[i * 3 + k] * rot(0, k, j);
      moved.rotations(0, i, j) = s;
    }
  Tape tape;
  Tensor root = body::regress_joints(tape, body::shape_mesh(tape, t, tape.constant(beta)), t.regressor).value();
  for (int i = 0; i < 3; ++i) {
    double rt = 0, rr = 0;
    for (int k = 0; k < 3; ++k) {
      rt += Rg[i * 3 + k] * base.translation[k];
      rr += Rg[i * 3 + k] * root(0, k);
    }
    moved.translation[i] = rt + d[i] + root(0, i) - rr;
  }
  auto after = body::mesh_for(moved, t);
  for (std::size_t j = 0; j < 8; ++j)
    for (int i = 0; i < 3; ++i) {
      double expect = d[i];
      for (int k = 0; k < 3; ++k) expect += Rg[i * 3 + k] * before.joints(j, k);
      EXPECT_NEAR(after.joints(j, i), expect, 1e-9);
    }
}

TEST(BodyForward, ChainGradCheck) {
  auto t = body::make_template();
  body::CameraIntrinsics cam = body::CameraIntrinsics::for_image(64, 60.0);
  nd::NamedTensors inputs{{"beta", meshcrowd::testing::random_tensor({4}, 3, -1, 1)},
                          {"rot6d", meshcrowd::testing::random_tensor({8, 6}, 4)},
                          {"t", Tensor({3}, {0.1, -0.2, 5.0})}};
  for (std::size_t j = 0; j < 8; ++j) {
    inputs[1].second(j, 0) += 1.5;
    inputs[1].second(j, 4) += 1.5;
  }
  Tensor w = meshcrowd::testing::random_tensor({8, 2}, 9);
  auto f = [&](Tape& tape, const std::vector<Var>& v) {
    Var R = nd::reshape(body::rot6d_to_matrix(v[1]), {8, 3, 3});
    auto out = body::body_forward(tape, t, R, v[0], v[2]);
    return nd::dot(body::project(out.joints, cam), tape.constant(w));
  };
  auto report = nd::grad_check(f, inputs, {});
  EXPECT_TRUE(report.pass) << report.max_rel_error;
}
