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

#include "meshcrowd/losses.hpp"
#include "metric_oracles.hpp"
#include "test_util.hpp"

namespace nd = meshcrowd::ndgrad;
namespace body = meshcrowd::body;
namespace losses = meshcrowd::losses;
using meshcrowd::PersonGT;
using meshcrowd::Rng;
using meshcrowd::testing::random_tensor;
using nd::Tape;
using nd::Tensor;
using nd::Var;

namespace {

Tensor rotate(const Tensor& X, const std::array<double, 9>& R, std::array<double, 3> d = {0, 0, 0}) {
  Tensor out(X.shape);
  for (std::size_t i = 0; i < X.dim(0); ++i)
    for (std::size_t r = 0; r < 3; ++r)
      out(i, r) = R[r * 3] * X(i, 0) + R[r * 3 + 1] * X(i, 1) + R[r * 3 + 2] * X(i, 2) + d[r];
  return out;
}

double rt_distance(const Tensor& a, const Tensor& b) {
  Tape t;
  return losses::loss_rt_distance(losses::displacement_matrix(t.constant(a)), losses::displacement_matrix(t.constant(b)))
      .item();
}

double rt_directional(const Tensor& a, const Tensor& b, bool* degenerate = nullptr) {
  Tape t;
  return losses::loss_rt_directional(losses::displacement_matrix(t.constant(a)),
                                     losses::displacement_matrix(t.constant(b)), degenerate)
      .item();
}

PersonGT person_at(const Tensor& joints2d) {
  PersonGT g;
  g.joints2d = joints2d;
  g.visibility = Tensor({joints2d.dim(0)}, 1.0);
  return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// Hungarian

TEST(Hungarian, TwoByTwoDiagonal) {
  auto a = meshcrowd::hungarian({1, 2, 2, 1}, 2, 2);
  EXPECT_EQ(a, (std::vector<int>{0, 1}));
  EXPECT_EQ(meshcrowd::assignment_cost({1, 2, 2, 1}, 2, a), 2.0);
}

TEST(Hungarian, MatchesBruteForceOnRandomSquare) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(6);
    std::vector<double> c(n * n);
    for (double& v : c) v = rng.uniform(0, 10);
    auto a = meshcrowd::hungarian(c, n, n);
    EXPECT_EQ(meshcrowd::assignment_cost(c, n, a), meshcrowd::testing::brute_force_assignment(c, n, n)) << "trial " << trial;
  }
}

TEST(Hungarian, MatchesBruteForceOnRectangular) {
  Rng rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t r = 1 + rng.index(6), c = 1 + rng.index(6);
    std::vector<double> cost(r * c);
    for (double& v : cost) v = rng.uniform(-5, 5);
    auto a = meshcrowd::hungarian(cost, r, c);
    std::size_t assigned = 0;
    std::vector<int> used(c, 0);
    for (int x : a)
      if (x >= 0) {
        ++assigned;
        EXPECT_EQ(used[static_cast<std::size_t>(x)]++, 0);
      }
    EXPECT_EQ(assigned, std::min(r, c));
    EXPECT_EQ(meshcrowd::assignment_cost(cost, c, a), meshcrowd::testing::brute_force_assignment(cost, r, c));
  }
}

// ---------------------------------------------------------------------------
// Matching

TEST(Match, ExactQueryWins) {
  Tensor gt2d = random_tensor({8, 2}, 3, 10, 50);
  Tensor off = gt2d;
  for (double& v : off.data) v += 5.0;
  auto m = losses::match({gt2d, off}, {0.0, 0.0}, {person_at(gt2d)}, 64, 1.0);
  ASSERT_EQ(m.pairs.size(), 1u);
  EXPECT_EQ(m.pairs[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(m.unmatched_queries, (std::vector<std::size_t>{1}));
}

TEST(Match, PresenceBreaksTiesAndTooManyPeopleThrows) {
  Tensor gt2d = random_tensor({8, 2}, 4, 10, 50);
  auto m = losses::match({gt2d, gt2d}, {-3.0, 3.0}, {person_at(gt2d)}, 64, 1.0);
  EXPECT_EQ(m.pairs[0].first, 1u);
  EXPECT_THROW(losses::match({gt2d}, {0.0}, {person_at(gt2d), person_at(gt2d)}, 64, 1.0), std::invalid_argument);
}

TEST(Match, PairsOrderedByGroundTruth) {
  Tensor a = random_tensor({8, 2}, 5, 0, 20), b = random_tensor({8, 2}, 6, 40, 60);
  auto m = losses::match({b, Tensor(nd::Shape{0}), a}, {0, 0, 0}, {person_at(a), person_at(b)}, 64, 0.0);
  ASSERT_EQ(m.pairs.size(), 2u);
  EXPECT_EQ(m.pairs[0], (std::pair<std::size_t, std::size_t>{2, 0}));
  EXPECT_EQ(m.pairs[1], (std::pair<std::size_t, std::size_t>{0, 1}));
}

// ---------------------------------------------------------------------------
// L3D, L2D, LSMPL

TEST(Loss3D, Examples) {
  Tape t;
  Tensor X = random_tensor({8, 3}, 7);
  EXPECT_EQ(losses::loss_3d(t.constant(X), t.constant(X)).item(), 0.0);
  EXPECT_DOUBLE_EQ(losses::loss_3d(t.constant(Tensor({1, 3}, {1, 0, 0})), t.constant(Tensor({1, 3}))).item(), 1.0 / 3);
  Tensor Y = random_tensor({8, 3}, 8);
  Tensor X2 = X, Y2 = Y;
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      X2(i, c) += 0.25 * (c + 1);
      Y2(i, c) += 0.25 * (c + 1);
    }
  EXPECT_NEAR(losses::loss_3d(t.constant(X), t.constant(Y)).item(), losses::loss_3d(t.constant(X2), t.constant(Y2)).item(),
              1e-15);
  EXPECT_THROW(losses::loss_3d(t.constant(X), t.constant(Tensor({7, 3}))), nd::ShapeError);
}

TEST(Loss2D, Examples) {
  auto cam = body::CameraIntrinsics::for_image(64, 60.0);
  Tensor X({1, 3}, {0.2, -0.1, 4.0});
  Tensor x = body::project_points(X, cam);
  Tape t;
  EXPECT_EQ(losses::loss_2d(t, {{t.constant(X), x, Tensor({1}, 1.0)}}, cam, 64).item(), 0.0);
  Tensor off = x;
  off(0, 0) += 3;
  off(0, 1) -= 4;
  EXPECT_DOUBLE_EQ(losses::loss_2d(t, {{t.constant(X), off, Tensor({1}, 1.0)}}, cam, 64).item(), 7.0 / 128.0);
}

TEST(Loss2D, AllInvisibleIsZeroWithoutGradient) {
  auto cam = body::CameraIntrinsics::for_image(64, 60.0);
  Tape t;
  Var X = t.leaf(Tensor({2, 3}, {0.1, 0.1, 4, -0.1, 0.2, 5}));
  Var l = losses::loss_2d(t, {{X, Tensor({2, 2}, 3.0), Tensor({2})}}, cam, 64);
  EXPECT_EQ(l.item(), 0.0);
  auto g = t.backward(l);
  for (double v : g[X].data) EXPECT_EQ(v, 0.0);
}

TEST(Loss2D, BehindCameraPersonSkipped) {
  auto cam = body::CameraIntrinsics::for_image(64, 60.0);
  Tape t;
  Tensor good({1, 3}, {0, 0, 4});
  Tensor target = body::project_points(good, cam);
  target(0, 0) += 2;
  int skipped = 0;
  Var l = losses::loss_2d(t,
                          {{t.constant(good), target, Tensor({1}, 1.0)},
                           {t.constant(Tensor({1, 3}, {0, 0, -1})), target, Tensor({1}, 1.0)}},
                          cam, 64, &skipped);
  EXPECT_EQ(skipped, 1);
  EXPECT_DOUBLE_EQ(l.item(), 2.0 / 128.0);
}

TEST(LossSMPL, Examples) {
  Tape t;
  Tensor th = random_tensor({2, 8, 3, 3}, 9), be = random_tensor({2, 4}, 10);
  EXPECT_EQ(losses::loss_smpl(t.constant(th), t.constant(be), t.constant(th), t.constant(be)).item(), 0.0);
  Tensor be1({1, 4}), be2({1, 4});
  be2(0, 2) = 1.0;
  Tensor th1 = random_tensor({1, 8, 3, 3}, 11);
  EXPECT_DOUBLE_EQ(losses::loss_smpl(t.constant(th1), t.constant(be1), t.constant(th1), t.constant(be2)).item(), 0.25);
}

TEST(LossSMPL, ConsistentRelabelingInvariant) {
  Tape t;
  Tensor th = random_tensor({3, 8, 3, 3}, 12), thg = random_tensor({3, 8, 3, 3}, 13);
  Tensor be = random_tensor({3, 4}, 14), beg = random_tensor({3, 4}, 15);
  const std::vector<std::size_t> perm{2, 0, 1};
  auto permute = [&](const Tensor& x) {
    Tensor y(x.shape);
    const std::size_t row = x.size() / 3;
    for (std::size_t i = 0; i < 3; ++i)
      std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(perm[i] * row), row,
                  y.data.begin() + static_cast<std::ptrdiff_t>(i * row));
    return y;
  };
  double a = losses::loss_smpl(t.constant(th), t.constant(be), t.constant(thg), t.constant(beg)).item();
  double b = losses::loss_smpl(t.constant(permute(th)), t.constant(permute(be)), t.constant(permute(thg)),
                               t.constant(permute(beg)))
                 .item();
  EXPECT_NEAR(a, b, 1e-15);
}

// ---------------------------------------------------------------------------
// Displacement matrix and relative losses

TEST(Displacement, TwoJointExample) {
  Tape t;
  auto D = losses::displacement_matrix(t.constant(Tensor({2, 3}, {0, 0, 0, 1, 0, 0}))).value();
  EXPECT_EQ(D.shape, (nd::Shape{3, 2, 2}));
  EXPECT_EQ(D(0, 0, 1), -1.0);
  EXPECT_EQ(D(0, 1, 0), 1.0);
  for (std::size_t c = 1; c < 3; ++c) EXPECT_EQ(D(c, 0, 1), 0.0);
}

TEST(Displacement, Invariants) {
  Tape t;
  Tensor X = random_tensor({16, 3}, 16);
  auto D = losses::displacement_matrix(t.constant(X)).value();
  Tensor same({5, 3}, 0.7);
  for (double v : losses::displacement_matrix(t.constant(same)).value().data) EXPECT_EQ(v, 0.0);
  Tensor shifted = X;
  for (std::size_t i = 0; i < 16; ++i) shifted(i, 1) += 3.25;
  auto Ds = losses::displacement_matrix(t.constant(shifted)).value();
  Var N = nd::norm_axis(t.constant(D), 0);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) {
      for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(D(c, i, j), -D(c, j, i));
        if (c != 1) EXPECT_EQ(Ds(c, i, j), D(c, i, j));
      }
      EXPECT_EQ(N.value()(i, j), N.value()(j, i));
      for (std::size_t k = 0; k < 16; ++k) EXPECT_LE(N.value()(i, j), N.value()(i, k) + N.value()(k, j) + 1e-12);
    }
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(D(c, i, i), 0.0);
}

TEST(RtDistance, Examples) {
  Tensor X = random_tensor({16, 3}, 17);
  EXPECT_EQ(rt_distance(X, X), 0.0);
  EXPECT_DOUBLE_EQ(rt_distance(Tensor({2, 3}, {0, 0, 0, 2, 0, 0}), Tensor({2, 3}, {0, 0, 0, 0, 1, 0})), 1.0);
  EXPECT_EQ(rt_distance(Tensor({1, 3}, {1, 2, 3}), Tensor({1, 3})), 0.0);
}

TEST(RtDistance, InvariantUnderRigidMotionOfPredictions) {
  Rng rng(18);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor X = random_tensor({16, 3}, 100 + trial), G = random_tensor({16, 3}, 200 + trial);
    auto R = body::axis_angle_to_matrix({rng.normal(), rng.normal(), rng.normal()}, rng.uniform(0, 3.1));
    Tensor Xm = rotate(X, R, {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)});
    EXPECT_NEAR(rt_distance(Xm, G), rt_distance(X, G), 1e-10);
  }
}

TEST(RtDirectional, Examples) {
  Tensor X = random_tensor({16, 3}, 19);
  EXPECT_NEAR(rt_directional(X, X), 0.0, 1e-14);
  Tensor reflected = X;
  for (double& v : reflected.data) v = -v;
  EXPECT_NEAR(rt_directional(reflected, X), 2.0, 1e-14);
  // Planar joints and their 90-degree rotation: every displacement orthogonal.
  Tensor P = random_tensor({6, 3}, 20);
  for (std::size_t i = 0; i < 6; ++i) P(i, 2) = 0.0;
  Tensor P90 = rotate(P, body::axis_angle_to_matrix({0, 0, 1}, std::numbers::pi / 2));
  EXPECT_NEAR(rt_directional(P90, P), 1.0, 1e-14);
}

TEST(RtDirectional, RangeAndInvariances) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor X = random_tensor({8, 3}, 300 + trial), G = random_tensor({8, 3}, 400 + trial);
    const double l = rt_directional(X, G);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0);
    auto R = body::axis_angle_to_matrix({rng.normal(), rng.normal(), rng.normal()}, rng.uniform(0, 3.1));
    EXPECT_NEAR(rt_directional(rotate(X, R), rotate(G, R)), l, 1e-12);
    EXPECT_NEAR(rt_directional(rotate(X, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {1, -2, 3}), G), l, 1e-12);
  }
}

TEST(RtDirectional, DegenerateGivesZeroAndFlag) {
  bool flag = false;
  EXPECT_EQ(rt_directional(Tensor({3, 3}, 1.0), random_tensor({3, 3}, 22), &flag), 0.0);
  EXPECT_TRUE(flag);
  rt_directional(random_tensor({3, 3}, 23), random_tensor({3, 3}, 24), &flag);
  EXPECT_FALSE(flag);
  // A coincident pair is excluded, the rest still count.
  Tensor X = random_tensor({3, 3}, 25);
  Tensor Xc = X;
  for (std::size_t c = 0; c < 3; ++c) Xc(2, c) = Xc(1, c);
  EXPECT_NEAR(rt_directional(Xc, Xc), 0.0, 1e-14);
}

// ---------------------------------------------------------------------------
// Presence and total

TEST(Presence, Examples) {
  Tape t;
  losses::MatchResult m;
  m.pairs = {{0, 0}};
  m.unmatched_queries = {1};
  EXPECT_LT(losses::loss_presence(t.constant(Tensor({2}, {20, -20})), m).item(), 1e-8);
  EXPECT_NEAR(losses::loss_presence(t.constant(Tensor({2})), m).item(), std::log(2.0), 1e-15);
  double prev = std::numeric_limits<double>::infinity();
  for (double x = -6; x <= 6; x += 0.5) {
    const double l = losses::loss_presence(t.constant(Tensor({2}, {x, 0.0})), m).item();
    EXPECT_LT(l, prev);
    prev = l;
  }
}

class TotalLoss : public ::testing::Test {
 protected:
  void SetUp() override {
    cam = body::CameraIntrinsics::for_image(64, 60.0);
    tmpl = body::make_template();
    Rng rng(26);
    for (int i = 0; i < 2; ++i) {
      PersonGT g;
      g.rotations = Tensor({8, 3, 3});
      for (std::size_t j = 0; j < 8; ++j) {
        auto R = body::axis_angle_to_matrix({rng.normal(), rng.normal(), rng.normal()}, rng.uniform(0, 0.5));
        std::copy(R.begin(), R.end(), g.rotations.data.begin() + static_cast<std::ptrdiff_t>(j * 9));
      }
      g.beta = random_tensor({4}, 27 + i);
      g.translation = {i ? 0.5 : -0.5, 0.1, 4.0 + i};
      auto mj = body::mesh_for(g.state(), tmpl);
      g.joints3d = mj.joints;
      g.vertices = mj.vertices;
      g.joints2d = body::project_points(mj.joints, cam);
      g.visibility = Tensor({8}, 1.0);
      scene.people.push_back(g);
    }
  }

  /// Query 1 predicts person 0 exactly, query 2 person 1; queries 0, 3 are off.
  meshcrowd::model::Predictions predictions(Tape& t, double matched_logit, double noise) {
    Tensor rot({4, 8, 3, 3}), beta({4, 4}), trans({4, 3}), pres({4}, -matched_logit);
    for (std::size_t q = 0; q < 4; ++q) {
      const auto& g = scene.people[q == 2 ? 1 : 0];
      std::copy(g.rotations.data.begin(), g.rotations.data.end(), rot.data.begin() + static_cast<std::ptrdiff_t>(q * 72));
      for (std::size_t k = 0; k < 4; ++k) beta(q, k) = g.beta.data[k];
      for (std::size_t c = 0; c < 3; ++c) trans(q, c) = g.translation[c] + (q == 0 || q == 3 ? 0.4 : noise);
    }
    pres.data[1] = pres.data[2] = matched_logit;
    return {t.leaf(rot), t.leaf(beta), t.leaf(trans), t.leaf(pres), t.constant(Tensor({4, 2}, 0.5))};
  }

  body::CameraIntrinsics cam;
  body::BodyTemplate tmpl;
  meshcrowd::Scene scene;
};

TEST_F(TotalLoss, PerfectPredictionsOnlyPresenceRemains) {
  Tape t;
  auto p = predictions(t, 20.0, 0.0);
  auto l = losses::scene_loss(t, tmpl, cam, 64, p, scene, {});
  ASSERT_EQ(l.match.pairs.size(), 2u);
  EXPECT_EQ(l.match.pairs[0].first, 1u);
  EXPECT_EQ(l.match.pairs[1].first, 2u);
  EXPECT_NEAR(l.terms.l3d.item(), 0.0, 1e-12);
  EXPECT_NEAR(l.terms.l2d.item(), 0.0, 1e-12);
  EXPECT_NEAR(l.terms.smpl.item(), 0.0, 1e-12);
  EXPECT_NEAR(l.terms.rt_distance.item(), 0.0, 1e-12);
  EXPECT_NEAR(l.terms.rt_directional.item(), 0.0, 1e-12);
  EXPECT_LT(l.total.item(), 1e-8);
}

TEST_F(TotalLoss, ZeroWeightsGiveZero) {
  Tape t;
  auto p = predictions(t, 0.0, 0.3);
  auto l = losses::scene_loss(t, tmpl, cam, 64, p, scene, {0, 0, 0, 0, 0, 0});
  EXPECT_EQ(l.total.item(), 0.0);
}

TEST_F(TotalLoss, GradientIsWeightedSumOfTermGradients) {
  const losses::LossWeights w{2.0, 3.0, 0.5, 1.5, 0.7, 1.1};
  auto grads = [&](auto pick) {
    Tape t;
    auto p = predictions(t, 0.3, 0.2);
    auto l = losses::scene_loss(t, tmpl, cam, 64, p, scene, w);
    auto g = t.backward(pick(l));
    std::vector<double> out;
    for (const Var& v : {p.rotations, p.beta, p.translation, p.presence})
      for (double x : g[v].data) out.push_back(x);
    return out;
  };
  auto total = grads([](const losses::SceneLoss& l) { return l.total; });
  std::vector<std::vector<double>> parts{
      grads([](const losses::SceneLoss& l) { return l.terms.l3d; }),
      grads([](const losses::SceneLoss& l) { return l.terms.l2d; }),
      grads([](const losses::SceneLoss& l) { return l.terms.smpl; }),
      grads([](const losses::SceneLoss& l) { return l.terms.rt_distance; }),
      grads([](const losses::SceneLoss& l) { return l.terms.rt_directional; }),
      grads([](const losses::SceneLoss& l) { return l.terms.presence; })};
  const double ws[] = {w.l3d, w.l2d, w.smpl, w.rt, w.rt * w.rt_dir, w.presence};
  for (std::size_t i = 0; i < total.size(); ++i) {
    double s = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) s += ws[k] * parts[k][i];
    EXPECT_NEAR(total[i], s, 1e-12) << i;
  }
}

TEST(LossWeights, JsonAndValidation) {
  losses::LossWeights w;
  EXPECT_EQ(w.l3d, 5.0);
  EXPECT_EQ(w.l2d, 5.0);
  EXPECT_EQ(w.smpl, 1.0);
  EXPECT_EQ(w.rt, 1.0);
  EXPECT_EQ(w.rt_dir, 1.0);
  EXPECT_EQ(w.presence, 1.0);
  EXPECT_EQ(losses::to_json(losses::loss_weights_from_json(losses::to_json(w))), losses::to_json(w));
  EXPECT_THROW(losses::loss_weights_from_json({{"rt", -1.0}}), meshcrowd::ConfigError);
  EXPECT_THROW(losses::loss_weights_from_json({{"lrt", 1.0}}), meshcrowd::ConfigError);
}
