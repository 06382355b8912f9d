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

#include "meshcrowd/ndgrad.hpp"
#include "test_util.hpp"

namespace nd = meshcrowd::ndgrad;
using nd::Shape;
using nd::Tape;
using nd::Tensor;
using nd::Var;
using meshcrowd::testing::random_tensor;

TEST(Ndgrad, MatmulIdentity) {
  Tape tape;
  Tensor a({2, 2}, {1.5, -2.0, 0.25, 3.0});
  Var y = nd::matmul(tape.constant(Tensor::eye(2)), tape.constant(a));
  EXPECT_EQ(y.value().data, a.data);
}

TEST(Ndgrad, SoftmaxOfZerosIsUniform) {
  Tape tape;
  Var y = nd::softmax(tape.constant(Tensor({3}, 0.0)), 0);
  for (double v : y.value().data) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Ndgrad, SumBackwardIsOnes) {
  Tape tape;
  Var x = tape.leaf(random_tensor({3, 4}, 1));
  auto g = tape.backward(nd::sum(x));
  EXPECT_EQ(g[x].data, std::vector<double>(12, 1.0));
}

TEST(Ndgrad, DotProductGradient) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0, 2.0}));
  auto g = tape.backward(nd::dot(x, x));
  EXPECT_EQ(g[x].data, (std::vector<double>{2.0, 4.0}));
}

TEST(Ndgrad, UnreachedLeafGetsZeros) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0, 2.0}));
  Var y = tape.leaf(Tensor({3}, 5.0));
  auto g = tape.backward(nd::sum(nd::square(x)));
  EXPECT_EQ(g[y].data, std::vector<double>(3, 0.0));
  EXPECT_EQ(g[y].shape, Shape{3});
}

TEST(Ndgrad, MeanOfSoftmaxHasZeroGradient) {
  Tape tape;
  Var x = tape.leaf(random_tensor({5}, 7));
  auto g = tape.backward(nd::mean(nd::softmax(x, 0)));
  for (double v : g[x].data) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Ndgrad, NonScalarLossRejected) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, 1.0));
  EXPECT_THROW(tape.backward(x), nd::ShapeError);
}

TEST(Ndgrad, ShapeErrorNamesOperationAndShapes) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  try {
    nd::matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const nd::ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(nd::add(a, tape.constant(Tensor({3, 2}))), nd::ShapeError);
  EXPECT_THROW(nd::broadcast_to(a, {3, 3}), nd::ShapeError);
  EXPECT_THROW(nd::reshape(a, {5}), nd::ShapeError);
}

TEST(Ndgrad, TransposeOfProduct) {
  Tape tape;
  Var a = tape.constant(random_tensor({4, 5}, 11));
  Var b = tape.constant(random_tensor({5, 3}, 12));
  Var lhs = nd::transpose(nd::matmul(a, b));
  Var rhs = nd::matmul(nd::transpose(b), nd::transpose(a));
  ASSERT_EQ(lhs.shape(), rhs.shape());
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    EXPECT_NEAR(lhs.value().data[i], rhs.value().data[i], 1e-12);
  }
}

TEST(Ndgrad, SoftmaxRowsArePositiveAndSumToOne) {
  Tape tape;
  Var y = nd::softmax(tape.constant(random_tensor({6, 9}, 3, -5.0, 5.0)), 1);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) {
      EXPECT_GT(y.value()(r, c), 0.0);
      s += y.value()(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ndgrad, BackwardIsLinearInTheLoss) {
  Tensor x0 = random_tensor({3, 4}, 21);
  Tensor w = random_tensor({4, 2}, 22);
  auto loss1 = [&](Tape& t, Var x) { return nd::sum(nd::softmax(nd::matmul(x, t.constant(w)), 1)); };
  auto loss2 = [&](Tape& t, Var x) { return nd::mean(nd::square(nd::tanh(x))); };

  Tape ta;
  Var xa = ta.leaf(x0);
  auto ga = ta.backward(nd::add(loss1(ta, xa), loss2(ta, xa)))[xa];
  Tape tb;
  Var xb = tb.leaf(x0);
  auto gb = tb.backward(loss1(tb, xb))[xb];
  Tape tc;
  Var xc = tc.leaf(x0);
  auto gc = tc.backward(loss2(tc, xc))[xc];
  for (std::size_t i = 0; i < ga.size(); ++i) {
    EXPECT_NEAR(ga.data[i], gb.data[i] + gc.data[i], 1e-12);
  }
}

TEST(Ndgrad, BroadcastAndConcatShapes) {
  Tape tape;
  Var b = tape.constant(Tensor({3}, {1, 2, 3}));
  Var y = nd::broadcast_to(b, {2, 3});
  EXPECT_EQ(y.value().data, (std::vector<double>{1, 2, 3, 1, 2, 3}));
  Var col = tape.constant(Tensor({2, 1}, {7, 8}));
  Var z = nd::broadcast_to(col, {2, 3});
  EXPECT_EQ(z.value().data, (std::vector<double>{7, 7, 7, 8, 8, 8}));
  Var c = nd::concat({y, z}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 6}));
  EXPECT_EQ(nd::slice(c, 1, 3, 6).value().data, z.value().data);
}

TEST(Ndgrad, GradCheckPolynomialIsTight) {
  auto f = [](Tape&, const Var& x) { return nd::sum(nd::square(x)); };
  auto report = nd::grad_check(f, random_tensor({8}, 5), 1e-5, 1e-6);
  EXPECT_TRUE(report.pass) << report.max_rel_error;
}

TEST(Ndgrad, GradCheckComposedChain) {
  Tensor w = random_tensor({4, 3}, 31);
  auto f = [&](Tape& t, const Var& x) {
    return nd::mean(nd::matmul(nd::softmax(x, 1), t.constant(w)));
  };
  auto report = nd::grad_check(f, random_tensor({5, 4}, 32), 1e-5, 1e-4);
  EXPECT_TRUE(report.pass) << report.max_rel_error;
}

TEST(Ndgrad, GradCheckDetectsWrongBackward) {
  // square with a deliberately wrong derivative (x instead of 2x)
  auto bad_square = [](const Var& x) {
    Tensor out = x.value();
    for (double& v : out.data) v *= v;
    nd::VarId xi = x.id();
    return x.tape()->record("bad_square", {xi}, std::move(out),
                            [xi](Tape& t, nd::VarId, const Tensor& g) {
                              Tensor* gx = t.grad_of(xi);
                              for (std::size_t i = 0; i < g.size(); ++i)
                                gx->data[i] += g.data[i] * t.value(xi).data[i];
                            });
  };
  auto f = [&](Tape&, const Var& x) { return nd::sum(bad_square(x)); };
  auto report = nd::grad_check(f, random_tensor({6}, 9), 1e-5, 1e-4);
  EXPECT_FALSE(report.pass);
}

TEST(Ndgrad, GradCheckReportsNonFiniteCoordinate) {
  auto f = [](Tape&, const Var& x) { return nd::sum(nd::log(x)); };
  Tensor x({3}, {1.0, 2.0, 5e-6});
  EXPECT_THROW(nd::grad_check(f, x, 1e-5, 1e-4), nd::GradCheckError);
}

// Every registered kernel passes a finite-difference check with random
// contraction weights on randomized inputs away from kinks.
class KernelGradCheck : public ::testing::TestWithParam<std::size_t> {};

TEST_P(KernelGradCheck, MatchesFiniteDifferences) {
  auto check = nd::kernel_checks().at(GetParam());
  auto report = nd::grad_check(check.fn, check.inputs, check.options);
  EXPECT_TRUE(report.pass) << check.name << " max rel err " << report.max_rel_error;
}

INSTANTIATE_TEST_SUITE_P(AllKernels, KernelGradCheck,
                         ::testing::Range<std::size_t>(0, nd::kernel_checks().size()));
