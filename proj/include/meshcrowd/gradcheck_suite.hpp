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

// The registered gradient-check suite run by `meshcrowd gradcheck`.

#pragma once

#include <string>
#include <vector>

#include "meshcrowd/attention.hpp"
#include "meshcrowd/bodymodel.hpp"
#include "meshcrowd/losses.hpp"
#include "meshcrowd/ndgrad/kernel_checks.hpp"
#include "meshcrowd/pipeline.hpp"

namespace meshcrowd {

namespace suite_detail {

using ndgrad::NamedCheck;
using ndgrad::NamedTensors;
using ndgrad::Tape;
using ndgrad::Tensor;
using ndgrad::uniform_tensor;
using ndgrad::Var;
namespace nd = ndgrad;

/// 6D rotations near identity, far from the Gram-Schmidt singularity.
inline Tensor rot6d_inputs(std::size_t n, std::uint64_t seed) {
  Tensor r = uniform_tensor({n, 6}, seed, -0.5, 0.5);
  for (std::size_t j = 0; j < n; ++j) {
    r(j, 0) += 1.5;
    r(j, 4) += 1.5;
  }
  return r;
}

inline NamedTensors store_inputs(const ParameterStore& s) {
  NamedTensors out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({s.names()[i], s.at(i)});
  return out;
}

inline void bind_all(BoundParams& P, const ParameterStore& s, const std::vector<Var>& v, std::size_t first) {
  for (std::size_t i = 0; i < s.size(); ++i) P.bind(s.names()[i], v[first + i]);
}

/// Joints of a person posed from random 6D rotations (used as loss targets).
inline Tensor joints_of(const body::BodyTemplate& tmpl, std::uint64_t seed, std::array<double, 3> t) {
  Tape tape;
  Var R = nd::reshape(body::rot6d_to_matrix(tape.constant(rot6d_inputs(tmpl.num_joints(), seed))),
                      {tmpl.num_joints(), 3, 3});
  Tensor tt({3}, {t[0], t[1], t[2]});
  return body::body_forward(tape, tmpl, R, tape.constant(uniform_tensor({tmpl.num_betas()}, seed + 1)),
                            tape.constant(tt))
      .joints.value();
}

inline void add_body_checks(std::vector<NamedCheck>& out) {
  out.push_back({"bodymodel.chain",
                 [](Tape& tape, const std::vector<Var>& v) {
                   static const body::BodyTemplate tmpl = body::make_template();
                   const auto cam = body::CameraIntrinsics::for_image(64, 60.0);
                   Var R = nd::reshape(body::rot6d_to_matrix(v[1]), {8, 3, 3});
                   auto o = body::body_forward(tape, tmpl, R, v[0], v[2]);
                   // Leaf rotations and some shape directions leave the joints
                   // fixed, so the projected mesh is contracted as well.
                   Var j = nd::dot(body::project(o.joints, cam), tape.constant(uniform_tensor({8, 2}, 9, -0.02, 0.02)));
                   Var m = nd::dot(body::project(o.vertices, cam),
                                   tape.constant(uniform_tensor({tmpl.num_vertices(), 2}, 10, -0.02, 0.02)));
                   return nd::add(j, m);
                 },
                 {{"beta", uniform_tensor({4}, 3)}, {"rot6d", rot6d_inputs(8, 4)}, {"t", Tensor({3}, {0.1, -0.2, 5.0})}},
                 {}});
}

inline void add_attention_checks(std::vector<NamedCheck>& out) {
  out.push_back({"attention.bilinear",
                 [](Tape& t, const std::vector<Var>& v) {
                   return nd::dot(attn::bilinear_sample(v[0], v[1]), t.constant(uniform_tensor({3}, 51)));
                 },
                 {{"map", uniform_tensor({3, 4, 5}, 52)}, {"p", Tensor({2}, {1.37, 2.21})}},
                 {}});

  static const attn::DeformAttnConfig cfg{4, 2, 2, 2};
  static const ParameterStore store = [] {
    ParameterStore s;
    Rng rng(53);
    attn::init_deform_attn(s, "a", cfg, rng);
    s.get("a.offset.w") = uniform_tensor({4, 16}, 54, -0.02, 0.02);
    s.get("a.attn.w") = uniform_tensor({4, 8}, 55);
    s.get("a.value.b") = uniform_tensor({4}, 56);
    return s;
  }();
  NamedTensors inputs{{"queries", uniform_tensor({2, 4}, 57, -0.5, 0.5)}, {"maps", uniform_tensor({20, 4}, 58)}};
  for (auto& p : store_inputs(store)) inputs.push_back(std::move(p));
  // References keep every initial sample about 0.3 cells from grid lines.
  out.push_back({"attention.deform",
                 [](Tape& t, const std::vector<Var>& v) {
                   BoundParams P(t, store);
                   bind_all(P, store, v, 2);
                   attn::FeatureMapSet mem{{{4, 4}, {2, 2}}, v[1]};
                   Var refs = t.constant(Tensor({2, 2}, {0.2, 0.45, 0.7, 0.575}));
                   return nd::dot(attn::deform_attn(P, "a", cfg, v[0], refs, mem),
                                  t.constant(uniform_tensor({2, 4}, 59)));
                 },
                 inputs,
                 {}});
}

inline void add_loss_checks(std::vector<NamedCheck>& out) {
  static const body::BodyTemplate tmpl = body::make_template();
  static const Tensor gt_a = joints_of(tmpl, 61, {0.3, 0.1, 4.0});
  static const Tensor gt_b = joints_of(tmpl, 62, {-0.4, 0.0, 6.0});
  static const Tensor gt = [] {
    Tensor t({16, 3});
    std::copy(gt_a.data.begin(), gt_a.data.end(), t.data.begin());
    std::copy(gt_b.data.begin(), gt_b.data.end(), t.data.begin() + 24);
    return t;
  }();
  // Predictions: the targets plus a perturbation large enough that no |.|
  // argument sits near its kink.
  Tensor pred = gt;
  Tensor noise = ndgrad::signed_away_from_zero({16, 3}, 63, 0.05);
  for (std::size_t i = 0; i < pred.size(); ++i) pred.data[i] += 0.1 * noise.data[i];

  out.push_back({"losses.3d",
                 [](Tape& t, const std::vector<Var>& v) { return losses::loss_3d(v[0], t.constant(gt)); },
                 {{"joints", pred}},
                 {}});
  out.push_back({"losses.2d",
                 [](Tape& t, const std::vector<Var>& v) {
                   const auto cam = body::CameraIntrinsics::for_image(64, 60.0);
                   Tensor vis({8}, 1.0);
                   vis.data[3] = 0.0;
                   Tensor target = body::project_points(gt_a, cam);
                   Tensor off = ndgrad::signed_away_from_zero({8, 2}, 64, 0.2);
                   for (std::size_t i = 0; i < target.size(); ++i) target.data[i] += off.data[i];
                   return losses::loss_2d(t, {{v[0], target, vis}}, cam, 64.0);
                 },
                 {{"joints", Tensor({8, 3}, std::vector<double>(pred.data.begin(), pred.data.begin() + 24))}},
                 {}});
  out.push_back({"losses.smpl",
                 [](Tape& t, const std::vector<Var>& v) {
                   return losses::loss_smpl(v[0], v[1], t.constant(uniform_tensor({2, 8, 3, 3}, 65)),
                                            t.constant(uniform_tensor({2, 4}, 66)));
                 },
                 {{"theta", uniform_tensor({2, 8, 3, 3}, 67)}, {"beta", uniform_tensor({2, 4}, 68)}},
                 {}});
  out.push_back({"losses.rt_distance",
                 [](Tape& t, const std::vector<Var>& v) {
                   return losses::loss_rt_distance(losses::displacement_matrix(v[0]),
                                                   losses::displacement_matrix(t.constant(gt)));
                 },
                 {{"joints", pred}},
                 {}});
  out.push_back({"losses.rt_directional",
                 [](Tape& t, const std::vector<Var>& v) {
                   return losses::loss_rt_directional(losses::displacement_matrix(v[0]),
                                                      losses::displacement_matrix(t.constant(gt)));
                 },
                 {{"joints", pred}},
                 {}});
  out.push_back({"losses.presence",
                 [](Tape&, const std::vector<Var>& v) {
                   losses::MatchResult m;
                   m.pairs = {{1, 0}, {3, 1}};
                   m.unmatched_queries = {0, 2};
                   return losses::loss_presence(v[0], m);
                 },
                 {{"logits", uniform_tensor({4}, 69, -3, 3)}},
                 {}});
}

/// Tiny model on a 32 x 32 image with a two-person target.
inline void add_model_checks(std::vector<NamedCheck>& out) {
  static const model::ModelConfig cfg = [] {
    model::ModelConfig c;
    c.image_size = 32;
    c.channels = 16;
    c.encoder_layers = 2;
    c.decoder_layers = 2;
    c.heads = 2;
    c.points = 2;
    c.queries = 2;
    c.backbone_widths = {8, 8, 16, 16};
    c.focal = 30.0;
    return c;
  }();
  static const Scene scene = [] {
    const auto tmpl = cfg.body_template();
    const auto cam = cfg.camera();
    Scene s;
    s.image = uniform_tensor({3, 32, 32}, 72, 0.0, 1.0);
    for (int i = 0; i < 2; ++i) {
      Tape tape;
      PersonGT g;
      g.rotations = nd::reshape(body::rot6d_to_matrix(tape.constant(rot6d_inputs(8, 73 + i))), {8, 3, 3}).value();
      g.beta = uniform_tensor({4}, 75 + i);
      g.translation = {i == 0 ? -0.6 : 0.7, 0.1, 4.0 + i};
      auto mj = body::mesh_for(g.state(), tmpl);
      g.joints3d = mj.joints;
      g.vertices = mj.vertices;
      g.joints2d = body::project_points(mj.joints, cam);
      g.visibility = Tensor({8}, 1.0);
      s.people.push_back(std::move(g));
    }
    return s;
  }();
  // Initial sampling points sit on cell centres, where bilinear sampling is
  // not differentiable in the location; shift them off the grid.
  static const ParameterStore store = [] {
    ParameterStore s = model::init_model(cfg, 71);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto& n = s.names()[i];
      if (n.size() > 9 && n.compare(n.size() - 9, 9, ".offset.b") == 0)
        for (std::size_t k = 0; k < s.at(i).size(); ++k) s.at(i).data[k] += k % 2 ? 0.35 : 0.3;
    }
    return s;
  }();
  ndgrad::GradCheckOptions opt;
  opt.tol = 1e-3;
  opt.max_coords = 4;
  opt.seed = 77;
  opt.min_abs_grad = 1e-6;
  out.push_back({"model.end_to_end",
                 [](Tape& t, const std::vector<Var>& v) {
                   static const body::BodyTemplate tmpl = cfg.body_template();
                   BoundParams P(t, store);
                   bind_all(P, store, v, 0);
                   auto preds = model::model_forward(P, cfg, t.constant(scene.image));
                   return losses::scene_loss(t, tmpl, cfg.camera(), 32.0, preds, scene, {}).total;
                 },
                 store_inputs(store),
                 opt});
}

}  // namespace suite_detail

/// Every registered check, in a fixed order.
inline std::vector<ndgrad::NamedCheck> gradcheck_suite() {
  auto checks = ndgrad::kernel_checks();
  suite_detail::add_body_checks(checks);
  suite_detail::add_attention_checks(checks);
  suite_detail::add_loss_checks(checks);
  suite_detail::add_model_checks(checks);
  return checks;
}

inline ndgrad::GradCheckReport run_check(const ndgrad::NamedCheck& c) {
  return ndgrad::grad_check(c.fn, c.inputs, c.options);
}

}  // namespace meshcrowd
