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

// Run configuration, AdamW, the batched training loop and model evaluation.

#pragma once

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "meshcrowd/losses.hpp"
#include "meshcrowd/metrics.hpp"
#include "meshcrowd/parallel.hpp"
#include "meshcrowd/pipeline.hpp"
#include "meshcrowd/scenegen.hpp"

namespace meshcrowd::train {

using ndgrad::Tensor;

/// Non-finite loss or gradient during training (CLI exit code 4).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimizerConfig {
  double lr = 5e-5;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct RunConfig {
  model::ModelConfig model;
  losses::LossWeights loss;
  OptimizerConfig optimizer;
  std::size_t steps = 500;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::filesystem::path train_data;
  std::filesystem::path eval_data;  // optional
  std::filesystem::path out = "run";
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t eval_every = 0;        // 0: no periodic eval
  double eval_threshold = 0.5;
};

inline nlohmann::json to_json(const OptimizerConfig& o) {
  return {{"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}, {"weight_decay", o.weight_decay}};
}

inline nlohmann::json to_json(const RunConfig& r) {
  return {{"model", model::to_json(r.model)},
          {"loss", losses::to_json(r.loss)},
          {"optimizer", to_json(r.optimizer)},
          {"steps", r.steps},
          {"batch_size", r.batch_size},
          {"seed", r.seed},
          {"train_data", r.train_data.string()},
          {"eval_data", r.eval_data.string()},
          {"out", r.out.string()},
          {"checkpoint_every", r.checkpoint_every},
          {"eval_every", r.eval_every},
          {"eval_threshold", r.eval_threshold}};
}

/// Relative paths are taken relative to `base` (the config file's directory).
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base = {}) {
  check_keys(j, {"model", "loss", "optimizer", "steps", "batch_size", "seed", "train_data", "eval_data", "out",
                 "checkpoint_every", "eval_every", "eval_threshold"},
             "run config");
  RunConfig r;
  auto path = [&](const char* key) -> std::filesystem::path {
    if (!j.contains(key)) return {};
    std::filesystem::path p = j[key].get<std::string>();
    return p.is_relative() && !base.empty() ? base / p : p;
  };
  try {
    if (j.contains("model")) r.model = model::model_config_from_json(j["model"]);
    if (j.contains("loss")) r.loss = losses::loss_weights_from_json(j["loss"]);
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      check_keys(o, {"lr", "beta1", "beta2", "eps", "weight_decay"}, "optimizer");
      r.optimizer.lr = o.value("lr", r.optimizer.lr);
      r.optimizer.beta1 = o.value("beta1", r.optimizer.beta1);
      r.optimizer.beta2 = o.value("beta2", r.optimizer.beta2);
      r.optimizer.eps = o.value("eps", r.optimizer.eps);
      r.optimizer.weight_decay = o.value("weight_decay", r.optimizer.weight_decay);
    }
    r.steps = j.value("steps", r.steps);
    r.batch_size = j.value("batch_size", r.batch_size);
    r.seed = j.value("seed", r.seed);
    r.train_data = path("train_data");
    r.eval_data = path("eval_data");
    if (j.contains("out")) r.out = path("out");
    r.checkpoint_every = j.value("checkpoint_every", r.checkpoint_every);
    r.eval_every = j.value("eval_every", r.eval_every);
    r.eval_threshold = j.value("eval_threshold", r.eval_threshold);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  const auto& o = r.optimizer;
  if (!(o.lr > 0) || !(o.beta1 >= 0 && o.beta1 < 1) || !(o.beta2 >= 0 && o.beta2 < 1) || !(o.eps > 0) ||
      !(o.weight_decay >= 0))
    throw ConfigError("run config: invalid optimizer settings");
  if (r.batch_size == 0) throw ConfigError("run config: batch_size must be >= 1");
  if (!(r.eval_threshold >= 0 && r.eval_threshold < 1)) throw ConfigError("run config: eval_threshold must be in [0, 1)");
  if (r.train_data.empty()) throw ConfigError("run config: train_data is required");
  return r;
}

/// SHA-256 of the canonical (key-sorted, compact) JSON dump, hex encoded.
inline std::string config_hash(const nlohmann::json& j) {
  const std::string text = j.dump();
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("config_hash: digest failed");
  std::ostringstream ss;
  for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return ss.str();
}

/// Hash of everything that can change a run's numbers. The output
/// directory is left out so a rerun elsewhere logs the same hash.
inline std::string run_hash(const RunConfig& r) {
  auto j = to_json(r);
  j.erase("out");
  return config_hash(j);
}

/// Dataset and model must agree on image size, camera, body and capacity.
inline void check_compatible(const model::ModelConfig& m, const scenegen::GeneratorConfig& g, const std::string& what) {
  auto fail = [&](const std::string& msg) { throw ConfigError(what + ": " + msg); };
  if (g.image_size != m.image_size) fail("image_size differs from the model");
  if (g.focal != m.focal) fail("focal length differs from the model");
  if (g.body.num_joints != m.body.num_joints || g.body.ring_size != m.body.ring_size ||
      g.body.num_betas != m.body.num_betas)
    fail("body template differs from the model");
  if (g.max_people > m.queries) fail("max_people exceeds the number of queries");
}

// ---------------------------------------------------------------------------
// AdamW

/// Adaptive moments with decoupled weight decay, applied to every parameter.
class AdamW {
 public:
  AdamW(const ParameterStore& store, OptimizerConfig cfg) : cfg_(cfg) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      m_.push_back(Tensor::zeros(store.at(i).shape));
      v_.push_back(Tensor::zeros(store.at(i).shape));
    }
  }

  void step(ParameterStore& store, const std::vector<Tensor>& grads) {
    if (grads.size() != store.size()) throw std::invalid_argument("AdamW: gradient count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& p = store.at(i).data;
      auto& m = m_[i].data;
      auto& v = v_[i].data;
      const auto& g = grads[i].data;
      for (std::size_t k = 0; k < p.size(); ++k) {
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        const double mhat = m[k] / c1, vhat = v[k] / c2;
        p[k] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[k]);
      }
    }
  }

  std::uint64_t steps_taken() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// One scene: loss terms and parameter gradients

struct TermValues {
  double total = 0, l3d = 0, l2d = 0, smpl = 0, rt_distance = 0, rt_directional = 0, presence = 0;

  TermValues& operator+=(const TermValues& o) {
    total += o.total;
    l3d += o.l3d;
    l2d += o.l2d;
    smpl += o.smpl;
    rt_distance += o.rt_distance;
    rt_directional += o.rt_directional;
    presence += o.presence;
    return *this;
  }
  TermValues scaled(double s) const {
    return {total * s, l3d * s, l2d * s, smpl * s, rt_distance * s, rt_directional * s, presence * s};
  }
  bool finite() const {
    for (double v : {total, l3d, l2d, smpl, rt_distance, rt_directional, presence})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline nlohmann::json to_json(const TermValues& t) {
  return {{"total", t.total},
          {"l3d", t.l3d},
          {"l2d", t.l2d},
          {"smpl", t.smpl},
          {"rt_distance", t.rt_distance},
          {"rt_directional", t.rt_directional},
          {"presence", t.presence}};
}

struct SceneResult {
  TermValues terms;
  std::vector<Tensor> grads;  // store order; empty when not requested
  int skipped_2d = 0;
};

/// Static context shared by every scene evaluation of one model.
struct ModelContext {
  model::ModelConfig config;
  body::BodyTemplate tmpl;
  body::CameraIntrinsics cam;

  explicit ModelContext(const model::ModelConfig& c) : config(c), tmpl(c.body_template()), cam(c.camera()) {}
};

inline SceneResult scene_step(const ParameterStore& store, const ModelContext& ctx, const Scene& scene,
                              const losses::LossWeights& w, bool with_grads) {
  ndgrad::Tape tape;
  BoundParams P(tape, store, with_grads);
  // Non-finite activations surface as domain errors inside the rotation decoder.
  auto preds = [&] {
    try {
      return model::model_forward(P, ctx.config, tape.constant(scene.image));
    } catch (const std::domain_error& e) {
      throw NumericalError("scene " + std::to_string(scene.id) + ": " + e.what());
    }
  }();
  for (const auto* v : {&preds.rotations, &preds.beta, &preds.translation, &preds.presence})
    if (!v->value().all_finite()) throw NumericalError("non-finite model output on scene " + std::to_string(scene.id));
  auto l = losses::scene_loss(tape, ctx.tmpl, ctx.cam, static_cast<double>(ctx.config.image_size), preds, scene, w);
  SceneResult r;
  r.terms = {l.total.item(),       l.terms.l3d.item(),           l.terms.l2d.item(),     l.terms.smpl.item(),
             l.terms.rt_distance.item(), l.terms.rt_directional.item(), l.terms.presence.item()};
  r.skipped_2d = l.skipped_2d;
  if (with_grads && r.terms.finite()) r.grads = P.gradients(tape.backward(l.total));
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

/// Scene indices for step `step`: consecutive slices of per-epoch shuffles,
/// each epoch shuffled by its own seeded stream.
inline std::vector<std::size_t> batch_indices(std::size_t n, std::size_t batch, std::uint64_t seed, std::size_t step) {
  std::vector<std::size_t> out;
  std::size_t pos = step * batch;
  std::size_t epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(n);
  while (out.size() < batch) {
    const std::size_t e = pos / n;
    if (e != epoch) {
      epoch = e;
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(derive_seed(seed, 0x5eed0000ULL + e));
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    }
    out.push_back(perm[pos % n]);
    ++pos;
  }
  return out;
}

struct StepRecord {
  std::size_t step = 0;
  TermValues terms;  // batch means
  int skipped_2d = 0;
  double wall_ms = 0;
};

/// Mean loss and gradient over a batch. Per-scene work may run in parallel;
/// the reduction is a fold in batch order.
inline std::pair<TermValues, std::vector<Tensor>> batch_gradient(const ParameterStore& store, const ModelContext& ctx,
                                                                  const std::vector<const Scene*>& batch,
                                                                  const losses::LossWeights& w, int* skipped,
                                                                  std::size_t threads) {
  std::vector<SceneResult> results(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { results[i] = scene_step(store, ctx, *batch[i], w, true); }, threads);
  TermValues mean;
  std::vector<Tensor> grads;
  for (std::size_t i = 0; i < results.size(); ++i) {
    mean += results[i].terms;
    if (skipped) *skipped += results[i].skipped_2d;
    if (!results[i].terms.finite()) continue;
    if (grads.empty()) {
      grads = results[i].grads;
    } else {
      for (std::size_t p = 0; p < grads.size(); ++p)
        for (std::size_t k = 0; k < grads[p].data.size(); ++k) grads[p].data[k] += results[i].grads[p].data[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& g : grads)
    for (double& v : g.data) v *= inv;
  return {mean.scaled(inv), grads};
}

// ---------------------------------------------------------------------------
// Evaluation

/// Runs the model on every scene, keeps queries above `threshold`, and
/// scores them. `oracle` replaces predictions with the ground truth itself.
inline metrics::MetricReport evaluate(const ParameterStore* store, const ModelContext& ctx,
                                      const std::vector<Scene>& scenes, double threshold, bool oracle,
                                      std::size_t threads = worker_threads()) {
  metrics::MetricReport report;
  report.scenes.resize(scenes.size());
  parallel_for(
      scenes.size(),
      [&](std::size_t i) {
        std::vector<metrics::PredictedPerson> preds;
        if (oracle) {
          for (const auto& g : scenes[i].people) preds.push_back({g.joints3d, g.vertices});
        } else {
          ndgrad::Tape tape;
          BoundParams P(tape, *store, false);
          auto p = model::model_forward(P, ctx.config, tape.constant(scenes[i].image));
          for (const auto& d : model::decode_people(p, threshold))
            preds.push_back(metrics::predicted_person(d.person, ctx.tmpl));
        }
        report.scenes[i] = metrics::evaluate_scene(preds, scenes[i], ctx.cam, ctx.config.image_size);
      },
      threads);
  return report;
}

inline nlohmann::json eval_summary(const metrics::MetricReport& r) { return metrics::to_json(r).at("aggregate"); }

// ---------------------------------------------------------------------------
// Whole runs

struct TrainResult {
  ParameterStore params;
  std::vector<StepRecord> steps;
  std::string config_hash;
};

using LogSink = std::function<void(const nlohmann::json&)>;

/// Trains from init_model(config.model, seed). Each step logs one record;
/// step 0 is the loss before any update. Throws NumericalError on a
/// non-finite loss or gradient, after logging the offending step.
inline TrainResult train(const RunConfig& run, const std::vector<Scene>& train_scenes,
                         const std::vector<Scene>* eval_scenes = nullptr, const LogSink& log = {},
                         const std::function<void(const ParameterStore&, std::size_t)>& checkpoint = {},
                         std::size_t threads = worker_threads()) {
  if (train_scenes.empty()) throw ConfigError("train: no training scenes");
  for (const auto& s : train_scenes)
    if (s.people.size() > run.model.queries) throw ConfigError("train: a scene has more people than queries");
  const ModelContext ctx(run.model);
  TrainResult res;
  res.params = model::init_model(run.model, run.seed);
  res.config_hash = run_hash(run);
  AdamW opt(res.params, run.optimizer);
  if (log) log({{"event", "config"}, {"config_hash", res.config_hash}, {"config", to_json(run)}});

  auto run_eval = [&](std::size_t step) {
    if (!eval_scenes || !log) return;
    auto rep = evaluate(&res.params, ctx, *eval_scenes, run.eval_threshold, false, threads);
    log({{"event", "eval"}, {"step", step}, {"config_hash", res.config_hash}, {"metrics", eval_summary(rep)}});
  };

  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t step = 0; step <= run.steps; ++step) {
    if (run.eval_every && step % run.eval_every == 0) run_eval(step);
    if (step == run.steps) break;
    auto idx = batch_indices(train_scenes.size(), run.batch_size, run.seed, step);
    std::vector<const Scene*> batch;
    for (auto i : idx) batch.push_back(&train_scenes[i]);
    StepRecord rec;
    rec.step = step;
    auto [terms, grads] = batch_gradient(res.params, ctx, batch, run.loss, &rec.skipped_2d, threads);
    rec.terms = terms;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    bool finite = terms.finite();
    for (const auto& g : grads) finite = finite && g.all_finite();
    nlohmann::json line = {{"event", "step"},       {"step", step},
                           {"loss", to_json(terms)}, {"skipped_2d", rec.skipped_2d},
                           {"wall_ms", rec.wall_ms}, {"config_hash", res.config_hash}};
    if (!finite) {
      if (log) log(line);
      throw NumericalError("non-finite loss or gradient at step " + std::to_string(step) + ": " + to_json(terms).dump());
    }
    if (log) log(line);
    res.steps.push_back(rec);
    opt.step(res.params, grads);
    if (checkpoint && run.checkpoint_every && (step + 1) % run.checkpoint_every == 0 && step + 1 < run.steps)
      checkpoint(res.params, step + 1);
  }
  return res;
}

}  // namespace meshcrowd::train
