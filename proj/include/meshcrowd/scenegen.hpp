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

// Synthetic multi-person scenes: sampled bodies, a splat rendering that a
// small network can read, and datasets on disk reproducible from a manifest.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "meshcrowd/bodymodel.hpp"
#include "meshcrowd/parallel.hpp"
#include "meshcrowd/rng.hpp"
#include "meshcrowd/scene.hpp"

namespace meshcrowd::scenegen {

using ndgrad::Tensor;

struct GeneratorConfig {
  std::size_t image_size = 64;
  double focal = 60.0;
  std::size_t min_people = 2;
  std::size_t max_people = 3;
  double max_angle = 0.6;  // radians, per joint
  double beta_range = 2.0;
  double tz_min = 3.0, tz_max = 8.0;
  double margin = 2.0;               // px kept free at the image border
  double min_root_separation = 8.0;  // px between projected roots
  double occlusion = 0.0;            // per-joint drop probability
  std::size_t max_attempts = 10000;
  body::TemplateConfig body;

  body::CameraIntrinsics camera() const { return body::CameraIntrinsics::for_image(image_size, focal); }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("generator config: " + m); };
    if (image_size < 8) fail("image_size must be >= 8");
    if (!(focal > 0)) fail("focal must be positive");
    if (min_people < 1 || max_people < min_people) fail("need 1 <= min_people <= max_people");
    if (!(max_angle >= 0)) fail("max_angle must be >= 0");
    if (!(beta_range >= 0)) fail("beta_range must be >= 0");
    if (!(tz_min > 0) || tz_max < tz_min) fail("need 0 < tz_min <= tz_max");
    if (!(margin >= 0) || 2 * margin >= static_cast<double>(image_size)) fail("margin out of range");
    if (!(min_root_separation >= 0)) fail("min_root_separation must be >= 0");
    if (!(occlusion >= 0 && occlusion < 1)) fail("occlusion must be in [0, 1)");
    if (max_attempts == 0) fail("max_attempts must be >= 1");
    if (body.num_joints < 1 || body.num_joints > 8 || body.ring_size < 3 || body.num_betas < 1)
      fail("invalid body template sizes");
  }
};

inline nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"image_size", c.image_size},
          {"focal", c.focal},
          {"min_people", c.min_people},
          {"max_people", c.max_people},
          {"max_angle", c.max_angle},
          {"beta_range", c.beta_range},
          {"tz_min", c.tz_min},
          {"tz_max", c.tz_max},
          {"margin", c.margin},
          {"min_root_separation", c.min_root_separation},
          {"occlusion", c.occlusion},
          {"max_attempts", c.max_attempts},
          {"body", body::to_json(c.body)}};
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"image_size", "focal", "min_people", "max_people", "max_angle", "beta_range", "tz_min", "tz_max",
                 "margin", "min_root_separation", "occlusion", "max_attempts", "body"},
             "generator");
  GeneratorConfig c;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.focal = j.value("focal", c.focal);
    c.min_people = j.value("min_people", c.min_people);
    c.max_people = j.value("max_people", c.max_people);
    c.max_angle = j.value("max_angle", c.max_angle);
    c.beta_range = j.value("beta_range", c.beta_range);
    c.tz_min = j.value("tz_min", c.tz_min);
    c.tz_max = j.value("tz_max", c.tz_max);
    c.margin = j.value("margin", c.margin);
    c.min_root_separation = j.value("min_root_separation", c.min_root_separation);
    c.occlusion = j.value("occlusion", c.occlusion);
    c.max_attempts = j.value("max_attempts", c.max_attempts);
    if (j.contains("body")) {
      check_keys(j["body"], {"num_joints", "ring_size", "num_betas"}, "generator.body");
      c.body = body::template_config_from_json(j["body"]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Sampling

/// Pose, shape and placement only (no rejection, no derived ground truth).
inline body::PersonState sample_state(Rng& rng, const GeneratorConfig& cfg, const body::BodyTemplate& tmpl) {
  const std::size_t K = tmpl.num_joints(), B = tmpl.num_betas();
  body::PersonState s;
  s.rotations = Tensor({K, 3, 3});
  for (std::size_t k = 0; k < K; ++k) {
    const std::array<double, 3> axis{rng.normal(), rng.normal(), rng.normal()};
    const double angle = rng.uniform(0.0, cfg.max_angle);
    auto R = body::axis_angle_to_matrix(axis, angle);
    std::copy(R.begin(), R.end(), s.rotations.data.begin() + static_cast<std::ptrdiff_t>(k * 9));
  }
  s.beta = Tensor({B});
  for (double& b : s.beta.data) b = rng.uniform(-cfg.beta_range, cfg.beta_range);
  const double tz = rng.uniform(cfg.tz_min, cfg.tz_max);
  // Box of translations whose root lands inside the margin-shrunk frame.
  const double half = (static_cast<double>(cfg.image_size) / 2.0 - cfg.margin) / cfg.focal * tz;
  s.translation = {rng.uniform(-half, half), rng.uniform(-half, half), tz};
  return s;
}

/// Derived ground truth for a person state; visibility all ones.
inline PersonGT complete_person(const body::PersonState& s, const body::BodyTemplate& tmpl,
                                const body::CameraIntrinsics& cam) {
  PersonGT g;
  g.rotations = s.rotations;
  g.beta = s.beta;
  g.translation = s.translation;
  auto mj = body::mesh_for(s, tmpl);
  g.joints3d = mj.joints;
  g.vertices = mj.vertices;
  g.joints2d = body::project_points(mj.joints, cam);
  g.visibility = Tensor({tmpl.num_joints()}, 1.0);
  return g;
}

inline bool in_frame(const PersonGT& g, const GeneratorConfig& cfg) {
  const double lo = cfg.margin, hi = static_cast<double>(cfg.image_size) - cfg.margin;
  for (std::size_t k = 0; k < g.joints3d.dim(0); ++k) {
    const double u = g.joints2d(k, 0), v = g.joints2d(k, 1);
    if (!(u >= lo && u <= hi && v >= lo && v <= hi)) return false;
  }
  return true;
}

/// Rejection-samples a person whose joints all project inside the frame and
/// whose root keeps min_root_separation from the roots in `others`.
inline PersonGT sample_person(Rng& rng, const GeneratorConfig& cfg, const body::BodyTemplate& tmpl,
                              const std::vector<PersonGT>& others = {}) {
  const auto cam = cfg.camera();
  for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const auto state = sample_state(rng, cfg, tmpl);
    const auto joints = body::mesh_for(state, tmpl).joints;
    bool in_front = true;
    for (std::size_t k = 0; k < joints.dim(0); ++k) in_front = in_front && joints(k, 2) > 1e-6;
    if (!in_front) continue;
    PersonGT g = complete_person(state, tmpl, cam);
    if (!in_frame(g, cfg)) continue;
    bool apart = true;
    for (const auto& o : others) {
      const double du = o.joints2d(0, 0) - g.joints2d(0, 0), dv = o.joints2d(0, 1) - g.joints2d(0, 1);
      apart = apart && std::hypot(du, dv) >= cfg.min_root_separation;
    }
    if (apart) return g;
  }
  throw ConfigError("generator: no valid person after max_attempts draws; loosen the placement settings");
}

// ---------------------------------------------------------------------------
// Rendering

inline constexpr double kJointSigmaU = 1.0, kJointSigmaV = 1.4;
inline constexpr double kDepthSigma = 3.0, kDepthGain = 3.0;
inline constexpr double kLimbSigma = 0.7, kLimbGain = 0.5;

namespace detail {

/// Adds amp * exp(-0.5 * ((x-u)^2/su^2 + (y-v)^2/sv^2)) within 3 sigma,
/// evaluated at pixel centres (x + 0.5, y + 0.5).
inline void splat(Tensor& img, std::size_t ch, double u, double v, double su, double sv, double amp) {
  const long S = static_cast<long>(img.dim(2));
  const long x0 = std::max(0L, static_cast<long>(std::floor(u - 3 * su))),
             x1 = std::min(S - 1, static_cast<long>(std::ceil(u + 3 * su)));
  const long y0 = std::max(0L, static_cast<long>(std::floor(v - 3 * sv))),
             y1 = std::min(S - 1, static_cast<long>(std::ceil(v + 3 * sv)));
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      const double dx = (static_cast<double>(x) + 0.5 - u) / su, dy = (static_cast<double>(y) + 0.5 - v) / sv;
      if (dx * dx + dy * dy > 9.0) continue;
      img(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) += amp * std::exp(-0.5 * (dx * dx + dy * dy));
    }
}

inline void line_splat(Tensor& img, std::size_t ch, double ua, double va, double ub, double vb, double sigma,
                       double amp) {
  const long S = static_cast<long>(img.dim(2));
  const double r = 3 * sigma;
  const long x0 = std::max(0L, static_cast<long>(std::floor(std::min(ua, ub) - r))),
             x1 = std::min(S - 1, static_cast<long>(std::ceil(std::max(ua, ub) + r)));
  const long y0 = std::max(0L, static_cast<long>(std::floor(std::min(va, vb) - r))),
             y1 = std::min(S - 1, static_cast<long>(std::ceil(std::max(va, vb) + r)));
  const double du = ub - ua, dv = vb - va, len2 = du * du + dv * dv;
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      double t = len2 > 0 ? ((px - ua) * du + (py - va) * dv) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double ex = px - (ua + t * du), ey = py - (va + t * dv), d2 = (ex * ex + ey * ey) / (sigma * sigma);
      if (d2 > 9.0) continue;
      img(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) += amp * std::exp(-0.5 * d2);
    }
}

}  // namespace detail

/// Channel 0: joint splats with intensity (k+1)/K. Channel 1: a depth splat of
/// kDepthGain / t.z at the projected root. Channel 2: limb segments between
/// visible joints and their parents. Contributions add; the sum clamps at 1.
/// Hidden joints (visibility 0) are not drawn.
inline Tensor render_scene(const std::vector<PersonGT>& people, const std::vector<int>& parents, std::size_t size) {
  Tensor img({3, size, size});
  const double K = static_cast<double>(parents.size());
  for (const auto& g : people) {
    const auto& x = g.joints2d;
    for (std::size_t k = 0; k < parents.size(); ++k) {
      if (g.visibility.data[k] <= 0) continue;
      detail::splat(img, 0, x(k, 0), x(k, 1), kJointSigmaU, kJointSigmaV, (static_cast<double>(k) + 1.0) / K);
      const int p = parents[k];
      if (p >= 0 && g.visibility.data[static_cast<std::size_t>(p)] > 0) {
        const auto pu = static_cast<std::size_t>(p);
        detail::line_splat(img, 2, x(pu, 0), x(pu, 1), x(k, 0), x(k, 1), kLimbSigma, kLimbGain);
      }
    }
    detail::splat(img, 1, x(0, 0), x(0, 1), kDepthSigma, kDepthSigma, kDepthGain / g.translation[2]);
  }
  for (double& v : img.data) v = std::min(v, 1.0);
  return img;
}

/// Scene `index` of a dataset: its own Rng seeded by derive_seed(master, index).
inline Scene generate_scene(const GeneratorConfig& cfg, const body::BodyTemplate& tmpl, std::uint64_t master_seed,
                            std::uint64_t index) {
  Scene s;
  s.id = index;
  s.seed = derive_seed(master_seed, index);
  Rng rng(s.seed);
  const std::size_t n = cfg.min_people + rng.index(cfg.max_people - cfg.min_people + 1);
  for (std::size_t i = 0; i < n; ++i) s.people.push_back(sample_person(rng, cfg, tmpl, s.people));
  if (cfg.occlusion > 0) {
    for (auto& g : s.people)
      for (double& v : g.visibility.data) v = rng.uniform() < cfg.occlusion ? 0.0 : 1.0;
  }
  s.image = render_scene(s.people, tmpl.parents, cfg.image_size);
  return s;
}

// ---------------------------------------------------------------------------
// Datasets on disk

inline constexpr const char* kDatasetSchema = "meshcrowd-dataset/1";

struct DatasetSpec {
  GeneratorConfig generator;
  std::uint64_t master_seed = 0;
  std::size_t count = 0;
};

struct ManifestEntry {
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
  std::string file;  // relative to the dataset directory
};

struct Manifest {
  DatasetSpec spec;
  std::vector<ManifestEntry> scenes;
};

inline std::string scene_file_name(std::uint64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scenes/%06llu.json", static_cast<unsigned long long>(i));
  return buf;
}

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json scenes = nlohmann::json::array();
  for (const auto& e : m.scenes) scenes.push_back({{"id", e.id}, {"seed", e.seed}, {"file", e.file}});
  return {{"schema", kDatasetSchema},
          {"generator", to_json(m.spec.generator)},
          {"camera", body::to_json(m.spec.generator.camera())},
          {"master_seed", m.spec.master_seed},
          {"count", m.spec.count},
          {"scenes", scenes}};
}

inline Manifest manifest_from_json(const nlohmann::json& j, const std::string& where = "manifest") {
  require_schema(j, kDatasetSchema, where);
  check_keys(j, {"schema", "generator", "camera", "master_seed", "count", "scenes"}, where);
  Manifest m;
  try {
    m.spec.generator = generator_config_from_json(j.at("generator"));
    m.spec.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.spec.count = j.at("count").get<std::size_t>();
    for (const auto& e : j.at("scenes"))
      m.scenes.push_back({e.at("id").get<std::uint64_t>(), e.at("seed").get<std::uint64_t>(),
                          e.at("file").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  if (m.scenes.size() != m.spec.count) throw ConfigError(where + ": scene list length differs from count");
  return m;
}

/// Generation request as written by hand: {"generator": {...}, "scenes": N, "seed": S}.
/// A dataset manifest is accepted too, so any dataset can be regenerated from it.
inline DatasetSpec dataset_spec_from_json(const nlohmann::json& j, const std::string& where = "gen config") {
  if (j.is_object() && j.contains("schema")) return manifest_from_json(j, where).spec;
  check_keys(j, {"generator", "scenes", "seed"}, where);
  DatasetSpec s;
  try {
    if (j.contains("generator")) s.generator = generator_config_from_json(j["generator"]);
    s.count = j.at("scenes").get<std::size_t>();
    s.master_seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  if (s.count == 0) throw ConfigError(where + ": scenes must be >= 1");
  return s;
}

inline Manifest make_manifest(const DatasetSpec& spec) {
  Manifest m;
  m.spec = spec;
  for (std::uint64_t i = 0; i < spec.count; ++i)
    m.scenes.push_back({i, derive_seed(spec.master_seed, i), scene_file_name(i)});
  return m;
}

/// Writes manifest.json and scenes/*.json under `dir`. An existing dataset is
/// only replaced when `force` is set (IoError otherwise).
inline Manifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& dir, bool force) {
  namespace fs = std::filesystem;
  spec.generator.validate();
  const auto tmpl = body::make_template(spec.generator.body);
  std::error_code ec;
  if (fs::exists(dir / "manifest.json", ec) || fs::exists(dir / "scenes", ec)) {
    if (!force) throw IoError(dir.string() + " already holds a dataset; pass --force to regenerate");
    fs::remove_all(dir / "scenes", ec);
    fs::remove(dir / "manifest.json", ec);
  }
  fs::create_directories(dir / "scenes", ec);
  if (ec) throw IoError("cannot create " + (dir / "scenes").string() + ": " + ec.message());
  Manifest m = make_manifest(spec);
  parallel_for(m.scenes.size(), [&](std::size_t i) {
    Scene s = generate_scene(spec.generator, tmpl, spec.master_seed, i);
    write_text((dir / m.scenes[i].file).string(), meshcrowd::to_json(s).dump());
  });
  write_text((dir / "manifest.json").string(), to_json(m).dump(2) + "\n");
  return m;
}

struct Dataset {
  Manifest manifest;
  std::vector<Scene> scenes;
};

inline Manifest load_manifest(const std::filesystem::path& dir) {
  const auto path = (dir / "manifest.json").string();
  return manifest_from_json(read_json(path), path);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.manifest = load_manifest(dir);
  d.scenes.resize(d.manifest.scenes.size());
  const auto& g = d.manifest.spec.generator;
  parallel_for(d.scenes.size(), [&](std::size_t i) {
    const auto path = (dir / d.manifest.scenes[i].file).string();
    d.scenes[i] = scene_from_json(read_json(path), path);
    if (d.scenes[i].image.shape != ndgrad::Shape{3, g.image_size, g.image_size})
      throw ConfigError(path + ": image shape does not match the manifest");
  });
  return d;
}

}  // namespace meshcrowd::scenegen
