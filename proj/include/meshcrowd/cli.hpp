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

// The five commands behind the meshcrowd executable. Argument parsing lives
// in tools/meshcrowd.cpp; everything here is callable from tests.
//
// Exit codes: 0 ok, 2 config/schema, 3 I/O, 4 numerical failure (NaN during
// training or a failed gradient check), 1 anything unexpected.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "meshcrowd/gradcheck_suite.hpp"
#include "meshcrowd/train.hpp"

namespace meshcrowd::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kUnexpected = 1, kConfig = 2, kIo = 3, kNumerical = 4 };

struct Options {
  std::string command;
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool oracle = false;
  std::string only;
};

/// A missing config is a configuration problem (exit 2), unlike other files.
inline nlohmann::json load_config(const std::string& path) {
  if (path.empty()) throw ConfigError("--config is required for this command");
  if (!fs::is_regular_file(path)) throw ConfigError("config file not found: " + path);
  return read_json(path);
}

inline fs::path config_dir(const std::string& path) {
  auto p = fs::path(path).parent_path();
  return p.empty() ? fs::path(".") : p;
}

inline void require_dataset(const fs::path& dir, const std::string& what) {
  if (!fs::is_regular_file(dir / "manifest.json")) throw IoError(what + ": no dataset at " + dir.string());
}

// ---------------------------------------------------------------------------
// gen

inline int cmd_gen(const Options& o, std::ostream& out) {
  auto spec = scenegen::dataset_spec_from_json(load_config(o.config), o.config);
  if (o.seed) spec.master_seed = *o.seed;
  if (o.out.empty()) throw ConfigError("gen: --out is required");
  auto m = scenegen::generate_dataset(spec, o.out, o.force);
  out << "wrote " << m.scenes.size() << " scenes to " << o.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

inline std::string step_dir(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06zu", step);
  return buf;
}

inline int cmd_train(const Options& o, std::ostream& out) {
  auto run = train::run_config_from_json(load_config(o.config), config_dir(o.config));
  if (o.seed) run.seed = *o.seed;
  if (!o.out.empty()) run.out = o.out;
  require_dataset(run.train_data, "train_data");
  if (!run.eval_data.empty()) require_dataset(run.eval_data, "eval_data");
  const fs::path log_path = run.out / "train_log.jsonl";
  if (fs::exists(log_path) && !o.force) throw IoError(run.out.string() + " already holds a run; pass --force to overwrite");

  auto train_set = scenegen::load_dataset(run.train_data);
  train::check_compatible(run.model, train_set.manifest.spec.generator, "train_data");
  std::optional<scenegen::Dataset> eval_set;
  if (!run.eval_data.empty()) {
    eval_set = scenegen::load_dataset(run.eval_data);
    train::check_compatible(run.model, eval_set->manifest.spec.generator, "eval_data");
  }

  std::error_code ec;
  fs::remove_all(run.out / "checkpoints", ec);
  fs::create_directories(run.out, ec);
  if (ec) throw IoError("cannot create " + run.out.string() + ": " + ec.message());
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot write " + log_path.string());
  auto sink = [&](const nlohmann::json& j) {
    log << j.dump() << "\n";
    log.flush();
  };
  const auto run_json = train::to_json(run);
  auto save = [&](const ParameterStore& p, std::size_t step, const fs::path& dir) {
    model::Checkpoint ck{run.model, p, step, run.seed, {{"run", run_json}, {"config_hash", train::run_hash(run)}}};
    model::save_checkpoint(dir, ck);
  };
  auto res = train::train(run, train_set.scenes, eval_set ? &eval_set->scenes : nullptr, sink,
                          [&](const ParameterStore& p, std::size_t step) {
                            save(p, step, run.out / "checkpoints" / step_dir(step));
                          });
  save(res.params, run.steps, run.out / "final");
  if (!log) throw IoError("write failed: " + log_path.string());
  const auto& first = res.steps.front().terms, &last = res.steps.back().terms;
  out << "trained " << run.steps << " steps; loss " << first.total << " -> " << last.total << "; checkpoint "
      << (run.out / "final").string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval / export share their config: {"checkpoint", "data", "threshold", "scene"}

struct EvalConfig {
  fs::path checkpoint;
  fs::path data;
  double threshold = 0.5;
  std::size_t scene = 0;
};

inline EvalConfig eval_config_from_json(const nlohmann::json& j, const fs::path& base, bool need_checkpoint) {
  check_keys(j, {"checkpoint", "data", "threshold", "scene"}, "eval config");
  EvalConfig c;
  auto path = [&](const char* key) -> fs::path {
    fs::path p = j.at(key).get<std::string>();
    return p.is_relative() ? base / p : p;
  };
  try {
    if (j.contains("checkpoint")) c.checkpoint = path("checkpoint");
    c.data = path("data");
    c.threshold = j.value("threshold", c.threshold);
    c.scene = j.value("scene", c.scene);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("eval config: ") + e.what());
  }
  if (need_checkpoint && c.checkpoint.empty()) throw ConfigError("eval config: checkpoint is required without --oracle");
  if (!(c.threshold >= 0 && c.threshold < 1)) throw ConfigError("eval config: threshold must be in [0, 1)");
  return c;
}

/// Model settings implied by a dataset (used when no checkpoint is involved).
inline model::ModelConfig model_for_dataset(const scenegen::GeneratorConfig& g) {
  model::ModelConfig m;
  m.image_size = g.image_size;
  m.focal = g.focal;
  m.body = g.body;
  return m;
}

inline void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
  } else {
    write_text(path, text);
  }
}

inline int cmd_eval(const Options& o, std::ostream& out) {
  const auto cfg = eval_config_from_json(load_config(o.config), config_dir(o.config), !o.oracle);
  require_dataset(cfg.data, "data");
  auto data = scenegen::load_dataset(cfg.data);
  metrics::MetricReport report;
  if (o.oracle) {
    train::ModelContext ctx(model_for_dataset(data.manifest.spec.generator));
    report = train::evaluate(nullptr, ctx, data.scenes, cfg.threshold, true);
  } else {
    auto ck = model::load_checkpoint(cfg.checkpoint);
    train::check_compatible(ck.config, data.manifest.spec.generator, "data");
    train::ModelContext ctx(ck.config);
    report = train::evaluate(&ck.params, ctx, data.scenes, cfg.threshold, false);
  }
  write_output(o.out, metrics::to_json(report).dump(2) + "\n", out);
  return kOk;
}

// ---------------------------------------------------------------------------
// export

inline std::string obj_text(const Tensor& vertices, const std::vector<std::array<int, 3>>& faces) {
  std::string s;
  char buf[128];
  for (std::size_t i = 0; i < vertices.dim(0); ++i) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", vertices(i, 0), vertices(i, 1), vertices(i, 2));
    s += buf;
  }
  for (const auto& f : faces) {
    std::snprintf(buf, sizeof buf, "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
    s += buf;
  }
  return s;
}

inline int cmd_export(const Options& o, std::ostream& out) {
  const auto cfg = eval_config_from_json(load_config(o.config), config_dir(o.config), !o.oracle);
  if (o.out.empty()) throw ConfigError("export: --out is required");
  require_dataset(cfg.data, "data");
  const auto manifest = scenegen::load_manifest(cfg.data);
  if (cfg.scene >= manifest.scenes.size()) throw ConfigError("export: scene index out of range");
  const auto scene_path = (cfg.data / manifest.scenes[cfg.scene].file).string();
  const Scene scene = scene_from_json(read_json(scene_path), scene_path);

  std::vector<Tensor> meshes;
  body::BodyTemplate tmpl;
  if (o.oracle) {
    tmpl = body::make_template(manifest.spec.generator.body);
    for (const auto& g : scene.people) meshes.push_back(g.vertices);
  } else {
    auto ck = model::load_checkpoint(cfg.checkpoint);
    train::check_compatible(ck.config, manifest.spec.generator, "data");
    tmpl = ck.config.body_template();
    ndgrad::Tape tape;
    BoundParams P(tape, ck.params, false);
    auto preds = model::model_forward(P, ck.config, tape.constant(scene.image));
    for (const auto& d : model::decode_people(preds, cfg.threshold)) meshes.push_back(body::mesh_for(d.person, tmpl).vertices);
  }
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw IoError("cannot create " + o.out + ": " + ec.message());
  for (std::size_t i = 0; i < meshes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "person_%02zu.obj", i);
    write_text((fs::path(o.out) / name).string(), obj_text(meshes[i], tmpl.faces));
  }
  out << "exported " << meshes.size() << " mesh(es) to " << o.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

inline int cmd_gradcheck(const Options& o, std::ostream& out) {
  auto checks = gradcheck_suite();
  if (!o.only.empty()) {
    std::erase_if(checks, [&](const ndgrad::NamedCheck& c) { return c.name != o.only; });
    if (checks.empty()) throw ConfigError("gradcheck: no check named " + o.only);
  }
  bool all = true;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : checks) {
    const auto r = run_check(c);
    all = all && r.pass;
    char line[256];
    std::snprintf(line, sizeof line, "%-28s max_rel_err %.3e tol %.0e coords %zu  %s\n", c.name.c_str(),
                  r.max_rel_error, r.tolerance, r.coordinates_checked, r.pass ? "PASS" : "FAIL");
    out << line;
    rows.push_back({{"name", c.name},
                    {"max_rel_error", r.max_rel_error},
                    {"tolerance", r.tolerance},
                    {"coordinates_checked", r.coordinates_checked},
                    {"coordinates_skipped", r.coordinates_skipped},
                    {"pass", r.pass}});
  }
  if (!o.out.empty()) write_text(o.out, nlohmann::json({{"checks", rows}, {"pass", all}}).dump(2) + "\n");
  out << (all ? "all checks passed\n" : "gradient check FAILED\n");
  return all ? kOk : kNumerical;
}

// ---------------------------------------------------------------------------

/// Runs one command and maps failures to exit codes, reporting on `err`.
inline int run(const Options& o, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  try {
    if (o.command == "gen") return cmd_gen(o, out);
    if (o.command == "train") return cmd_train(o, out);
    if (o.command == "eval") return cmd_eval(o, out);
    if (o.command == "gradcheck") return cmd_gradcheck(o, out);
    if (o.command == "export") return cmd_export(o, out);
    throw ConfigError("unknown command: " + o.command);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const train::NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUnexpected;
  }
}

}  // namespace meshcrowd::cli
