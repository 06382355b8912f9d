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

#include <sstream>

#include "meshcrowd/cli.hpp"

namespace cli = meshcrowd::cli;
namespace fs = std::filesystem;
using meshcrowd::read_json;
using meshcrowd::read_text;
using meshcrowd::write_text;

namespace {

// One scratch tree per test binary: gen configs, two datasets and a run config.
class CliTest : public ::testing::Test {
 protected:
  static fs::path root() { return fs::path(::testing::TempDir()) / "meshcrowd_cli"; }

  static void SetUpTestSuite() {
    fs::remove_all(root());
    fs::create_directories(root());
    write_text((root() / "gen.json").string(),
               nlohmann::json({{"generator", {{"min_people", 1}, {"max_people", 2}}}, {"scenes", 3}, {"seed", 5}}).dump());
    write_text((root() / "run.json").string(),
               nlohmann::json({{"model",
                                {{"channels", 16}, {"encoder_layers", 1}, {"decoder_layers", 1}, {"heads", 2},
                                 {"points", 2}, {"queries", 4}, {"focal", 60}, {"backbone_widths", {8, 16, 16, 16}}}},
                               {"steps", 2},
                               {"batch_size", 2},
                               {"train_data", "data"},
                               {"eval_data", "data"},
                               {"eval_every", 1},
                               {"checkpoint_every", 1},
                               {"out", "run"}})
                   .dump());
    write_text((root() / "eval.json").string(),
               nlohmann::json({{"checkpoint", "run/final"}, {"data", "data"}, {"threshold", 0.0}, {"scene", 1}}).dump());
  }

  static int call(const std::string& cmd, const std::string& config, const std::string& out = {}, bool force = false,
                  bool oracle = false, std::string* stdout_text = nullptr) {
    cli::Options o;
    o.command = cmd;
    o.config = config.empty() ? "" : (root() / config).string();
    o.out = out.empty() ? "" : (root() / out).string();
    o.force = force;
    o.oracle = oracle;
    std::ostringstream so, se;
    const int rc = cli::run(o, so, se);
    if (stdout_text) *stdout_text = so.str();
    return rc;
  }

  static void ensure_dataset() {
    if (!fs::exists(root() / "data" / "manifest.json")) ASSERT_EQ(call("gen", "gen.json", "data"), 0);
  }
  static void ensure_run() {
    ensure_dataset();
    if (!fs::exists(root() / "run" / "final")) ASSERT_EQ(call("train", "run.json", "", true), 0);
  }
};

std::vector<std::array<double, 3>> obj_vertices(const std::string& text, std::size_t* faces) {
  std::istringstream in(text);
  std::string tag;
  std::vector<std::array<double, 3>> v;
  *faces = 0;
  while (in >> tag) {
    if (tag == "v") {
      std::array<double, 3> p{};
      in >> p[0] >> p[1] >> p[2];
      v.push_back(p);
    } else if (tag == "f") {
      int a, b, c;
      in >> a >> b >> c;
      EXPECT_GE(std::min({a, b, c}), 1);
      ++*faces;
    }
  }
  return v;
}

}  // namespace

TEST_F(CliTest, GenRefusesOverwriteWithoutForce) {
  ensure_dataset();
  const auto before = read_text((root() / "data" / "manifest.json").string());
  EXPECT_EQ(call("gen", "gen.json", "data"), cli::kIo);
  EXPECT_EQ(call("gen", "gen.json", "data", true), cli::kOk);
  EXPECT_EQ(read_text((root() / "data" / "manifest.json").string()), before);
}

TEST_F(CliTest, ConfigErrorsExitTwo) {
  EXPECT_EQ(call("gen", "missing.json", "x"), cli::kConfig);
  EXPECT_EQ(call("gen", "", "x"), cli::kConfig);
  EXPECT_EQ(call("gen", "gen.json", ""), cli::kConfig);
  write_text((root() / "bad.json").string(), R"({"generator": {"focal": 60, "bogus": 1}, "scenes": 2})");
  EXPECT_EQ(call("gen", "bad.json", "bad_out"), cli::kConfig);
  write_text((root() / "broken.json").string(), "{not json");
  EXPECT_EQ(call("train", "broken.json"), cli::kConfig);
  EXPECT_EQ(call("frobnicate", ""), cli::kConfig);
}

TEST_F(CliTest, MissingDatasetExitsThree) {
  write_text((root() / "run_nodata.json").string(), R"({"train_data": "nowhere", "steps": 1})");
  EXPECT_EQ(call("train", "run_nodata.json", "run_nodata"), cli::kIo);
}

TEST_F(CliTest, TrainWritesLogAndCheckpoints) {
  ensure_run();
  const auto log = read_text((root() / "run" / "train_log.jsonl").string());
  std::istringstream in(log);
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  ASSERT_GE(rows.size(), 3u);
  EXPECT_EQ(rows.front()["event"], "config");
  for (const auto& r : rows) EXPECT_EQ(r["config_hash"], rows.front()["config_hash"]);
  EXPECT_TRUE(fs::exists(root() / "run" / "checkpoints" / "step_000001" / "checkpoint.bin"));
  const auto ck = meshcrowd::model::load_checkpoint(root() / "run" / "final");
  EXPECT_EQ(ck.step, 2u);
  EXPECT_EQ(ck.extra["config_hash"], rows.front()["config_hash"]);
  EXPECT_EQ(call("train", "run.json"), cli::kIo);
}

TEST_F(CliTest, EvalIsByteIdenticalAcrossRuns) {
  ensure_run();
  ASSERT_EQ(call("eval", "eval.json", "r1.json"), cli::kOk);
  ASSERT_EQ(call("eval", "eval.json", "r2.json"), cli::kOk);
  const auto a = read_text((root() / "r1.json").string());
  EXPECT_EQ(a, read_text((root() / "r2.json").string()));
  EXPECT_EQ(nlohmann::json::parse(a)["schema"], meshcrowd::metrics::kReportSchema);
  std::string printed;
  ASSERT_EQ(call("eval", "eval.json", "", false, false, &printed), cli::kOk);
  EXPECT_EQ(printed, a);
}

TEST_F(CliTest, EvalOracleIsZero) {
  ensure_dataset();
  write_text((root() / "eval_oracle.json").string(), R"({"data": "data"})");
  std::string printed;
  ASSERT_EQ(call("eval", "eval_oracle.json", "", false, true, &printed), cli::kOk);
  const auto agg = nlohmann::json::parse(printed)["aggregate"];
  EXPECT_LT(agg["mpjpe_mm"].get<double>(), 1e-9);
  EXPECT_LT(agg["pa_mpjpe_mm"].get<double>(), 1e-6);
  EXPECT_EQ(agg["missed"], 0);
  EXPECT_EQ(agg["spurious"], 0);
  EXPECT_EQ(call("eval", "eval_oracle.json"), cli::kConfig);  // no checkpoint, no --oracle
}

TEST_F(CliTest, ExportOracleRoundTripsGroundTruthVertices) {
  ensure_dataset();
  ASSERT_EQ(call("export", "eval.json", "obj_gt", false, true), cli::kOk);
  const auto m = meshcrowd::scenegen::load_manifest(root() / "data");
  const auto path = (root() / "data" / m.scenes[1].file).string();
  const auto scene = meshcrowd::scene_from_json(read_json(path), path);
  const auto tmpl = meshcrowd::body::make_template(m.spec.generator.body);
  for (std::size_t p = 0; p < scene.people.size(); ++p) {
    char name[32];
    std::snprintf(name, sizeof name, "person_%02zu.obj", p);
    std::size_t faces = 0;
    const auto v = obj_vertices(read_text((root() / "obj_gt" / name).string()), &faces);
    const auto& gt = scene.people[p].vertices;
    ASSERT_EQ(v.size(), gt.dim(0));
    EXPECT_EQ(faces, tmpl.faces.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      for (int c = 0; c < 3; ++c) ASSERT_EQ(v[i][c], gt(i, c));  // 17 digits round-trip exactly
  }
  EXPECT_FALSE(fs::exists(root() / "obj_gt" / "person_09.obj"));
}

TEST_F(CliTest, ExportPredictionsOnePerDetection) {
  ensure_run();
  ASSERT_EQ(call("export", "eval.json", "obj_pred"), cli::kOk);
  std::size_t n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(root() / "obj_pred")) ++n;
  EXPECT_EQ(n, 4u);  // threshold 0 keeps every query
}

TEST_F(CliTest, GradcheckOnlySelectsOneCheck) {
  cli::Options o;
  o.command = "gradcheck";
  o.only = "ops.add";
  std::ostringstream so, se;
  EXPECT_EQ(cli::run(o, so, se), cli::kOk);
  EXPECT_NE(so.str().find("ops.add"), std::string::npos);
  EXPECT_EQ(so.str().find("ops.mul"), std::string::npos);
  o.only = "no.such.check";
  EXPECT_EQ(cli::run(o, so, se), cli::kConfig);
}
