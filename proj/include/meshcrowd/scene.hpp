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

// Scene records (image + per-person ground truth) and their JSON form.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "meshcrowd/bodymodel.hpp"
#include "meshcrowd/json_util.hpp"

namespace meshcrowd {

using ndgrad::Tensor;

struct PersonGT {
  Tensor rotations;   // K x 3 x 3
  Tensor beta;        // B
  std::array<double, 3> translation{0, 0, 1};
  Tensor joints3d;    // K x 3, camera frame
  Tensor joints2d;    // K x 2, pixels
  Tensor visibility;  // K, 1 visible / 0 hidden
  Tensor vertices;    // V x 3, camera frame

  body::PersonState state() const { return {rotations, beta, translation}; }
};

struct Scene {
  std::uint64_t id = 0;
  std::uint64_t seed = 0;
  Tensor image;  // 3 x S x S in [0, 1]
  std::vector<PersonGT> people;
};

inline constexpr const char* kSceneSchema = "meshcrowd-scene/1";

namespace detail {

inline nlohmann::json tensor_json(const Tensor& t) { return {{"shape", t.shape}, {"data", encode_f64(t.data)}}; }

inline Tensor tensor_from_json(const nlohmann::json& j, const std::string& where) {
  auto shape = j.at("shape").get<ndgrad::Shape>();
  auto data = decode_f64(j.at("data").get<std::string>());
  if (data.size() != ndgrad::numel(shape)) throw ConfigError(where + ": array length does not match shape");
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace detail

inline nlohmann::json to_json(const Scene& s) {
  nlohmann::json people = nlohmann::json::array();
  for (const auto& p : s.people) {
    people.push_back({{"theta", detail::tensor_json(p.rotations)},
                      {"beta", detail::tensor_json(p.beta)},
                      {"t", detail::tensor_json(Tensor({3}, {p.translation[0], p.translation[1], p.translation[2]}))},
                      {"joints3d", detail::tensor_json(p.joints3d)},
                      {"joints2d", detail::tensor_json(p.joints2d)},
                      {"visibility", detail::tensor_json(p.visibility)},
                      {"vertices", detail::tensor_json(p.vertices)}});
  }
  return {{"schema", kSceneSchema},
          {"id", s.id},
          {"seed", s.seed},
          {"image", detail::tensor_json(s.image)},
          {"people", people}};
}

inline Scene scene_from_json(const nlohmann::json& j, const std::string& where = "scene") {
  require_schema(j, kSceneSchema, where);
  Scene s;
  try {
    s.id = j.at("id").get<std::uint64_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.image = detail::tensor_from_json(j.at("image"), where);
    for (const auto& p : j.at("people")) {
      PersonGT g;
      g.rotations = detail::tensor_from_json(p.at("theta"), where);
      g.beta = detail::tensor_from_json(p.at("beta"), where);
      auto t = detail::tensor_from_json(p.at("t"), where);
      if (t.size() != 3) throw ConfigError(where + ": translation must have 3 entries");
      g.translation = {t.data[0], t.data[1], t.data[2]};
      g.joints3d = detail::tensor_from_json(p.at("joints3d"), where);
      g.joints2d = detail::tensor_from_json(p.at("joints2d"), where);
      g.visibility = detail::tensor_from_json(p.at("visibility"), where);
      g.vertices = detail::tensor_from_json(p.at("vertices"), where);
      s.people.push_back(std::move(g));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return s;
}

}  // namespace meshcrowd
