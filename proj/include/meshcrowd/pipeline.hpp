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

// Whole-image model: conv backbone -> multi-scale tokens -> deformable
// encoder -> query decoder -> shared prediction head, plus checkpoints.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "meshcrowd/attention.hpp"
#include "meshcrowd/bodymodel.hpp"
#include "meshcrowd/json_util.hpp"
#include "meshcrowd/params.hpp"

namespace meshcrowd::model {

namespace nd = meshcrowd::ndgrad;
using nd::Shape;
using nd::Tape;
using nd::Tensor;
using nd::Var;

struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t channels = 64;
  std::size_t encoder_layers = 6;
  std::size_t decoder_layers = 6;
  std::size_t heads = 8;
  std::size_t points = 4;
  std::size_t queries = 8;
  std::size_t ffn_hidden = 0;   // 0 -> 2 * channels
  std::size_t head_hidden = 0;  // 0 -> channels
  std::vector<std::size_t> backbone_widths{16, 32, 64, 64};
  double focal = 500.0;
  body::TemplateConfig body;

  std::size_t ffn_width() const { return ffn_hidden ? ffn_hidden : 2 * channels; }
  std::size_t head_width() const { return head_hidden ? head_hidden : channels; }
  body::CameraIntrinsics camera() const { return body::CameraIntrinsics::for_image(image_size, focal); }
  body::BodyTemplate body_template() const { return body::make_template(body); }

  attn::LayerConfig layer() const { return {channels, heads, 3, points, ffn_width()}; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (image_size == 0 || image_size % 32 != 0) fail("image_size must be a positive multiple of 32");
    if (image_size > 256) fail("image_size above 256 is not supported");
    if (channels == 0 || channels % 4 != 0) fail("channels must be a positive multiple of 4");
    if (heads == 0 || channels % heads != 0) fail("channels must be divisible by heads");
    if (points == 0) fail("points must be >= 1");
    if (queries == 0) fail("queries must be >= 1");
    if (encoder_layers == 0 || decoder_layers == 0) fail("encoder_layers and decoder_layers must be >= 1");
    if (backbone_widths.size() != 4) fail("backbone_widths needs 4 entries");
    for (auto w : backbone_widths)
      if (w == 0 || w % 4 != 0) fail("backbone widths must be positive multiples of 4");
    if (!(focal > 0)) fail("focal must be positive");
    if (body.num_joints < 1 || body.num_joints > 8 || body.ring_size < 3 || body.num_betas < 1) {
      fail("invalid body template sizes");
    }
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},       {"channels", c.channels},
          {"encoder_layers", c.encoder_layers}, {"decoder_layers", c.decoder_layers},
          {"heads", c.heads},                 {"points", c.points},
          {"queries", c.queries},             {"ffn_hidden", c.ffn_hidden},
          {"head_hidden", c.head_hidden},     {"backbone_widths", c.backbone_widths},
          {"focal", c.focal},                 {"body", body::to_json(c.body)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"image_size", "channels", "encoder_layers", "decoder_layers", "heads", "points", "queries",
                 "ffn_hidden", "head_hidden", "backbone_widths", "focal", "body"},
             "model");
  ModelConfig c;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.channels = j.value("channels", c.channels);
    c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
    c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
    c.heads = j.value("heads", c.heads);
    c.points = j.value("points", c.points);
    c.queries = j.value("queries", c.queries);
    c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.backbone_widths = j.value("backbone_widths", c.backbone_widths);
    c.focal = j.value("focal", c.focal);
    if (j.contains("body")) {
      check_keys(j["body"], {"num_joints", "ring_size", "num_betas"}, "model.body");
      c.body = body::template_config_from_json(j["body"]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameter initialisation

inline void init_conv(ParameterStore& s, const std::string& prefix, std::size_t ci, std::size_t co, std::size_t k,
                      Rng& rng) {
  s.add(prefix + ".w", init::xavier({co, ci, k, k}, ci * k * k, co * k * k, rng, std::sqrt(2.0)));
  s.add(prefix + ".b", Tensor({co}));
}

inline void init_group_norm(ParameterStore& s, const std::string& prefix, std::size_t c) {
  s.add(prefix + ".g", Tensor::ones({c}));
  s.add(prefix + ".b", Tensor({c}));
}

inline constexpr std::size_t kLevels = 3;
inline constexpr std::size_t kGroups = 4;

/// Grid of initial query references, as logits of the normalised position.
inline Tensor grid_reference_logits(std::size_t q) {
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(q))));
  const std::size_t rows = (q + cols - 1) / cols;
  Tensor t({q, 2});
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  for (std::size_t i = 0; i < q; ++i) {
    t(i, 0) = logit((static_cast<double>(i % cols) + 0.5) / static_cast<double>(cols));
    t(i, 1) = logit((static_cast<double>(i / cols) + 0.5) / static_cast<double>(rows));
  }
  return t;
}

inline ParameterStore init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterStore s;
  Rng rng(derive_seed(seed, 0x6d6f64656cULL));
  const std::size_t C = cfg.channels;
  std::size_t in = 3;
  for (std::size_t b = 0; b < 4; ++b) {
    const std::string p = "backbone.block" + std::to_string(b);
    const std::size_t w = cfg.backbone_widths[b];
    init_conv(s, p + ".conv1", in, w, 3, rng);
    init_conv(s, p + ".conv2", w, w, 3, rng);
    in = w;
  }
  for (std::size_t l = 0; l < kLevels; ++l) {
    const std::string p = "input_proj" + std::to_string(l);
    init_conv(s, p + ".conv", cfg.backbone_widths[l + 1], C, 1, rng);
    init_group_norm(s, p + ".gn", C);
  }
  s.add("level_embed", init::xavier({kLevels, C}, kLevels, C, rng));
  const attn::LayerConfig lc = cfg.layer();
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) attn::init_encoder_layer(s, "enc" + std::to_string(i), lc, rng);
  s.add("query.ref", grid_reference_logits(cfg.queries));
  init::linear(s, "query.tgt", C, C, rng);
  init::linear(s, "query.pos", C, C, rng);
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    const std::string p = "dec" + std::to_string(i);
    attn::init_decoder_layer(s, p, lc, rng);
    s.add(p + ".ref.w", Tensor({C, 2}));
    s.add(p + ".ref.b", Tensor({2}));
  }
  const std::size_t Hh = cfg.head_width(), K = cfg.body.num_joints, B = cfg.body.num_betas;
  init::linear(s, "head.fc1", C, Hh, rng);
  init::linear(s, "head.fc2", Hh, Hh, rng);
  init::linear(s, "head.pose", Hh, 6 * K, rng, 0.01);
  for (std::size_t j = 0; j < K; ++j) {
    s.get("head.pose.b").data[6 * j] = 1.0;
    s.get("head.pose.b").data[6 * j + 4] = 1.0;
  }
  init::linear(s, "head.shape", Hh, B, rng, 0.1);
  init::linear(s, "head.trans", Hh, 3, rng, 0.1);
  init::linear(s, "head.presence", Hh, 1, rng, 0.1);
  return s;
}

// ---------------------------------------------------------------------------
// Forward pass

inline Var apply_conv(BoundParams& P, const std::string& prefix, const Var& x, std::size_t stride) {
  const std::size_t k = P.store().get(prefix + ".w").shape[2];
  return nd::conv2d(x, P(prefix + ".w"), P(prefix + ".b"), stride, k / 2);
}

inline Var apply_group_norm(BoundParams& P, const std::string& prefix, const Var& x) {
  const std::size_t C = x.dim(0);
  Var y = nd::group_norm(x, kGroups);
  Var g = nd::broadcast_to(nd::reshape(P(prefix + ".g"), {C, 1, 1}), y.shape());
  Var b = nd::broadcast_to(nd::reshape(P(prefix + ".b"), {C, 1, 1}), y.shape());
  return nd::add(nd::mul(y, g), b);
}

/// image [3, S, S] -> three C-channel maps at strides 8, 16, 32.
inline std::vector<Var> backbone_forward(BoundParams& P, const ModelConfig& cfg, const Var& image) {
  if (image.shape().size() != 3 || image.dim(0) != 3) {
    throw nd::ShapeError("backbone_forward", "expects a 3 x H x W image, got " + nd::to_string(image.shape()));
  }
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0 || image.dim(1) == 0 || image.dim(2) == 0) {
    throw nd::ShapeError("backbone_forward", "image height and width must be multiples of 32, got " +
                                                 nd::to_string(image.shape()));
  }
  Var x = image;
  std::vector<Var> feats;
  for (std::size_t b = 0; b < 4; ++b) {
    const std::string p = "backbone.block" + std::to_string(b);
    // No normalisation inside the blocks: per-image statistics would wash out
    // absolute intensities, and channel 1 carries depth as an absolute level.
    x = nd::gelu(apply_conv(P, p + ".conv1", x, 2));
    x = nd::gelu(apply_conv(P, p + ".conv2", x, b == 0 ? 2 : 1));
    if (b > 0) feats.push_back(x);
  }
  std::vector<Var> out;
  for (std::size_t l = 0; l < kLevels; ++l) {
    const std::string p = "input_proj" + std::to_string(l);
    out.push_back(apply_group_norm(P, p + ".gn", apply_conv(P, p + ".conv", feats[l], 1)));
  }
  (void)cfg;
  return out;
}

/// Normalised cell-centre positions of every token, level by level.
inline Tensor token_references(const std::vector<attn::LevelShape>& levels) {
  std::size_t n = 0;
  for (const auto& l : levels) n += l.cells();
  Tensor r({n, 2});
  std::size_t i = 0;
  for (const auto& l : levels)
    for (std::size_t y = 0; y < l.height; ++y)
      for (std::size_t x = 0; x < l.width; ++x, ++i) {
        r(i, 0) = (static_cast<double>(x) + 0.5) / static_cast<double>(l.width);
        r(i, 1) = (static_cast<double>(y) + 0.5) / static_cast<double>(l.height);
      }
  return r;
}

struct Predictions {
  Var rotations;    // [Q, K, 3, 3]
  Var beta;         // [Q, B]
  Var translation;  // [Q, 3]
  Var presence;     // [Q] logits
  Var refs;         // [Q, 2] final normalised reference points
  std::size_t num_queries() const { return presence.dim(0); }
};

struct ForwardTrace {
  std::vector<attn::LevelShape> levels;
  Tensor memory;  // encoder output tokens
};

inline Predictions model_forward(BoundParams& P, const ModelConfig& cfg, const Var& image,
                                 ForwardTrace* trace = nullptr) {
  Tape& tape = P.tape();
  if (image.shape() != Shape{3, cfg.image_size, cfg.image_size}) {
    throw nd::ShapeError("model_forward", image.shape(), Shape{3, cfg.image_size, cfg.image_size});
  }
  const std::size_t C = cfg.channels, Q = cfg.queries;
  auto maps = backbone_forward(P, cfg, image);

  std::vector<attn::LevelShape> levels;
  std::vector<Var> tokens;
  std::vector<std::size_t> level_of;
  for (std::size_t l = 0; l < maps.size(); ++l) {
    const std::size_t H = maps[l].dim(1), W = maps[l].dim(2);
    levels.push_back({H, W});
    tokens.push_back(nd::transpose(nd::reshape(maps[l], {C, H * W})));
    level_of.insert(level_of.end(), H * W, l);
  }
  Var x = nd::concat(tokens, 0);
  Var refs = tape.constant(token_references(levels));
  Var pos = nd::add(attn::sinusoidal_pos_encoding(refs, C), nd::index_select(P("level_embed"), level_of));
  const attn::LayerConfig lc = cfg.layer();
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
    x = attn::encoder_layer(P, "enc" + std::to_string(i), lc, x, pos, refs, {levels, x});
  }
  attn::FeatureMapSet memory{levels, x};
  if (trace) *trace = {levels, x.value()};

  Var ref_logit = P("query.ref");
  Var ref = nd::sigmoid(ref_logit);
  Var pe = attn::sinusoidal_pos_encoding(ref, C);
  Var q = apply_linear(P, "query.tgt", pe);
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    const std::string p = "dec" + std::to_string(i);
    Var qpos = apply_linear(P, "query.pos", attn::sinusoidal_pos_encoding(ref, C));
    q = attn::decoder_layer(P, p, lc, q, qpos, ref, memory);
    ref_logit = nd::add(ref_logit, apply_linear(P, p + ".ref", q));
    ref = nd::sigmoid(ref_logit);
  }

  const std::size_t K = cfg.body.num_joints, B = cfg.body.num_betas;
  Var h = nd::gelu(apply_linear(P, "head.fc1", q));
  h = nd::gelu(apply_linear(P, "head.fc2", h));
  Var r6 = nd::reshape(apply_linear(P, "head.pose", h), {Q * K, 6});
  Var rot = nd::reshape(body::rot6d_to_matrix(r6), {Q, K, 3, 3});
  Var beta = apply_linear(P, "head.shape", h);
  Var raw = apply_linear(P, "head.trans", h);

  // Depth is exp(raw_z) around 5 m; x, y start on the camera ray through the
  // query's reference pixel and move by the raw offsets.
  const auto cam = cfg.camera();
  const double S = static_cast<double>(cfg.image_size);
  Var tz = nd::exp(nd::add_scalar(nd::slice(raw, 1, 2, 3), std::log(5.0)));
  Var ray_x = nd::add_scalar(nd::scale(nd::slice(ref, 1, 0, 1), S / cam.focal), -cam.cx / cam.focal);
  Var ray_y = nd::add_scalar(nd::scale(nd::slice(ref, 1, 1, 2), S / cam.focal), -cam.cy / cam.focal);
  Var tx = nd::add(nd::mul(ray_x, tz), nd::slice(raw, 1, 0, 1));
  Var ty = nd::add(nd::mul(ray_y, tz), nd::slice(raw, 1, 1, 2));
  Var trans = nd::concat({tx, ty, tz}, 1);
  Var presence = nd::reshape(apply_linear(P, "head.presence", h), {Q});
  (void)B;
  return {rot, beta, trans, presence, ref};
}

/// Differentiable body outputs for query q.
inline body::BodyOutput query_body(Tape& tape, const body::BodyTemplate& tmpl, const Predictions& p, std::size_t q) {
  const std::size_t K = tmpl.num_joints(), B = tmpl.num_betas();
  Var rot = nd::reshape(nd::slice(p.rotations, 0, q, q + 1), {K, 3, 3});
  Var beta = nd::reshape(nd::slice(p.beta, 0, q, q + 1), {B});
  Var t = nd::reshape(nd::slice(p.translation, 0, q, q + 1), {3});
  return body::body_forward(tape, tmpl, rot, beta, t);
}

// ---------------------------------------------------------------------------
// Decoding

struct Detection {
  std::size_t query = 0;
  double score = 0.0;
  body::PersonState person;
};

inline body::PersonState person_from(const Predictions& p, std::size_t q) {
  const std::size_t K = p.rotations.dim(1), B = p.beta.dim(1);
  const auto& R = p.rotations.value().data;
  const auto& b = p.beta.value().data;
  const auto& t = p.translation.value();
  body::PersonState s;
  s.rotations = Tensor({K, 3, 3}, std::vector<double>(R.begin() + static_cast<std::ptrdiff_t>(q * K * 9),
                                                      R.begin() + static_cast<std::ptrdiff_t>((q + 1) * K * 9)));
  s.beta = Tensor({B}, std::vector<double>(b.begin() + static_cast<std::ptrdiff_t>(q * B),
                                           b.begin() + static_cast<std::ptrdiff_t>((q + 1) * B)));
  s.translation = {t(q, 0), t(q, 1), t(q, 2)};
  return s;
}

/// Queries with sigmoid(presence) > threshold, highest score first.
inline std::vector<Detection> decode_people(const Predictions& p, double threshold) {
  if (!(threshold >= 0.0 && threshold < 1.0)) throw std::invalid_argument("decode_people: threshold must be in [0, 1)");
  std::vector<Detection> out;
  for (std::size_t q = 0; q < p.num_queries(); ++q) {
    const double s = nd::sigmoid_scalar(p.presence.value().data[q]);
    if (s > threshold) out.push_back({q, s, person_from(p, q)});
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kCheckpointSchema = "meshcrowd-ckpt/1";

struct Checkpoint {
  ModelConfig config;
  ParameterStore params;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();  // e.g. the run config
};

/// Writes <dir>/checkpoint.json and <dir>/checkpoint.bin.
inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json entries = nlohmann::json::array();
  std::string blob;
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const Tensor& t = ck.params.at(i);
    std::string bytes = f64_to_le_bytes(t.data);
    entries.push_back({{"name", ck.params.names()[i]}, {"shape", t.shape}, {"offset", blob.size()},
                       {"length", bytes.size()}});
    blob += bytes;
  }
  nlohmann::json m = {{"schema", kCheckpointSchema}, {"config", to_json(ck.config)}, {"step", ck.step},
                      {"seed", ck.seed},            {"entries", entries},           {"extra", ck.extra}};
  write_text((dir / "checkpoint.bin").string(), blob);
  write_text((dir / "checkpoint.json").string(), m.dump(2) + "\n");
}

/// Loads and checks every entry against the parameters the config implies.
inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto mpath = (dir / "checkpoint.json").string();
  nlohmann::json m = read_json(mpath);
  require_schema(m, kCheckpointSchema, mpath);
  const std::string blob = read_text((dir / "checkpoint.bin").string());
  Checkpoint ck;
  try {
    ck.config = model_config_from_json(m.at("config"));
    ck.step = m.at("step").get<std::uint64_t>();
    ck.seed = m.at("seed").get<std::uint64_t>();
    ck.extra = m.value("extra", nlohmann::json::object());
    ParameterStore expected = init_model(ck.config, 0);
    const auto& entries = m.at("entries");
    if (entries.size() != expected.size()) throw ConfigError(mpath + ": parameter count does not match config");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto off = e.at("offset").get<std::size_t>();
      const auto len = e.at("length").get<std::size_t>();
      if (name != expected.names()[i] || shape != expected.at(i).shape) {
        throw ConfigError(mpath + ": entry " + name + " does not match the model defined by its config");
      }
      if (len != nd::numel(shape) * 8 || off > blob.size() || blob.size() - off < len) {
        throw ConfigError(mpath + ": entry " + name + " has an invalid byte range");
      }
      ck.params.add(name, Tensor(shape, f64_from_le_bytes(blob.data() + off, len)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(mpath + ": " + e.what());
  }
  return ck;
}

}  // namespace meshcrowd::model
