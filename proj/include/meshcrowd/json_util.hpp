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

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

namespace meshcrowd {

/// Malformed or mismatched configuration / schema (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Unreadable or unwritable file (CLI exit code 3).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rejects keys outside `allowed` so typos in config files fail loudly.
inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError(where + ": unknown key \"" + k + "\"");
  }
}

inline void require_schema(const nlohmann::json& j, const std::string& schema, const std::string& where) {
  if (!j.is_object() || !j.contains("schema") || !j["schema"].is_string()) {
    throw ConfigError(where + ": missing \"schema\" field (expected " + schema + ")");
  }
  if (j["schema"].get<std::string>() != schema) {
    throw ConfigError(where + ": schema " + j["schema"].get<std::string>() + ", expected " + schema);
  }
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

inline nlohmann::json read_json(const std::string& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Little-endian f64 encoding

inline std::string f64_to_le_bytes(const std::vector<double>& v) {
  std::string out(v.size() * 8, '\0');
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v[i]);
    for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return out;
}

inline std::vector<double> f64_from_le_bytes(const char* data, std::size_t bytes) {
  if (bytes % 8 != 0) throw ConfigError("f64 payload length not a multiple of 8");
  std::vector<double> v(bytes / 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data[i * 8 + b])) << (8 * b);
    v[i] = std::bit_cast<double>(bits);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Base64 (RFC 4648, padded), via OpenSSL

inline std::string base64_encode(const std::string& in) {
  std::string out(4 * ((in.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(in.data()), static_cast<int>(in.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::string base64_decode(const std::string& in) {
  if (in.size() % 4 != 0) throw ConfigError("base64: length not a multiple of 4");
  std::string out(in.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(in.data()), static_cast<int>(in.size()));
  if (n < 0) throw ConfigError("base64: invalid input");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  std::size_t pad = 0;
  if (!in.empty() && in.back() == '=') ++pad;
  if (in.size() > 1 && in[in.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

inline std::string encode_f64(const std::vector<double>& v) { return base64_encode(f64_to_le_bytes(v)); }

inline std::vector<double> decode_f64(const std::string& s) {
  const std::string bytes = base64_decode(s);
  return f64_from_le_bytes(bytes.data(), bytes.size());
}

}  // namespace meshcrowd
