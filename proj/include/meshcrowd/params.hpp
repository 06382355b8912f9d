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

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "meshcrowd/ndgrad.hpp"
#include "meshcrowd/rng.hpp"

namespace meshcrowd {

/// Named parameter arrays in registration order.
class ParameterStore {
 public:
  void add(const std::string& name, ndgrad::Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("parameter registered twice: " + name);
    index_[name] = values_.size();
    names_.push_back(name);
    values_.push_back(std::move(value));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const ndgrad::Tensor& get(const std::string& name) const { return values_.at(lookup(name)); }
  ndgrad::Tensor& get(const std::string& name) { return values_.at(lookup(name)); }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  ndgrad::Tensor& at(std::size_t i) { return values_.at(i); }
  const ndgrad::Tensor& at(std::size_t i) const { return values_.at(i); }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }

  std::vector<std::string> names_;
  std::vector<ndgrad::Tensor> values_;
  std::map<std::string, std::size_t> index_;
};

/// Parameters of a store bound to one tape. Leaves are created on first use.
class BoundParams {
 public:
  BoundParams(ndgrad::Tape& tape, const ParameterStore& store, bool trainable = true)
      : tape_(tape), store_(store), trainable_(trainable) {}

  ndgrad::Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    ndgrad::Var v = tape_.leaf(store_.get(name), trainable_);
    bound_.emplace(name, v);
    return v;
  }

  /// Use an existing tape variable for `name` (e.g. a perturbed leaf).
  void bind(const std::string& name, const ndgrad::Var& v) {
    if (v.shape() != store_.get(name).shape) throw ndgrad::ShapeError("bind " + name, v.shape(), store_.get(name).shape);
    bound_.insert_or_assign(name, v);
  }

  ndgrad::Tape& tape() { return tape_; }
  const ParameterStore& store() const { return store_; }

  /// Gradient for every stored parameter, in store order (zeros when unused).
  std::vector<ndgrad::Tensor> gradients(const ndgrad::Gradients& g) const {
    std::vector<ndgrad::Tensor> out;
    out.reserve(store_.size());
    for (std::size_t i = 0; i < store_.size(); ++i) {
      auto it = bound_.find(store_.names()[i]);
      out.push_back(it == bound_.end() ? ndgrad::Tensor::zeros(store_.at(i).shape) : g[it->second]);
    }
    return out;
  }

 private:
  ndgrad::Tape& tape_;
  const ParameterStore& store_;
  bool trainable_;
  std::map<std::string, ndgrad::Var> bound_;
};

namespace init {

inline ndgrad::Tensor xavier(ndgrad::Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng,
                             double gain = 1.0) {
  const double a = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  ndgrad::Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-a, a);
  return t;
}

inline void linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                   Rng& rng, double gain = 1.0) {
  store.add(prefix + ".w", xavier({in, out}, in, out, rng, gain));
  store.add(prefix + ".b", ndgrad::Tensor({out}));
}

inline void layer_norm(ParameterStore& store, const std::string& prefix, std::size_t width) {
  store.add(prefix + ".g", ndgrad::Tensor::ones({width}));
  store.add(prefix + ".b", ndgrad::Tensor({width}));
}

}  // namespace init

inline ndgrad::Var apply_linear(BoundParams& P, const std::string& prefix, const ndgrad::Var& x) {
  return ndgrad::linear(x, P(prefix + ".w"), P(prefix + ".b"));
}

inline ndgrad::Var apply_layer_norm(BoundParams& P, const std::string& prefix, const ndgrad::Var& x) {
  ndgrad::Var y = ndgrad::layer_norm(x);
  return ndgrad::add(ndgrad::mul(y, ndgrad::broadcast_to(P(prefix + ".g"), y.shape())),
                     ndgrad::broadcast_to(P(prefix + ".b"), y.shape()));
}

}  // namespace meshcrowd
