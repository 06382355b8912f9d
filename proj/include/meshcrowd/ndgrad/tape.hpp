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

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "meshcrowd/ndgrad/tensor.hpp"

namespace meshcrowd::ndgrad {

using VarId = std::int32_t;

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, VarId id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  double item() const { return value().item(); }
  bool requires_grad() const;

  VarId id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr && id_ >= 0; }

 private:
  Tape* tape_ = nullptr;
  VarId id_ = -1;
};

/// Backward rule: receives the tape, the entry's own id and the upstream
/// gradient, and accumulates into the inputs through Tape::grad_of.
using BackwardFn = std::function<void(Tape&, VarId self, const Tensor& grad_out)>;

struct TapeEntry {
  const char* op = "leaf";
  std::vector<VarId> inputs;
  Tensor value;
  bool requires_grad = false;
  bool is_leaf = true;
  BackwardFn backward;
};

/// Gradients returned by Tape::backward, keyed by leaf id. Leaves that do not
/// reach the loss read back as zeros of their own shape.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const Tape* tape) : tape_(tape) {}

  Tensor operator[](VarId id) const;
  Tensor operator[](const Var& v) const { return (*this)[v.id()]; }
  bool contains(VarId id) const { return grads_.count(id) != 0; }

  void set(VarId id, Tensor g) { grads_[id] = std::move(g); }
  const std::unordered_map<VarId, Tensor>& raw() const { return grads_; }

 private:
  const Tape* tape_ = nullptr;
  std::unordered_map<VarId, Tensor> grads_;
};

/// Ordered record of operations for reverse-mode differentiation. Entries are
/// appended in evaluation order, so the record is topologically sorted by
/// construction. One forward + backward per tape, single-threaded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    TapeEntry e;
    e.value = std::move(value);
    e.value.requires_grad = requires_grad;
    e.requires_grad = requires_grad;
    return push(std::move(e));
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var scalar(double v) { return constant(Tensor::scalar(v)); }

  /// Appends a computed node. The backward rule is dropped when no input
  /// requires a gradient.
  Var record(const char* op, std::vector<VarId> inputs, Tensor value,
             BackwardFn backward) {
    TapeEntry e;
    e.op = op;
    e.is_leaf = false;
    for (VarId id : inputs) {
      if (entries_.at(static_cast<std::size_t>(id)).requires_grad) {
        e.requires_grad = true;
        break;
      }
    }
    e.inputs = std::move(inputs);
    e.value = std::move(value);
    e.value.requires_grad = e.requires_grad;
    if (e.requires_grad) e.backward = std::move(backward);
    return push(std::move(e));
  }

  const TapeEntry& entry(VarId id) const {
    return entries_.at(static_cast<std::size_t>(id));
  }
  const Tensor& value(VarId id) const { return entry(id).value; }
  std::size_t size() const { return entries_.size(); }

  /// Mutable gradient buffer for `id`, zero-initialised on first touch.
  /// Returns nullptr for entries that do not require a gradient.
  Tensor* grad_of(VarId id) {
    auto idx = static_cast<std::size_t>(id);
    if (!entries_[idx].requires_grad) return nullptr;
    auto& slot = grads_[idx];
    if (!slot) slot.emplace(Tensor::zeros(entries_[idx].value.shape));
    return &*slot;
  }

  /// Reverse sweep from a scalar loss. Every entry is visited at most once,
  /// in reverse recording order.
  Gradients backward(const Var& loss) {
    if (loss.tape() != this) {
      throw std::invalid_argument("backward: loss was not recorded on this tape");
    }
    const Tensor& lv = value(loss.id());
    if (lv.size() != 1) {
      throw ShapeError("backward", "loss must be a scalar, got shape " +
                                       to_string(lv.shape));
    }
    grads_.assign(entries_.size(), std::nullopt);
    Gradients out(this);
    if (!entries_[static_cast<std::size_t>(loss.id())].requires_grad) return out;
    grads_[static_cast<std::size_t>(loss.id())].emplace(Tensor(lv.shape, 1.0));
    for (VarId id = loss.id(); id >= 0; --id) {
      auto idx = static_cast<std::size_t>(id);
      auto& slot = grads_[idx];
      if (!slot) continue;
      const TapeEntry& e = entries_[idx];
      if (e.is_leaf) {
        out.set(id, std::move(*slot));
        slot.reset();
        continue;
      }
      if (e.backward) {
        Tensor g = std::move(*slot);
        slot.reset();
        e.backward(*this, id, g);
      }
    }
    grads_.clear();
    return out;
  }

 private:
  Var push(TapeEntry e) {
    entries_.push_back(std::move(e));
    grads_.clear();
    return Var(this, static_cast<VarId>(entries_.size() - 1));
  }

  std::deque<TapeEntry> entries_;
  std::vector<std::optional<Tensor>> grads_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->entry(id_).requires_grad; }

inline Tensor Gradients::operator[](VarId id) const {
  auto it = grads_.find(id);
  if (it != grads_.end()) return it->second;
  if (tape_ == nullptr) throw std::out_of_range("Gradients: unknown id");
  return Tensor::zeros(tape_->value(id).shape);
}

/// Free-function form of Tape::backward.
inline Gradients backward(Tape& tape, const Var& loss) { return tape.backward(loss); }

}  // namespace meshcrowd::ndgrad
