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

#include "meshcrowd/ndgrad/kernel_checks.hpp"

namespace meshcrowd::testing {

inline ndgrad::Tensor random_tensor(ndgrad::Shape shape, std::uint64_t seed, double lo = -1.0,
                                    double hi = 1.0) {
  return ndgrad::uniform_tensor(std::move(shape), seed, lo, hi);
}

}  // namespace meshcrowd::testing
