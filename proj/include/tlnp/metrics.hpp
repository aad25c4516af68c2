/* Copyright 2026 The tlnp Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <vector>

#include "tlnp/tensor.hpp"

namespace tlnp {

// Integer class map of extent N x H x W, row-major.
struct LabelMap {
  std::int64_t n = 1, h = 1, w = 1;
  std::vector<std::int32_t> data;

  LabelMap() = default;
  LabelMap(std::int64_t n, std::int64_t h, std::int64_t w, std::int32_t fill = 0)
      : n(n), h(h), w(w), data(static_cast<std::size_t>(n * h * w), fill) {}

  std::int64_t size() const { return n * h * w; }
  std::int32_t& at(std::int64_t b, std::int64_t y, std::int64_t x) {
    return data[static_cast<std::size_t>((b * h + y) * w + x)];
  }
  std::int32_t at(std::int64_t b, std::int64_t y, std::int64_t x) const {
    return data[static_cast<std::size_t>((b * h + y) * w + x)];
  }
  bool operator==(const LabelMap&) const = default;
};

// Per-pixel argmax over channels; ties resolve to the lowest class.
LabelMap argmax(const Tensor& scores);

// (N, classes, H, W) indicator tensor. Labels outside [0, classes) throw.
Tensor one_hot(const LabelMap& labels, std::int64_t classes, DType dtype = DType::kF32);

struct ConfusionCounts {
  std::int64_t classes = 0;
  std::vector<std::int64_t> tp, fp, fn, tn;

  explicit ConfusionCounts(std::int64_t classes = 0);
  std::int64_t total() const;  // pixels counted
  ConfusionCounts& merge(const ConfusionCounts& other);
};

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& target,
                          std::int64_t classes);

// IoU is 1 for a class absent from both prediction and target.
double iou(const ConfusionCounts& cc, std::int64_t cls);
double miou(const ConfusionCounts& cc);
double pixel_accuracy(const ConfusionCounts& cc);
// Mean per-class recall; a class absent from the target has recall 1.
double mean_pixel_accuracy(const ConfusionCounts& cc);
double balanced_accuracy(const ConfusionCounts& cc);

}  // namespace tlnp
