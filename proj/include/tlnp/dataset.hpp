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

#include "tlnp/metrics.hpp"
#include "tlnp/model.hpp"

namespace tlnp {

// One training triple. `image` is (1, 3, H, W) float in [0, 1]; both label
// maps are 1 x H x W.
struct Sample {
  Tensor image;
  LabelMap drivable;
  LabelMap lane;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> val;
};

// Samples stacked along the batch axis.
struct Batch {
  Tensor image;
  LabelMap drivable;
  LabelMap lane;
};

// Stacks samples[indices[i]]; the image is converted to `dtype`. All samples
// must share one spatial size.
Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
                 DType dtype);

struct SynthOptions {
  std::int64_t height = 384;
  std::int64_t width = 640;
  // 2 for drivable/background, 3 to add an alternative-lane region.
  std::int64_t drivable_classes = 2;
};

// Road scenes: a trapezoid drivable region under a horizon with 2 to 4 pixel
// wide lane polylines painted on it. Sample i depends only on (seed, i), and
// lane pixels never exceed a tenth of the frame. Sizes must be multiples of 16
// and at least 32.
std::vector<Sample> synth_dataset(std::int64_t n, std::uint64_t seed,
                                  const SynthOptions& options = {});

// Per-head pixel counts accumulated over a sample set.
struct SegmentationScores {
  ConfusionCounts drivable;
  ConfusionCounts lane;

  double miou_drivable() const { return miou(drivable); }
  double pa_drivable() const { return pixel_accuracy(drivable); }
  double mpa_drivable() const { return mean_pixel_accuracy(drivable); }
  // Balanced accuracy, which discounts the dominant background class.
  double acc_lane() const { return balanced_accuracy(lane); }
  double iou_lane() const { return iou(lane, 1); }
};

// Inference-mode evaluation without gradient recording. Neither weights nor
// batch norm statistics change.
SegmentationScores evaluate(const Model& model, const std::vector<Sample>& samples,
                            std::int64_t batch_size = 8, ConvHook* hook = nullptr);

struct Prediction {
  LabelMap drivable;
  LabelMap lane;
};
Prediction predict(const Model& model, const Tensor& image, ConvHook* hook = nullptr);

}  // namespace tlnp
