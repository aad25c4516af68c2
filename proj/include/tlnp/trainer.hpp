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
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tlnp/checkpoint.hpp"
#include "tlnp/dataset.hpp"
#include "tlnp/random.hpp"

namespace tlnp {

struct AugmentConfig {
  bool hflip = true;
  bool translate = true;
  bool crop = true;
  bool hsv = true;
  double flip_probability = 0.5;
  double max_shift = 0.1;       // fraction of each side
  double min_crop_scale = 0.8;  // crop side as a fraction of the frame
  double hue = 0.015;           // max hue shift in turns
  double saturation = 0.7;      // saturation gain drawn from 1 +- this
  double value = 0.4;           // value gain drawn from 1 +- this

  static AugmentConfig none();
};

struct TrainConfig {
  double learning_rate = 5e-4;
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::int64_t batch_size = 16;
  std::int64_t epochs = 100;
  double ema_decay = 0.999;
  std::int64_t ema_ramp_steps = 100;
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const;
};

// Adam moments for every parameter of one TensorList, in list order.
struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

// One decoupled-weight-decay Adam update from the gradients stored on the
// parameters. Throws if a parameter has no gradient.
void adamw_step(const TensorList& params, AdamState& state, const TrainConfig& config);

// Shadow weights. The decay applied at update t (1-based) is
// decay * min(1, t / ramp_steps), or plain `decay` when ramp_steps is 0.
struct EmaState {
  std::vector<std::string> names;
  std::vector<Tensor> shadow;
  double decay = 0.999;
  std::int64_t ramp_steps = 0;
  std::int64_t updates = 0;

  static EmaState init(const TensorList& params, double decay, std::int64_t ramp_steps = 0);
  double next_decay() const;
};

// shadow <- d * shadow + (1 - d) * param for every parameter, d = next_decay().
void ema_update(EmaState& ema, const TensorList& params);

struct Augmented {
  Tensor image;
  std::vector<LabelMap> masks;
};

// Random crop (resized back to the frame), translation and horizontal flip
// applied identically to the image and every mask, then HSV jitter on the
// image alone. Masks use nearest-neighbour sampling and label 0 fill.
Augmented augment(const Tensor& image, const std::vector<LabelMap>& masks,
                  const AugmentConfig& config, Rng& rng);

struct EpochMetrics {
  std::int64_t epoch = 0;
  double train_loss = 0;
  double miou_drivable = 0;
  double acc_lane = 0;
  double iou_lane = 0;
};

struct TrainResult {
  Checkpoint raw;
  // Averaged parameters and batch norm statistics.
  Checkpoint ema;
  std::vector<EpochMetrics> log;      // raw weights
  std::vector<EpochMetrics> ema_log;  // EMA weights
  std::int64_t steps = 0;
};

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& message, std::int64_t step)
      : std::runtime_error(message), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

// Called after each epoch's validation.
using EpochCallback = std::function<void(const EpochMetrics& raw, const EpochMetrics& ema)>;

// Trains in place. Validation uses the val split, or the train split when
// val is empty. Throws std::invalid_argument on an empty train split and
// TrainingError on a non-finite loss.
TrainResult train(Model& model, const Dataset& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

// Header row plus one row per epoch: epoch,train_loss,miou_drivable,acc_lane,iou_lane
std::string metrics_csv(const std::vector<EpochMetrics>& log);
void write_metrics_csv(const std::vector<EpochMetrics>& log, const std::filesystem::path& path);

}  // namespace tlnp
