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
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tlnp/blocks.hpp"

namespace tlnp {

enum class TaskVariant { kStandard, kDrivableAlternative };

struct HeadSpec {
  std::string task;
  std::int64_t classes = 2;
  bool operator==(const HeadSpec&) const = default;
};

struct ModelConfig {
  std::string name;
  std::int64_t stem_a = 0, stem_b = 0;
  std::int64_t stage1_out = 0, p = 0, merge_out = 0;
  std::int64_t stage2_out = 0, q = 0, pre_pcaa = 0, post_pcaa = 0;
  std::int64_t ucb1_out = 0, ucb2_out = 0;
  std::vector<HeadSpec> heads{{"drivable", 2}, {"lane", 2}};
  PcaaConfig pcaa;

  // Presets by case-insensitive name: nano, small, medium, large.
  static ModelConfig preset(std::string_view name,
                            TaskVariant variant = TaskVariant::kStandard);
  static const std::vector<std::string>& preset_names();

  void validate() const;
  // Stable text form hashed into checkpoints.
  std::string canonical() const;
  std::uint64_t fingerprint() const;
  // "Nano", or "Nano (D&A)" for the three-class drivable head.
  std::string display_name() const;
  bool operator==(const ModelConfig&) const = default;
};

TaskVariant parse_variant(std::string_view text);

// Preset whose fingerprint equals `fp`, across both task variants.
std::optional<ModelConfig> config_for_fingerprint(std::uint64_t fp);

struct HeadOutputs {
  Tensor drivable;
  Tensor lane;
};

class Model {
 public:
  struct Head {
    HeadSpec spec;
    Ucb ucb1;
    Ucb ucb2;
    Usb usb;
  };

  static Model build(const ModelConfig& config, std::uint64_t seed,
                     DType dtype = DType::kF32);

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // Logit maps at input resolution. H and W must be divisible by 16.
  HeadOutputs forward(const Tensor& image, const ForwardContext& ctx = {}) const;

  // Every parameter and running statistic, in a fixed order. Pointers are
  // valid until the model is moved.
  TensorList state();
  TensorList parameters();  // trainable subset of state()
  std::int64_t parameter_count() const;
  std::vector<ConvSite> conv_sites() const;

  // Per-layer trainable parameter census, keyed by layer prefix.
  std::vector<std::pair<std::string, std::int64_t>> census();

  const ModelConfig& config() const { return config_; }
  DType dtype() const { return dtype_; }

  ConvBnAct stem0, stem1;
  EspBlock stage1_down;
  std::vector<EspBlock> stage1_blocks;
  ConvBnAct merge1;
  EspBlock stage2_down;
  std::vector<EspBlock> stage2_blocks;
  ConvBnAct pre_pcaa;
  Pcaa pcaa;
  ConvBnAct post_pcaa;
  std::vector<Head> heads;

 private:
  Model() = default;
  ModelConfig config_;
  DType dtype_ = DType::kF32;
};

// Throws ShapeError unless the image is (N, 3, H, W) with H, W divisible by 16.
void check_input(const Shape& image);

}  // namespace tlnp
