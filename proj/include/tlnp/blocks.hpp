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
#include <string>
#include <vector>

#include "tlnp/layers.hpp"

namespace tlnp {

enum class EspVariant { kEsp, kDesp, kStrideEsp };

const char* variant_name(EspVariant v);

// Width bookkeeping of an ESP-family block: a 1x1 (or strided 3x3) reduce to
// d channels, K dilated branches emitting {d1, d, ..., d} channels.
struct EspSpec {
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t branches = 5;
  std::vector<std::int64_t> dilations{1, 2, 4, 8, 16};
  EspVariant variant = EspVariant::kEsp;

  std::int64_t d() const { return out_channels / branches; }
  std::int64_t d1() const { return out_channels - (branches - 1) * d(); }
  std::int64_t branch_width(std::int64_t k) const { return k == 0 ? d1() : d(); }
  void validate() const;
};

// Cumulative fusion [b0, b1, b1+b2, ...]. The first branch bypasses the sum.
std::vector<Tensor> hff(const std::vector<Tensor>& branches);

class EspBlock {
 public:
  EspBlock() = default;
  EspBlock(const std::string& name, const EspSpec& spec, DType dtype);

  // Block output without the residual add, which the encoder applies.
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;

  void init(Rng& rng);
  void collect(TensorList& out);
  void sites(std::vector<ConvSite>& out) const;
  std::int64_t parameter_count() const;
  const EspSpec& spec() const { return spec_; }

  Conv2d reduce;
  std::vector<Conv2d> branch;     // dilated (ESP) or depthwise dilated (DESP)
  std::vector<Conv2d> pointwise;  // DESP only
  BnAct out;

 private:
  EspSpec spec_;
};

Tensor esp_forward(const Tensor& x, const EspBlock& block, const ForwardContext& ctx);
Tensor desp_forward(const Tensor& x, const EspBlock& block, const ForwardContext& ctx);
Tensor stride_esp_forward(const Tensor& x, const EspBlock& block,
                          const ForwardContext& ctx);

// Decoder block: 2x transposed conv, concat with a 3-channel image at the new
// resolution, then two 3x3 convolutions. BN + PReLU after each.
class Ucb {
 public:
  Ucb() = default;
  Ucb(const std::string& name, std::int64_t in, std::int64_t out, DType dtype);

  Tensor forward(const Tensor& x, const Tensor& skip_image,
                 const ForwardContext& ctx) const;
  void init(Rng& rng);
  void collect(TensorList& out);
  void sites(std::vector<ConvSite>& out) const;
  std::int64_t parameter_count() const;

  ConvTransposeBnAct up;
  ConvBnAct conv1;
  ConvBnAct conv2;
};

// Final decoder block: 2x transposed conv with BN + PReLU, then a 3x3 conv
// emitting raw logits.
class Usb {
 public:
  Usb() = default;
  Usb(const std::string& name, std::int64_t in, std::int64_t classes, DType dtype);

  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
  void init(Rng& rng);
  void collect(TensorList& out);
  void sites(std::vector<ConvSite>& out) const;
  std::int64_t parameter_count() const;

  ConvTransposeBnAct up;
  Conv2d logits;
};

struct PcaaConfig {
  std::int64_t patch_h = 8;
  std::int64_t patch_w = 8;
  std::int64_t local_classes = 4;

  bool operator==(const PcaaConfig&) const = default;
};

// Patch-local class attention. Scores from a 1x1 conv are softmaxed over each
// patch, giving per-patch class centers; pixels attend to their patch's
// centers by scaled dot product, and the aggregate is refined by a 1x1 conv
// and added back to the input.
class Pcaa {
 public:
  Pcaa() = default;
  Pcaa(const std::string& name, std::int64_t channels, const PcaaConfig& cfg,
       DType dtype);

  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
  void init(Rng& rng);
  void collect(TensorList& out);
  void sites(std::vector<ConvSite>& out) const;
  std::int64_t parameter_count() const;
  const PcaaConfig& config() const { return cfg_; }

  // Patch extent actually used for a feature of size h x w: the configured
  // patch clamped to the feature size.
  std::pair<std::int64_t, std::int64_t> patch_for(std::int64_t h, std::int64_t w) const;

  Conv2d scores;
  Conv2d refine;

 private:
  PcaaConfig cfg_;
};

}  // namespace tlnp
