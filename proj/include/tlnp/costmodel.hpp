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
#include "tlnp/model.hpp"

namespace tlnp {

// FLOPs = flops_per_mac * MACs + (elementwise ops when included).
struct CostConvention {
  int flops_per_mac = 1;
  bool include_elementwise = true;

  // "mac" or "2mac"; elementwise ops are included in both.
  static CostConvention parse(std::string_view text);
  std::string describe() const;
};

// Static cost of one layer or block. Elementwise ops: batch norm 2 per
// element, PReLU 2, bias add 1, each summed element of a fusion or residual
// add 1, softmax 3 (exp, accumulate, divide), 2x2 average pool 4 per output.
struct LayerCost {
  std::string name;
  std::string kind;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t elementwise = 0;
  Shape out;

  double flops(const CostConvention& c) const;
};

struct CostReport {
  std::string config;
  std::int64_t height = 0, width = 0;
  CostConvention convention;
  std::vector<LayerCost> layers;

  std::int64_t total_params() const;
  std::int64_t total_macs() const;
  std::int64_t total_elementwise() const;
  double total_flops() const;
};

// Cost of an ESP-family block (without the encoder's residual add) on an
// input of in_h x in_w.
LayerCost esp_block_cost(const EspSpec& spec, std::int64_t in_h, std::int64_t in_w);

CostReport count_flops(const ModelConfig& config, std::int64_t height = 384,
                       std::int64_t width = 640, const CostConvention& convention = {});
CostReport count_params(const ModelConfig& config);

// Published per-config figures: parameters (millions), FLOPs (billions) and
// stored model size (megabytes of 10^6 bytes).
struct PublishedBudget {
  std::string config;
  double params_m;
  double flops_g;
  double size_mb;
};
const std::vector<PublishedBudget>& published_budgets();
std::optional<PublishedBudget> published_budget(std::string_view config);

// Storage needed for every parameter and running statistic at
// `bytes_per_element`, plus the checkpoint container's own metadata.
struct CheckpointSize {
  std::uint64_t payload = 0;
  std::uint64_t overhead = 0;
  std::uint64_t total() const { return payload + overhead; }
};
CheckpointSize checkpoint_size(const ModelConfig& config, std::size_t bytes_per_element);

double percent_deviation(double computed, double reference);

// Aligned table ending with totals next to the published figures.
std::string render_text(const CostReport& report);
// Header: layer,params,macs,elementwise,flops
std::string render_csv(const CostReport& report);

}  // namespace tlnp
