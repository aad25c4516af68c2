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
#include <map>
#include <string>
#include <vector>

#include "tlnp/dataset.hpp"

namespace tlnp {

// q = clamp(round(t / scale) + zero_point, qmin, qmax), returns
// (q - zero_point) * scale, where [qmin, qmax] is the signed range of `bits`.
// Ties round away from zero.
Tensor fake_quantize(const Tensor& t, double scale, std::int32_t zero_point, int bits = 8);

std::int32_t quant_min(int bits);
std::int32_t quant_max(int bits);

struct AffineQuant {
  double scale = 1.0;
  std::int32_t zero_point = 0;
};

// Running range of one quantization point. Merging is associative.
struct RangeStats {
  double min = 0, max = 0;
  std::int64_t count = 0;

  void observe(const Tensor& t);
  RangeStats& merge(const RangeStats& other);
};

// Affine parameters covering [min(lo, 0), max(hi, 0)] with the endpoints on
// -(2^(bits-1) - 1) and 2^(bits-1) - 1, so a symmetric range gets zero point 0.
AffineQuant affine_params(double lo, double hi, int bits = 8);

// Symmetric per-slice weight scales max|w| / qmax along `axis` (0 or 1), or a
// single scale over the whole tensor when `per_channel` is false.
std::vector<double> weight_scales(const Tensor& w, int axis, bool per_channel, int bits = 8);
Tensor quantize_weight(const Tensor& w, int axis, const std::vector<double>& scales,
                       int bits = 8);

// Weight and bias of a site with its batch norm (if any) folded in.
ConvOverride fold_site(const ConvSite& site);
// Output-channel axis of a site's weight: 0 for conv, 1 for transposed conv.
int output_axis(const ConvSite& site);

enum class CalibrationMethod { kMinMax, kPercentile };

struct CalibrationConfig {
  CalibrationMethod method = CalibrationMethod::kMinMax;
  // Two-sided: the range runs from the (100 - p)th to the pth percentile.
  double percentile = 99.9;
  std::int64_t histogram_bins = 4096;
};

// Observed activation ranges at every convolution input and output.
struct Calibration {
  std::map<std::string, RangeStats> inputs;
  std::map<std::string, RangeStats> outputs;
};

// Runs the model in inference mode over every batch. Throws on an empty
// batch list.
Calibration calibrate(const Model& model, const std::vector<Tensor>& batches,
                      const CalibrationConfig& config = {});

struct QuantScheme {
  int bits = 8;
  std::map<std::string, AffineQuant> inputs;               // per site
  std::map<std::string, std::vector<double>> weight_scales;  // per site, per output channel

  // Every point name (site.input, site.weight.<c>) with its parameters, sorted.
  std::vector<std::pair<std::string, AffineQuant>> points() const;
};

// Activation parameters from the calibrated input ranges and per-channel
// weight scales from the folded weights.
QuantScheme build_scheme(const Model& model, const Calibration& calibration, int bits = 8);

// Fake-quantizes every convolution input and folded weight during a forward
// pass. Throws std::invalid_argument naming the first site the scheme lacks.
class QuantHook : public ConvHook {
 public:
  QuantHook(const Model& model, const QuantScheme& scheme);
  Tensor on_input(const std::string& site, const Tensor& x) override;
  void on_output(const std::string&, const Tensor&) override {}
  const ConvOverride* override_for(const std::string& site) const override;

 private:
  int bits_;
  std::map<std::string, AffineQuant> inputs_;
  std::map<std::string, ConvOverride> overrides_;
};

HeadOutputs quantized_forward(const Model& model, const QuantScheme& scheme,
                              const Tensor& image);

struct QuantReport {
  std::string config;
  SegmentationScores fp32;
  SegmentationScores ptsq;
};

QuantReport quant_report(const Model& model, const QuantScheme& scheme,
                         const std::vector<Sample>& samples, std::int64_t batch_size = 8);
// Table of FP32 and INT8 metrics in percent with their differences.
std::string render_quant_report(const QuantReport& report);

// Binary sidecar: "TLNQ", u32 version, u32 bits, u32 count, then per point
// u16 name length, name bytes, f32 scale, i32 zero point (little endian).
void write_scheme(const QuantScheme& scheme, const std::filesystem::path& path);
QuantScheme read_scheme(const std::filesystem::path& path);

}  // namespace tlnp
