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

#include "tlnp/metrics.hpp"
#include "tlnp/tensor.hpp"

namespace tlnp {

// Geometric and photometric operations on NCHW images and on label maps.
// Images are float tensors with values in [0, 1].

// Bilinear resampling with half-pixel centers (edge samples clamp).
Tensor resize_bilinear(const Tensor& image, std::int64_t height, std::int64_t width);
// Each output pixel takes the label under its center.
LabelMap resize_nearest(const LabelMap& labels, std::int64_t height, std::int64_t width);

Tensor hflip(const Tensor& image);
LabelMap hflip(const LabelMap& labels);

// Content moves down by dy and right by dx; uncovered pixels take `fill`.
Tensor translate(const Tensor& image, std::int64_t dy, std::int64_t dx, double fill = 0.0);
LabelMap translate(const LabelMap& labels, std::int64_t dy, std::int64_t dx,
                   std::int32_t fill = 0);

// Window [y, y + h) x [x, x + w); it must lie inside the frame.
Tensor crop(const Tensor& image, std::int64_t y, std::int64_t x, std::int64_t h,
            std::int64_t w);
LabelMap crop(const LabelMap& labels, std::int64_t y, std::int64_t x, std::int64_t h,
              std::int64_t w);

// Hue in [0, 1) turns, saturation and value in [0, 1].
struct Hsv {
  double h = 0, s = 0, v = 0;
};
Hsv rgb_to_hsv(double r, double g, double b);
void hsv_to_rgb(const Hsv& hsv, double& r, double& g, double& b);

// Adds `hue_shift` turns to the hue and multiplies saturation and value by
// their gains, clamping to [0, 1]. The image must have three channels.
Tensor hsv_adjust(const Tensor& image, double hue_shift, double saturation_gain,
                  double value_gain);

}  // namespace tlnp
