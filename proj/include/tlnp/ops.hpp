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

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "tlnp/tensor.hpp"

namespace tlnp {

struct ConvParams {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::array<std::int64_t, 2> kernel{1, 1};
  std::array<std::int64_t, 2> stride{1, 1};
  std::array<std::int64_t, 2> padding{0, 0};
  std::array<std::int64_t, 2> dilation{1, 1};
  std::int64_t groups = 1;
  bool has_bias = false;

  // Square kernel with "same" padding (dilation * (k - 1) / 2).
  static ConvParams same(std::int64_t in, std::int64_t out, std::int64_t k,
                         std::int64_t stride = 1, std::int64_t dilation = 1,
                         std::int64_t groups = 1, bool bias = false);

  Shape weight_shape() const;
  std::int64_t out_size(std::int64_t in, int axis) const;
  void validate() const;
};

struct ConvTransposeParams {
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::array<std::int64_t, 2> kernel{2, 2};
  std::array<std::int64_t, 2> stride{2, 2};
  std::array<std::int64_t, 2> padding{0, 0};
  bool has_bias = false;

  // Layout is [in, out, kh, kw].
  Shape weight_shape() const;
  std::int64_t out_size(std::int64_t in, int axis) const;
};

// Cross-correlation covering standard, strided, dilated, grouped and
// point-wise convolution. `bias`, when given, has shape (1, out, 1, 1).
Tensor conv2d(const Tensor& x, const Tensor& weight,
              const std::optional<Tensor>& bias, const ConvParams& p);

// Adjoint of conv2d with respect to its input.
Tensor conv_transpose2d(const Tensor& x, const Tensor& weight,
                        const std::optional<Tensor>& bias,
                        const ConvTransposeParams& p);

// Per-channel normalization. Parameters and running statistics are
// (1, C, 1, 1). In training mode the running statistics are updated in place
// (running = (1 - momentum) * running + momentum * batch, unbiased variance).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum, double eps);

Tensor prelu(const Tensor& x, const Tensor& slope);

// 2x2 mean pooling, stride 2. Odd spatial sizes are rejected.
Tensor avg_pool2(const Tensor& x);

Tensor concat_channels(const std::vector<Tensor>& xs);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor log(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);
// Gradient is passed through only strictly inside [lo, hi].
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor softmax_channel(const Tensor& x);

// Reductions to (1,1,1,1) and to (1,C,1,1).
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_per_channel(const Tensor& x);

// Patch-local attention primitives. A patch grid of (H/ph) x (W/pw)
// non-overlapping windows is laid out row-major; P is the patch count.

// Spatial softmax of every channel within each patch.
Tensor patch_softmax(const Tensor& scores, std::int64_t ph, std::int64_t pw);
// centers[n, p, k, c] = sum over pixels of patch p of attn[n,k,.] * x[n,c,.]
// Result shape (N, P, K, C).
Tensor patch_centers(const Tensor& attn, const Tensor& x, std::int64_t ph,
                     std::int64_t pw);
// sim[n, k, pix] = factor * <x[n, :, pix], centers[n, patch(pix), k, :]>
Tensor patch_similarity(const Tensor& x, const Tensor& centers,
                        std::int64_t ph, std::int64_t pw, double factor);
// out[n, c, pix] = sum_k weights[n, k, pix] * centers[n, patch(pix), k, c]
Tensor patch_aggregate(const Tensor& weights, const Tensor& centers,
                       std::int64_t ph, std::int64_t pw);

}  // namespace tlnp
