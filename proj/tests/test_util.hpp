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

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tlnp/ops.hpp"
#include "tlnp/tensor.hpp"

namespace tlnp::testing {

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0, DType dtype = DType::kF64) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(s.numel()));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_vector(s, v, dtype);
}

// Small integers: every partial sum is exact in f64, so any summation order
// yields bitwise-identical results.
inline Tensor random_int_tensor(Shape s, std::mt19937_64& rng, int lo = -4,
                                int hi = 4) {
  std::uniform_int_distribution<int> dist(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(s.numel()));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_vector(s, v, DType::kF64);
}

inline double dot(const Tensor& a, const Tensor& b) {
  auto x = a.to_vector();
  auto y = b.to_vector();
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

// Direct nested-loop cross-correlation, independent of the im2col/GEMM path.
inline Tensor naive_conv2d(const Tensor& x, const Tensor& w,
                           const std::vector<double>* bias, const ConvParams& p) {
  const Shape xs = x.shape();
  const std::int64_t oh = p.out_size(xs.h, 0), ow = p.out_size(xs.w, 1);
  const std::int64_t cin_g = p.in_channels / p.groups;
  const std::int64_t cout_g = p.out_channels / p.groups;
  Tensor out = Tensor::zeros({xs.n, p.out_channels, oh, ow}, DType::kF64);
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t o = 0; o < p.out_channels; ++o)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          const std::int64_t grp = o / cout_g;
          double acc = bias ? (*bias)[o] : 0.0;
          for (std::int64_t ci = 0; ci < cin_g; ++ci)
            for (std::int64_t ki = 0; ki < p.kernel[0]; ++ki)
              for (std::int64_t kj = 0; kj < p.kernel[1]; ++kj) {
                const std::int64_t iy = y * p.stride[0] - p.padding[0] + ki * p.dilation[0];
                const std::int64_t ix = xx * p.stride[1] - p.padding[1] + kj * p.dilation[1];
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += x.at(n, grp * cin_g + ci, iy, ix) * w.at(o, ci, ki, kj);
              }
          out.set(((n * p.out_channels + o) * oh + y) * ow + xx, acc);
        }
  return out;
}

struct GradCheck {
  double max_rel_error = 0;
  int checked = 0;
};

// Central finite differences on `samples` random entries of each tensor in
// `wrt` (all f64 leaves with requires_grad). Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline GradCheck finite_difference_check(const std::function<Tensor()>& loss_fn,
                                         std::vector<Tensor> wrt, int samples,
                                         std::mt19937_64& rng, double step = 1e-5,
                                         double floor = 1e-3) {
  for (auto& t : wrt) t.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  GradCheck result;
  for (auto& t : wrt) {
    std::uniform_int_distribution<std::int64_t> pick(0, t.numel() - 1);
    const int count = static_cast<int>(std::min<std::int64_t>(samples, t.numel()));
    std::vector<std::int64_t> idx;
    if (t.numel() <= samples) {
      for (std::int64_t i = 0; i < t.numel(); ++i) idx.push_back(i);
    } else {
      while (static_cast<int>(idx.size()) < count) idx.push_back(pick(rng));
    }
    for (auto i : idx) {
      const double analytic = t.grad_at(i);
      const double orig = t.at(i);
      double plus, minus;
      {
        NoGradGuard ng;
        t.set(i, orig + step);
        plus = loss_fn().item();
        t.set(i, orig - step);
        minus = loss_fn().item();
        t.set(i, orig);
      }
      const double numeric = (plus - minus) / (2 * step);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      result.max_rel_error = std::max(result.max_rel_error,
                                      std::abs(analytic - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

// Loss used for gradient checks: a fixed random linear functional of y,
// which exercises every output entry with a distinct upstream gradient.
inline Tensor probe_loss(const Tensor& y, const Tensor& probe) {
  return sum(mul(y, probe));
}

}  // namespace tlnp::testing
