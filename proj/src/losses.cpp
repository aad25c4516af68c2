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

#include "tlnp/losses.hpp"

#include <cmath>
#include <string>

#include "tlnp/ops.hpp"

namespace tlnp {
namespace {

void check_one_hot(const Tensor& t, const Shape& expect) {
  if (t.shape() != expect) {
    throw ShapeError("target shape " + t.shape().str() + " does not match " + expect.str());
  }
  const Shape s = t.shape();
  dispatch(t.dtype(), [&]<class T>() {
    auto v = t.data<T>();
    const std::int64_t plane = s.plane();
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t i = 0; i < plane; ++i) {
        int ones = 0;
        for (std::int64_t c = 0; c < s.c; ++c) {
          const T x = v[static_cast<std::size_t>((n * s.c + c) * plane + i)];
          if (x == T(1)) {
            ++ones;
          } else if (x != T(0)) {
            throw std::invalid_argument("target is not one-hot: value " +
                                        std::to_string(static_cast<double>(x)));
          }
        }
        if (ones != 1) {
          throw std::invalid_argument("target is not one-hot: pixel " + std::to_string(i) +
                                      " of sample " + std::to_string(n) + " has " +
                                      std::to_string(ones) + " active classes");
        }
      }
  });
}

void check_probabilities(const Tensor& p) {
  dispatch(p.dtype(), [&]<class T>() {
    for (T x : p.data<T>()) {
      // NaN passes through so that it surfaces as a non-finite loss.
      if (x < T(0) || x > T(1)) {
        throw std::invalid_argument("probability " + std::to_string(static_cast<double>(x)) +
                                    " outside [0, 1]");
      }
    }
  });
}

Tensor one_minus(const Tensor& x) { return add_scalar(scale(x, -1.0), 1.0); }

}  // namespace

Tensor focal_loss(const Tensor& logits, const Tensor& target, const LossParams& p) {
  check_one_hot(target, logits.shape());
  const Shape s = logits.shape();
  const Tensor prob = clamp(softmax_channel(logits), p.prob_floor, 1.0 - p.prob_floor);
  const Tensor term = mul(target, mul(pow(one_minus(prob), p.gamma), log(prob)));
  const double pixels = static_cast<double>(s.n * s.h * s.w);
  return scale(sum(term), -p.alpha_t / pixels);
}

Tensor tversky_loss(const Tensor& probs, const Tensor& target, const LossParams& p) {
  check_one_hot(target, probs.shape());
  check_probabilities(probs);
  const Tensor tp = sum_per_channel(mul(probs, target));
  const Tensor fn = sum_per_channel(mul(one_minus(probs), target));
  const Tensor fp = sum_per_channel(mul(probs, one_minus(target)));
  const Tensor denom = add_scalar(
      add(tp, add(scale(fn, p.tversky_alpha), scale(fp, p.tversky_beta))), p.epsilon);
  const Tensor index = div(add_scalar(tp, p.epsilon), denom);
  return add_scalar(scale(sum(index), -1.0), static_cast<double>(probs.shape().c));
}

LossBreakdown total_loss(const std::vector<Tensor>& logits, const std::vector<Tensor>& targets,
                         const std::vector<LossParams>& params) {
  if (logits.size() != targets.size() || logits.size() != params.size() || logits.empty()) {
    throw std::invalid_argument("total_loss: " + std::to_string(logits.size()) + " outputs, " +
                                std::to_string(targets.size()) + " targets, " +
                                std::to_string(params.size()) + " parameter sets");
  }
  LossBreakdown out;
  for (std::size_t h = 0; h < logits.size(); ++h) {
    HeadLoss head{focal_loss(logits[h], targets[h], params[h]),
                  tversky_loss(softmax_channel(logits[h]), targets[h], params[h])};
    const Tensor head_total = add(head.focal, head.tversky);
    out.total = h == 0 ? head_total : add(out.total, head_total);
    out.heads.push_back(std::move(head));
  }
  return out;
}

}  // namespace tlnp
