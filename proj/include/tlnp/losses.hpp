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

#include <vector>

#include "tlnp/tensor.hpp"

namespace tlnp {

struct LossParams {
  double gamma = 2.0;
  double alpha_t = 0.25;
  double tversky_alpha = 0.7;  // weight on false negatives
  double tversky_beta = 0.3;   // weight on false positives
  double epsilon = 1.0;
  double prob_floor = 1e-7;    // focal probabilities clamp to [floor, 1 - floor]

  static LossParams drivable() { return {}; }
  static LossParams lane() {
    LossParams p;
    p.tversky_alpha = 0.9;
    p.tversky_beta = 0.1;
    return p;
  }
};

// -alpha_t / (N*H*W) * sum target * (1 - p)^gamma * log p, p = softmax(logits).
Tensor focal_loss(const Tensor& logits, const Tensor& target_onehot, const LossParams& p);

// sum over classes of 1 - (TP + eps) / (TP + a*FN + b*FP + eps) with soft counts.
Tensor tversky_loss(const Tensor& probs, const Tensor& target_onehot, const LossParams& p);

struct HeadLoss {
  Tensor focal;
  Tensor tversky;
};

struct LossBreakdown {
  Tensor total;
  std::vector<HeadLoss> heads;
};

// Per head focal + Tversky on the softmax of its logits, summed over heads.
LossBreakdown total_loss(const std::vector<Tensor>& logits,
                         const std::vector<Tensor>& targets,
                         const std::vector<LossParams>& params);

}  // namespace tlnp
