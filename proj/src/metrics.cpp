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

#include "tlnp/metrics.hpp"

#include <stdexcept>
#include <string>

namespace tlnp {
namespace {

void check_label(std::int32_t v, std::int64_t classes) {
  if (v < 0 || v >= classes) {
    throw std::out_of_range("label value " + std::to_string(v) + " outside [0, " +
                            std::to_string(classes) + ")");
  }
}

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

LabelMap argmax(const Tensor& scores) {
  const Shape s = scores.shape();
  LabelMap out(s.n, s.h, s.w);
  dispatch(scores.dtype(), [&]<class T>() {
    auto v = scores.data<T>();
    const std::int64_t plane = s.plane();
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* base = v.data() + n * s.c * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        std::int32_t best = 0;
        for (std::int64_t c = 1; c < s.c; ++c) {
          if (base[c * plane + i] > base[best * plane + i]) best = static_cast<std::int32_t>(c);
        }
        out.data[static_cast<std::size_t>(n * plane + i)] = best;
      }
    }
  });
  return out;
}

Tensor one_hot(const LabelMap& labels, std::int64_t classes, DType dtype) {
  Tensor t = Tensor::zeros({labels.n, classes, labels.h, labels.w}, dtype);
  const std::int64_t plane = labels.h * labels.w;
  dispatch(dtype, [&]<class T>() {
    auto v = t.mutable_data<T>();
    for (std::int64_t n = 0; n < labels.n; ++n)
      for (std::int64_t i = 0; i < plane; ++i) {
        const std::int32_t c = labels.data[static_cast<std::size_t>(n * plane + i)];
        check_label(c, classes);
        v[static_cast<std::size_t>((n * classes + c) * plane + i)] = T(1);
      }
  });
  return t;
}

ConfusionCounts::ConfusionCounts(std::int64_t classes)
    : classes(classes),
      tp(static_cast<std::size_t>(classes)),
      fp(static_cast<std::size_t>(classes)),
      fn(static_cast<std::size_t>(classes)),
      tn(static_cast<std::size_t>(classes)) {}

std::int64_t ConfusionCounts::total() const {
  return classes == 0 ? 0 : tp[0] + fp[0] + fn[0] + tn[0];
}

ConfusionCounts& ConfusionCounts::merge(const ConfusionCounts& other) {
  if (other.classes != classes) {
    throw std::invalid_argument("cannot merge confusion counts over " +
                                std::to_string(classes) + " and " +
                                std::to_string(other.classes) + " classes");
  }
  for (std::size_t c = 0; c < tp.size(); ++c) {
    tp[c] += other.tp[c];
    fp[c] += other.fp[c];
    fn[c] += other.fn[c];
    tn[c] += other.tn[c];
  }
  return *this;
}

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& target,
                          std::int64_t classes) {
  if (pred.n != target.n || pred.h != target.h || pred.w != target.w) {
    throw std::invalid_argument("prediction and target label maps differ in shape");
  }
  // Square matrix first, then per-class marginals.
  std::vector<std::int64_t> m(static_cast<std::size_t>(classes * classes), 0);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const std::int32_t p = pred.data[i], t = target.data[i];
    check_label(p, classes);
    check_label(t, classes);
    ++m[static_cast<std::size_t>(t * classes + p)];
  }
  ConfusionCounts cc(classes);
  const auto total = static_cast<std::int64_t>(pred.data.size());
  for (std::int64_t c = 0; c < classes; ++c) {
    std::int64_t row = 0, col = 0;
    for (std::int64_t k = 0; k < classes; ++k) {
      row += m[static_cast<std::size_t>(c * classes + k)];
      col += m[static_cast<std::size_t>(k * classes + c)];
    }
    const std::int64_t hit = m[static_cast<std::size_t>(c * classes + c)];
    const auto u = static_cast<std::size_t>(c);
    cc.tp[u] = hit;
    cc.fn[u] = row - hit;
    cc.fp[u] = col - hit;
    cc.tn[u] = total - row - col + hit;
  }
  return cc;
}

double iou(const ConfusionCounts& cc, std::int64_t cls) {
  const auto c = static_cast<std::size_t>(cls);
  return ratio(cc.tp[c], cc.tp[c] + cc.fp[c] + cc.fn[c]);
}

double miou(const ConfusionCounts& cc) {
  double acc = 0;
  for (std::int64_t c = 0; c < cc.classes; ++c) acc += iou(cc, c);
  return acc / static_cast<double>(cc.classes);
}

double pixel_accuracy(const ConfusionCounts& cc) {
  std::int64_t hits = 0;
  for (auto v : cc.tp) hits += v;
  return ratio(hits, cc.total());
}

double mean_pixel_accuracy(const ConfusionCounts& cc) {
  double acc = 0;
  for (std::size_t c = 0; c < cc.tp.size(); ++c) acc += ratio(cc.tp[c], cc.tp[c] + cc.fn[c]);
  return acc / static_cast<double>(cc.classes);
}

double balanced_accuracy(const ConfusionCounts& cc) { return mean_pixel_accuracy(cc); }

}  // namespace tlnp
