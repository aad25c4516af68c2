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

#include "tlnp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tlnp/random.hpp"

namespace tlnp {
namespace {

void append(LabelMap& dst, const LabelMap& src) {
  dst.data.insert(dst.data.end(), src.data.begin(), src.data.end());
  dst.n += src.n;
}

struct Rgb {
  double r, g, b;
};

Rgb jitter(const Rgb& c, Rng& rng, double amount) {
  return {std::clamp(c.r + rng.uniform(-amount, amount), 0.0, 1.0),
          std::clamp(c.g + rng.uniform(-amount, amount), 0.0, 1.0),
          std::clamp(c.b + rng.uniform(-amount, amount), 0.0, 1.0)};
}

Sample synth_sample(Rng& rng, const SynthOptions& o) {
  const std::int64_t H = o.height, W = o.width;
  const double w = static_cast<double>(W);
  Sample s{Tensor(Shape{1, 3, H, W}, DType::kF32), LabelMap(1, H, W), LabelMap(1, H, W)};

  const auto horizon = static_cast<std::int64_t>(rng.uniform(0.35, 0.5) * double(H));
  const double bottom_left = rng.uniform(0.0, 0.3) * w;
  const double bottom_right = rng.uniform(0.7, 1.0) * w;
  const double top_center = rng.uniform(0.4, 0.6) * w;
  const double top_half = rng.uniform(0.03, 0.1) * w;
  const double split = rng.uniform(0.55, 0.75);

  // Road edges per row; rows widen monotonically towards the bottom, so the
  // region is one connected piece.
  std::vector<std::int64_t> left(H, 0), right(H, -1);
  for (std::int64_t y = horizon; y < H; ++y) {
    const double t = double(y - horizon) / double(std::max<std::int64_t>(H - 1 - horizon, 1));
    const double l = top_center - top_half + t * (bottom_left - (top_center - top_half));
    const double r = top_center + top_half + t * (bottom_right - (top_center + top_half));
    left[y] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::ceil(l)), 0, W - 1);
    right[y] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(r)), left[y], W - 1);
    const std::int64_t cut =
        left[y] + static_cast<std::int64_t>(split * double(right[y] - left[y]));
    for (std::int64_t x = left[y]; x <= right[y]; ++x) {
      s.drivable.at(0, y, x) = (o.drivable_classes == 3 && x > cut) ? 2 : 1;
    }
  }

  // Lane polylines at fixed fractions of the road width, with a slight bend.
  struct Lane {
    double frac, bend;
    std::int64_t width;
  };
  std::vector<Lane> lanes;
  const auto count = rng.integer(1, 3);
  for (std::int64_t i = 0; i < count; ++i) {
    const double base = (double(i) + 1.0) / double(count + 1);
    lanes.push_back({base + rng.uniform(-0.08, 0.08), rng.uniform(-0.04, 0.04) * w,
                     rng.integer(2, 4)});
  }
  const std::int64_t limit = H * W / 10;
  auto paint = [&] {
    std::fill(s.lane.data.begin(), s.lane.data.end(), 0);
    std::int64_t painted = 0;
    for (const Lane& lane : lanes) {
      for (std::int64_t y = horizon + 1; y < H; ++y) {
        const double t = double(y - horizon) / double(H - horizon);
        const double xc = double(left[y]) + lane.frac * double(right[y] - left[y]) +
                          lane.bend * (1 - t) * (1 - t);
        const auto x0 = static_cast<std::int64_t>(std::floor(xc - double(lane.width) / 2));
        for (std::int64_t x = std::max<std::int64_t>(x0, 0);
             x < std::min(x0 + lane.width, W); ++x) {
          auto& v = s.lane.at(0, y, x);
          painted += v == 0;
          v = 1;
        }
      }
    }
    return painted;
  };
  while (paint() > limit) {
    if (lanes.size() > 1) {
      lanes.pop_back();
    } else {
      lanes.back().width = 2;
    }
  }

  const Rgb sky = jitter({0.55, 0.7, 0.9}, rng, 0.08);
  const Rgb ground = jitter({0.3, 0.45, 0.2}, rng, 0.08);
  const Rgb road = jitter({0.42, 0.42, 0.44}, rng, 0.06);
  const Rgb alternative = jitter({0.5, 0.45, 0.38}, rng, 0.04);
  const Rgb paint_color = rng.bernoulli(0.5) ? Rgb{0.95, 0.95, 0.95} : Rgb{0.95, 0.8, 0.2};
  auto px = s.image.mutable_data<float>();
  const std::int64_t plane = H * W;
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      Rgb c = y < horizon ? sky : ground;
      const std::int32_t d = s.drivable.at(0, y, x);
      if (d == 1) c = road;
      if (d == 2) c = alternative;
      if (s.lane.at(0, y, x) == 1) c = paint_color;
      const double noise = 0.02 * rng.normal();
      const std::int64_t i = y * W + x;
      px[static_cast<std::size_t>(i)] = static_cast<float>(std::clamp(c.r + noise, 0.0, 1.0));
      px[static_cast<std::size_t>(plane + i)] =
          static_cast<float>(std::clamp(c.g + noise, 0.0, 1.0));
      px[static_cast<std::size_t>(2 * plane + i)] =
          static_cast<float>(std::clamp(c.b + noise, 0.0, 1.0));
    }
  }
  return s;
}

}  // namespace

Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
                 DType dtype) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  const Shape first = samples.at(indices.front()).image.shape();
  const auto n = static_cast<std::int64_t>(indices.size());
  Batch b{Tensor(Shape{n, 3, first.h, first.w}, dtype), LabelMap(0, first.h, first.w),
          LabelMap(0, first.h, first.w)};
  const std::int64_t per = 3 * first.plane();
  dispatch(dtype, [&]<class T>() {
    auto dst = b.image.mutable_data<T>();
    for (std::int64_t i = 0; i < n; ++i) {
      const Sample& s = samples.at(indices[static_cast<std::size_t>(i)]);
      const Shape shape = s.image.shape();
      if (shape.n != 1 || shape.c != 3 || shape.h != first.h || shape.w != first.w) {
        throw ShapeError("batch mixes image shapes " + first.str() + " and " + shape.str());
      }
      if (s.drivable.h != first.h || s.drivable.w != first.w || s.lane.h != first.h ||
          s.lane.w != first.w) {
        throw ShapeError("mask size does not match image " + shape.str());
      }
      const std::vector<double> v = s.image.to_vector();
      std::transform(v.begin(), v.end(), dst.begin() + i * per,
                     [](double x) { return static_cast<T>(x); });
      append(b.drivable, s.drivable);
      append(b.lane, s.lane);
    }
  });
  return b;
}

std::vector<Sample> synth_dataset(std::int64_t n, std::uint64_t seed,
                                  const SynthOptions& options) {
  if (n < 1) throw std::invalid_argument("synthetic dataset needs at least one sample");
  for (std::int64_t d : {options.height, options.width}) {
    if (d < 32 || d % 16 != 0) {
      throw ShapeError("synthetic image size " + std::to_string(options.height) + "x" +
                       std::to_string(options.width) +
                       " must be multiples of 16 and at least 32");
    }
  }
  if (options.drivable_classes != 2 && options.drivable_classes != 3) {
    throw std::invalid_argument("drivable classes must be 2 or 3");
  }
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    Rng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i));
    out.push_back(synth_sample(rng, options));
  }
  return out;
}

SegmentationScores evaluate(const Model& model, const std::vector<Sample>& samples,
                            std::int64_t batch_size, ConvHook* hook) {
  if (samples.empty()) throw std::invalid_argument("evaluation set is empty");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  SegmentationScores scores{ConfusionCounts(model.config().heads[0].classes),
                            ConfusionCounts(model.config().heads[1].classes)};
  NoGradGuard no_grad;
  ForwardContext ctx;
  ctx.hook = hook;
  for (std::size_t start = 0; start < samples.size();
       start += static_cast<std::size_t>(batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + std::size_t(batch_size));
         ++i)
      idx.push_back(i);
    const Batch b = make_batch(samples, idx, model.dtype());
    const HeadOutputs out = model.forward(b.image, ctx);
    scores.drivable.merge(confusion(argmax(out.drivable), b.drivable, scores.drivable.classes));
    scores.lane.merge(confusion(argmax(out.lane), b.lane, scores.lane.classes));
  }
  return scores;
}

Prediction predict(const Model& model, const Tensor& image, ConvHook* hook) {
  NoGradGuard no_grad;
  ForwardContext ctx;
  ctx.hook = hook;
  const HeadOutputs out = model.forward(image.to(model.dtype()), ctx);
  return {argmax(out.drivable), argmax(out.lane)};
}

}  // namespace tlnp
