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

#include "tlnp/image.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tlnp {
namespace {

void check_window(std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w,
                  std::int64_t fh, std::int64_t fw) {
  if (h < 1 || w < 1 || y < 0 || x < 0 || y + h > fh || x + w > fw) {
    throw ShapeError("crop window " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                     std::to_string(y) + ", " + std::to_string(x) + ") outside " +
                     std::to_string(fh) + "x" + std::to_string(fw));
  }
}

// Maps output index i of `out` samples to a source coordinate in `in` samples.
double source_coord(std::int64_t i, std::int64_t in, std::int64_t out) {
  return (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) -
         0.5;
}

template <class F>
Tensor remap(const Tensor& image, std::int64_t oh, std::int64_t ow, F&& value) {
  const Shape s = image.shape();
  Tensor out(Shape{s.n, s.c, oh, ow}, image.dtype());
  dispatch(image.dtype(), [&]<class T>() {
    auto src = image.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
      const T* plane = src.data() + p * s.plane();
      T* o = dst.data() + p * oh * ow;
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t x = 0; x < ow; ++x) o[y * ow + x] = value(plane, y, x);
    }
  });
  return out;
}

template <class F>
LabelMap remap(const LabelMap& labels, std::int64_t oh, std::int64_t ow, F&& value) {
  LabelMap out(labels.n, oh, ow);
  for (std::int64_t b = 0; b < labels.n; ++b)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x) out.at(b, y, x) = value(b, y, x);
  return out;
}

}  // namespace

Tensor resize_bilinear(const Tensor& image, std::int64_t height, std::int64_t width) {
  if (height < 1 || width < 1) throw ShapeError("resize target must be positive");
  const Shape s = image.shape();
  if (s.h == height && s.w == width) return image.clone();
  return remap(image, height, width, [&]<class T>(const T* plane, std::int64_t y, std::int64_t x) {
    const double sy = std::clamp(source_coord(y, s.h, height), 0.0, double(s.h - 1));
    const double sx = std::clamp(source_coord(x, s.w, width), 0.0, double(s.w - 1));
    const auto y0 = static_cast<std::int64_t>(sy), x0 = static_cast<std::int64_t>(sx);
    const std::int64_t y1 = std::min(y0 + 1, s.h - 1), x1 = std::min(x0 + 1, s.w - 1);
    const double fy = sy - double(y0), fx = sx - double(x0);
    const double top = (1 - fx) * plane[y0 * s.w + x0] + fx * plane[y0 * s.w + x1];
    const double bottom = (1 - fx) * plane[y1 * s.w + x0] + fx * plane[y1 * s.w + x1];
    return static_cast<T>((1 - fy) * top + fy * bottom);
  });
}

LabelMap resize_nearest(const LabelMap& labels, std::int64_t height, std::int64_t width) {
  if (height < 1 || width < 1) throw ShapeError("resize target must be positive");
  return remap(labels, height, width, [&](std::int64_t b, std::int64_t y, std::int64_t x) {
    // Integer form of floor((i + 0.5) * in / out).
    const std::int64_t cy = std::min((2 * y + 1) * labels.h / (2 * height), labels.h - 1);
    const std::int64_t cx = std::min((2 * x + 1) * labels.w / (2 * width), labels.w - 1);
    return labels.at(b, cy, cx);
  });
}

Tensor hflip(const Tensor& image) {
  const Shape s = image.shape();
  return remap(image, s.h, s.w, [&]<class T>(const T* plane, std::int64_t y, std::int64_t x) {
    return plane[y * s.w + (s.w - 1 - x)];
  });
}

LabelMap hflip(const LabelMap& labels) {
  return remap(labels, labels.h, labels.w, [&](std::int64_t b, std::int64_t y, std::int64_t x) {
    return labels.at(b, y, labels.w - 1 - x);
  });
}

Tensor translate(const Tensor& image, std::int64_t dy, std::int64_t dx, double fill) {
  const Shape s = image.shape();
  return remap(image, s.h, s.w, [&]<class T>(const T* plane, std::int64_t y, std::int64_t x) {
    const std::int64_t sy = y - dy, sx = x - dx;
    if (sy < 0 || sy >= s.h || sx < 0 || sx >= s.w) return static_cast<T>(fill);
    return plane[sy * s.w + sx];
  });
}

LabelMap translate(const LabelMap& labels, std::int64_t dy, std::int64_t dx,
                   std::int32_t fill) {
  return remap(labels, labels.h, labels.w, [&](std::int64_t b, std::int64_t y, std::int64_t x) {
    const std::int64_t sy = y - dy, sx = x - dx;
    if (sy < 0 || sy >= labels.h || sx < 0 || sx >= labels.w) return fill;
    return labels.at(b, sy, sx);
  });
}

Tensor crop(const Tensor& image, std::int64_t y, std::int64_t x, std::int64_t h,
            std::int64_t w) {
  const Shape s = image.shape();
  check_window(y, x, h, w, s.h, s.w);
  return remap(image, h, w, [&]<class T>(const T* plane, std::int64_t i, std::int64_t j) {
    return plane[(y + i) * s.w + (x + j)];
  });
}

LabelMap crop(const LabelMap& labels, std::int64_t y, std::int64_t x, std::int64_t h,
              std::int64_t w) {
  check_window(y, x, h, w, labels.h, labels.w);
  return remap(labels, h, w, [&](std::int64_t b, std::int64_t i, std::int64_t j) {
    return labels.at(b, y + i, x + j);
  });
}

Hsv rgb_to_hsv(double r, double g, double b) {
  const double hi = std::max({r, g, b}), lo = std::min({r, g, b});
  const double delta = hi - lo;
  Hsv out;
  out.v = hi;
  out.s = hi > 0 ? delta / hi : 0.0;
  if (delta <= 0) return out;
  double h;
  if (hi == r) {
    h = (g - b) / delta;
  } else if (hi == g) {
    h = 2.0 + (b - r) / delta;
  } else {
    h = 4.0 + (r - g) / delta;
  }
  h /= 6.0;
  out.h = h < 0 ? h + 1.0 : h;
  return out;
}

void hsv_to_rgb(const Hsv& hsv, double& r, double& g, double& b) {
  const double h6 = (hsv.h - std::floor(hsv.h)) * 6.0;
  const auto sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double v = hsv.v, p = v * (1 - hsv.s), q = v * (1 - hsv.s * f),
               t = v * (1 - hsv.s * (1 - f));
  switch (sector) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

Tensor hsv_adjust(const Tensor& image, double hue_shift, double saturation_gain,
                  double value_gain) {
  const Shape s = image.shape();
  if (s.c != 3) throw ShapeError("HSV adjustment needs 3 channels, got " + s.str());
  Tensor out = image.clone();
  dispatch(image.dtype(), [&]<class T>() {
    auto d = out.mutable_data<T>();
    const std::int64_t plane = s.plane();
    for (std::int64_t n = 0; n < s.n; ++n) {
      T* base = d.data() + n * 3 * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        Hsv hsv = rgb_to_hsv(base[i], base[plane + i], base[2 * plane + i]);
        hsv.h += hue_shift;
        hsv.s = std::clamp(hsv.s * saturation_gain, 0.0, 1.0);
        hsv.v = std::clamp(hsv.v * value_gain, 0.0, 1.0);
        double r, g, b;
        hsv_to_rgb(hsv, r, g, b);
        base[i] = static_cast<T>(r);
        base[plane + i] = static_cast<T>(g);
        base[2 * plane + i] = static_cast<T>(b);
      }
    }
  });
  return out;
}

}  // namespace tlnp
