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

#include <algorithm>
#include <cmath>

#include "tlnp/ops.hpp"

namespace tlnp {
namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
  if (a.dtype() != b.dtype()) {
    throw ShapeError(std::string(op) + ": dtype mismatch");
  }
}

void require_channel_vector(const Tensor& v, const Tensor& x, const char* op,
                            const char* what) {
  if (v.shape() != Shape{1, x.shape().c, 1, 1}) {
    throw ShapeError(std::string(op) + ": " + what + " shape " + v.shape().str() +
                     " does not match channel count " + std::to_string(x.shape().c));
  }
  if (v.dtype() != x.dtype()) {
    throw ShapeError(std::string(op) + ": " + what + " dtype mismatch");
  }
}

// Elementwise y = f(x) with dy/dx = df(x, y).
template <class F, class DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
  Tensor out = make_result(x.shape(), x.dtype(), op, {x},
                           [x, df](const TensorImpl& o) {
                             dispatch(o.dtype, [&]<class T>() {
                               auto go = grad_values<T>(o);
                               auto xd = values<T>(x.impl());
                               auto yd = values<T>(o);
                               auto gx = grad_buffer<T>(x.impl());
                               for (std::size_t i = 0; i < go.size(); ++i) {
                                 gx[i] += go[i] * static_cast<T>(df(xd[i], yd[i]));
                               }
                             });
                           });
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto od = values<T>(out.impl());
    for (std::size_t i = 0; i < xd.size(); ++i) od[i] = static_cast<T>(f(xd[i]));
  });
  return out;
}

struct PatchGrid {
  std::int64_t n, c, h, w, ph, pw, cols, count;

  std::int64_t index(std::int64_t y, std::int64_t x) const {
    return (y / ph) * cols + x / pw;
  }
};

PatchGrid make_grid(const Shape& s, std::int64_t ph, std::int64_t pw,
                    const char* op) {
  if (ph < 1 || pw < 1 || s.h % ph != 0 || s.w % pw != 0) {
    throw ShapeError(std::string(op) + ": patch " + std::to_string(ph) + "x" +
                     std::to_string(pw) + " does not tile " + std::to_string(s.h) +
                     "x" + std::to_string(s.w));
  }
  return {s.n, s.c, s.h, s.w, ph, pw, s.w / pw, (s.h / ph) * (s.w / pw)};
}

}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum, double eps) {
  require_channel_vector(gamma, x, "batch_norm", "gamma");
  require_channel_vector(beta, x, "batch_norm", "beta");
  require_channel_vector(running_mean, x, "batch_norm", "running_mean");
  require_channel_vector(running_var, x, "batch_norm", "running_var");
  const Shape s = x.shape();
  const std::int64_t plane = s.plane();
  const std::int64_t count = s.n * plane;

  // Per-channel centre and inverse std actually used by this call.
  auto centre = std::make_shared<std::vector<double>>(s.c);
  auto inv_std = std::make_shared<std::vector<double>>(s.c);

  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto rm = running_mean.mutable_data<T>();
    auto rv = running_var.mutable_data<T>();
    for (std::int64_t c = 0; c < s.c; ++c) {
      if (training) {
        double acc = 0;
        for (std::int64_t n = 0; n < s.n; ++n) {
          const T* p = xd.data() + (n * s.c + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
        }
        const double mu = acc / static_cast<double>(count);
        double sq = 0;
        for (std::int64_t n = 0; n < s.n; ++n) {
          const T* p = xd.data() + (n * s.c + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const double d = p[i] - mu;
            sq += d * d;
          }
        }
        const double var = sq / static_cast<double>(count);
        (*centre)[c] = mu;
        (*inv_std)[c] = 1.0 / std::sqrt(var + eps);
        const double unbiased =
            count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1)
                      : var;
        rm[c] = static_cast<T>((1.0 - momentum) * rm[c] + momentum * mu);
        rv[c] = static_cast<T>((1.0 - momentum) * rv[c] + momentum * unbiased);
      } else {
        (*centre)[c] = rm[c];
        (*inv_std)[c] = 1.0 / std::sqrt(static_cast<double>(rv[c]) + eps);
      }
    }
  });

  Tensor out = make_result(
      s, x.dtype(), "batch_norm", {x, gamma, beta},
      [x, gamma, beta, centre, inv_std, training](const TensorImpl& o) {
        dispatch(o.dtype, [&]<class T>() {
          const Shape s = x.shape();
          const std::int64_t plane = s.plane();
          const double count = static_cast<double>(s.n * plane);
          auto go = grad_values<T>(o);
          auto xd = values<T>(x.impl());
          auto gd = values<T>(gamma.impl());
          for (std::int64_t c = 0; c < s.c; ++c) {
            const double mu = (*centre)[c];
            const double is = (*inv_std)[c];
            double sum_g = 0, sum_gx = 0;
            for (std::int64_t n = 0; n < s.n; ++n) {
              const std::int64_t off = (n * s.c + c) * plane;
              for (std::int64_t i = 0; i < plane; ++i) {
                sum_g += go[off + i];
                sum_gx += go[off + i] * (xd[off + i] - mu) * is;
              }
            }
            if (gamma.requires_grad()) grad_buffer<T>(gamma.impl())[c] += static_cast<T>(sum_gx);
            if (beta.requires_grad()) grad_buffer<T>(beta.impl())[c] += static_cast<T>(sum_g);
            if (!x.requires_grad()) continue;
            auto gx = grad_buffer<T>(x.impl());
            const double g = gd[c];
            for (std::int64_t n = 0; n < s.n; ++n) {
              const std::int64_t off = (n * s.c + c) * plane;
              for (std::int64_t i = 0; i < plane; ++i) {
                double v;
                if (training) {
                  const double xhat = (xd[off + i] - mu) * is;
                  v = g * is / count * (count * go[off + i] - sum_g - xhat * sum_gx);
                } else {
                  v = g * is * go[off + i];
                }
                gx[off + i] += static_cast<T>(v);
              }
            }
          }
        });
      });

  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto gd = gamma.data<T>();
    auto bd = beta.data<T>();
    auto od = values<T>(out.impl());
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        const std::int64_t off = (n * s.c + c) * plane;
        const double mu = (*centre)[c];
        const double a = gd[c] * (*inv_std)[c];
        const double b = bd[c];
        for (std::int64_t i = 0; i < plane; ++i) {
          od[off + i] = static_cast<T>((xd[off + i] - mu) * a + b);
        }
      }
    }
  });
  return out;
}

Tensor prelu(const Tensor& x, const Tensor& slope) {
  require_channel_vector(slope, x, "prelu", "slope");
  const Shape s = x.shape();
  Tensor out = make_result(s, x.dtype(), "prelu", {x, slope},
                           [x, slope](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      const Shape s = x.shape();
      const std::int64_t plane = s.plane();
      auto go = grad_values<T>(o);
      auto xd = values<T>(x.impl());
      auto ad = values<T>(slope.impl());
      T* gx = x.requires_grad() ? grad_buffer<T>(x.impl()).data() : nullptr;
      T* ga = slope.requires_grad() ? grad_buffer<T>(slope.impl()).data() : nullptr;
      for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
          const std::int64_t off = (n * s.c + c) * plane;
          T acc = 0;
          for (std::int64_t i = 0; i < plane; ++i) {
            const T v = xd[off + i];
            if (v >= 0) {
              if (gx) gx[off + i] += go[off + i];
            } else {
              if (gx) gx[off + i] += go[off + i] * ad[c];
              acc += go[off + i] * v;
            }
          }
          if (ga) ga[c] += acc;
        }
      }
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto ad = slope.data<T>();
    auto od = values<T>(out.impl());
    const std::int64_t plane = s.plane();
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        const std::int64_t off = (n * s.c + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T v = xd[off + i];
          od[off + i] = v >= 0 ? v : ad[c] * v;
        }
      }
    }
  });
  return out;
}

Tensor avg_pool2(const Tensor& x) {
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw ShapeError("avg_pool2: spatial size " + std::to_string(s.h) + "x" +
                     std::to_string(s.w) + " is not even");
  }
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor out = make_result(os, x.dtype(), "avg_pool2", {x}, [x](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      const Shape s = x.shape();
      auto go = grad_values<T>(o);
      auto gx = grad_buffer<T>(x.impl());
      const std::int64_t oh = s.h / 2, ow = s.w / 2;
      for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
        for (std::int64_t y = 0; y < oh; ++y) {
          for (std::int64_t xx = 0; xx < ow; ++xx) {
            const T g = go[(nc * oh + y) * ow + xx] * T(0.25);
            T* base = gx.data() + (nc * s.h + 2 * y) * s.w + 2 * xx;
            base[0] += g;
            base[1] += g;
            base[s.w] += g;
            base[s.w + 1] += g;
          }
        }
      }
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto od = values<T>(out.impl());
    for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
      for (std::int64_t y = 0; y < os.h; ++y) {
        for (std::int64_t xx = 0; xx < os.w; ++xx) {
          const T* base = xd.data() + (nc * s.h + 2 * y) * s.w + 2 * xx;
          od[(nc * os.h + y) * os.w + xx] =
              (base[0] + base[1] + base[s.w] + base[s.w + 1]) * T(0.25);
        }
      }
    }
  });
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty input list");
  const Shape first = xs.front().shape();
  std::int64_t channels = 0;
  for (const auto& t : xs) {
    const Shape& s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: spatial/batch mismatch " + first.str() +
                       " vs " + s.str());
    }
    if (t.dtype() != xs.front().dtype()) {
      throw ShapeError("concat_channels: dtype mismatch");
    }
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  const std::int64_t plane = first.plane();
  Tensor out = make_result(os, xs.front().dtype(), "concat_channels", xs,
                           [xs, plane, channels](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      auto go = grad_values<T>(o);
      std::int64_t c0 = 0;
      for (const auto& t : xs) {
        const Shape& s = t.shape();
        if (t.requires_grad()) {
          auto gx = grad_buffer<T>(t.impl());
          for (std::int64_t n = 0; n < s.n; ++n) {
            const T* src = go.data() + (n * channels + c0) * plane;
            T* dst = gx.data() + n * s.c * plane;
            for (std::int64_t i = 0; i < s.c * plane; ++i) dst[i] += src[i];
          }
        }
        c0 += s.c;
      }
    });
  });
  dispatch(xs.front().dtype(), [&]<class T>() {
    auto od = values<T>(out.impl());
    std::int64_t c0 = 0;
    for (const auto& t : xs) {
      const Shape& s = t.shape();
      auto xd = t.data<T>();
      for (std::int64_t n = 0; n < s.n; ++n) {
        std::copy_n(xd.data() + n * s.c * plane, s.c * plane,
                    od.data() + (n * channels + c0) * plane);
      }
      c0 += s.c;
    }
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  Tensor out = make_result(a.shape(), a.dtype(), "add", {a, b},
                           [a, b](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      auto go = grad_values<T>(o);
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = grad_buffer<T>(t->impl());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
    });
  });
  dispatch(a.dtype(), [&]<class T>() {
    auto ad = a.data<T>();
    auto bd = b.data<T>();
    auto od = values<T>(out.impl());
    for (std::size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] + bd[i];
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  Tensor out = make_result(a.shape(), a.dtype(), "sub", {a, b},
                           [a, b](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      auto go = grad_values<T>(o);
      if (a.requires_grad()) {
        auto g = grad_buffer<T>(a.impl());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
      }
      if (b.requires_grad()) {
        auto g = grad_buffer<T>(b.impl());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] -= go[i];
      }
    });
  });
  dispatch(a.dtype(), [&]<class T>() {
    auto ad = a.data<T>();
    auto bd = b.data<T>();
    auto od = values<T>(out.impl());
    for (std::size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] - bd[i];
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  Tensor out = make_result(a.shape(), a.dtype(), "mul", {a, b},
                           [a, b](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      auto go = grad_values<T>(o);
      auto ad = values<T>(a.impl());
      auto bd = values<T>(b.impl());
      if (a.requires_grad()) {
        auto g = grad_buffer<T>(a.impl());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * bd[i];
      }
      if (b.requires_grad()) {
        auto g = grad_buffer<T>(b.impl());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * ad[i];
      }
    });
  });
  dispatch(a.dtype(), [&]<class T>() {
    auto ad = a.data<T>();
    auto bd = b.data<T>();
    auto od = values<T>(out.impl());
    for (std::size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] * bd[i];
  });
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same(a, b, "div");
  Tensor out = make_result(a.shape(), a.dtype(), "div", {a, b},
                           [a, b](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      auto go = grad_values<T>(o);
      auto ad = values<T>(a.impl());
      auto bd = values<T>(b.impl());
      if (a.requires_grad()) {
        auto g = grad_buffer<T>(a.impl());
        for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] / bd[i];
      }
      if (b.requires_grad()) {
        auto g = grad_buffer<T>(b.impl());
        for (std::size_t i = 0; i < go.size(); ++i) {
          g[i] -= go[i] * ad[i] / (bd[i] * bd[i]);
        }
      }
    });
  });
  dispatch(a.dtype(), [&]<class T>() {
    auto ad = a.data<T>();
    auto bd = b.data<T>();
    auto od = values<T>(out.impl());
    for (std::size_t i = 0; i < ad.size(); ++i) od[i] = ad[i] / bd[i];
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](auto v) { return v * factor; },
      [factor](auto, auto) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      x, "add_scalar", [value](auto v) { return v + value; },
      [](auto, auto) { return 1.0; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](auto v) { return std::log(v); },
      [](auto v, auto) { return 1.0 / static_cast<double>(v); });
}

Tensor pow(const Tensor& x, double exponent) {
  return unary(
      x, "pow",
      [exponent](auto v) {
        if (exponent == 0.0) return 1.0;
        return std::pow(static_cast<double>(v), exponent);
      },
      [exponent](auto v, auto) {
        if (exponent == 0.0) return 0.0;
        if (exponent == 1.0) return 1.0;
        if (v == 0) return 0.0;
        return exponent * std::pow(static_cast<double>(v), exponent - 1.0);
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, "clamp",
      [lo, hi](auto v) { return std::clamp(static_cast<double>(v), lo, hi); },
      [lo, hi](auto v, auto) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor softmax_channel(const Tensor& x) {
  const Shape s = x.shape();
  Tensor out = make_result(s, x.dtype(), "softmax_channel", {x},
                           [x](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      const Shape s = x.shape();
      const std::int64_t plane = s.plane();
      auto go = grad_values<T>(o);
      auto yd = values<T>(o);
      auto gx = grad_buffer<T>(x.impl());
      for (std::int64_t n = 0; n < s.n; ++n) {
        const std::int64_t base = n * s.c * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          T dot = 0;
          for (std::int64_t c = 0; c < s.c; ++c) {
            const std::int64_t k = base + c * plane + i;
            dot += yd[k] * go[k];
          }
          for (std::int64_t c = 0; c < s.c; ++c) {
            const std::int64_t k = base + c * plane + i;
            gx[k] += yd[k] * (go[k] - dot);
          }
        }
      }
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto od = values<T>(out.impl());
    const std::int64_t plane = s.plane();
    for (std::int64_t n = 0; n < s.n; ++n) {
      const std::int64_t base = n * s.c * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        T mx = xd[base + i];
        for (std::int64_t c = 1; c < s.c; ++c) mx = std::max(mx, xd[base + c * plane + i]);
        T total = 0;
        for (std::int64_t c = 0; c < s.c; ++c) {
          const std::int64_t k = base + c * plane + i;
          od[k] = std::exp(xd[k] - mx);
          total += od[k];
        }
        for (std::int64_t c = 0; c < s.c; ++c) od[base + c * plane + i] /= total;
      }
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_result({1, 1, 1, 1}, x.dtype(), "sum", {x}, [x](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      const T g = grad_values<T>(o)[0];
      auto gx = grad_buffer<T>(x.impl());
      for (auto& v : gx) v += g;
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    T acc = 0;
    for (T v : x.data<T>()) acc += v;
    values<T>(out.impl())[0] = acc;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_per_channel(const Tensor& x) {
  const Shape s = x.shape();
  Tensor out = make_result({1, s.c, 1, 1}, x.dtype(), "sum_per_channel", {x},
                           [x](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      const Shape s = x.shape();
      auto go = grad_values<T>(o);
      auto gx = grad_buffer<T>(x.impl());
      const std::int64_t plane = s.plane();
      for (std::int64_t n = 0; n < s.n; ++n) {
        for (std::int64_t c = 0; c < s.c; ++c) {
          T* p = gx.data() + (n * s.c + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) p[i] += go[c];
        }
      }
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto od = values<T>(out.impl());
    const std::int64_t plane = s.plane();
    for (std::int64_t n = 0; n < s.n; ++n) {
      for (std::int64_t c = 0; c < s.c; ++c) {
        const T* p = xd.data() + (n * s.c + c) * plane;
        T acc = 0;
        for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
        od[c] += acc;
      }
    }
  });
  return out;
}

Tensor patch_softmax(const Tensor& scores, std::int64_t ph, std::int64_t pw) {
  const PatchGrid g = make_grid(scores.shape(), ph, pw, "patch_softmax");
  // Visits every (n, c, patch) group as a list of flat offsets.
  auto for_each_group = [g](auto&& fn) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(g.ph * g.pw));
    for (std::int64_t nc = 0; nc < g.n * g.c; ++nc) {
      for (std::int64_t py = 0; py < g.h / g.ph; ++py) {
        for (std::int64_t px = 0; px < g.cols; ++px) {
          std::size_t k = 0;
          for (std::int64_t y = 0; y < g.ph; ++y) {
            for (std::int64_t x = 0; x < g.pw; ++x) {
              idx[k++] = (nc * g.h + py * g.ph + y) * g.w + px * g.pw + x;
            }
          }
          fn(idx);
        }
      }
    }
  };
  Tensor out = make_result(scores.shape(), scores.dtype(), "patch_softmax", {scores},
                           [scores, for_each_group](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      auto go = grad_values<T>(o);
      auto yd = values<T>(o);
      auto gx = grad_buffer<T>(scores.impl());
      for_each_group([&](const std::vector<std::int64_t>& idx) {
        T dot = 0;
        for (auto k : idx) dot += yd[k] * go[k];
        for (auto k : idx) gx[k] += yd[k] * (go[k] - dot);
      });
    });
  });
  dispatch(scores.dtype(), [&]<class T>() {
    auto xd = scores.data<T>();
    auto od = values<T>(out.impl());
    for_each_group([&](const std::vector<std::int64_t>& idx) {
      T mx = xd[idx[0]];
      for (auto k : idx) mx = std::max(mx, xd[k]);
      T total = 0;
      for (auto k : idx) {
        od[k] = std::exp(xd[k] - mx);
        total += od[k];
      }
      for (auto k : idx) od[k] /= total;
    });
  });
  return out;
}

Tensor patch_centers(const Tensor& attn, const Tensor& x, std::int64_t ph,
                     std::int64_t pw) {
  const Shape as = attn.shape();
  const Shape xs = x.shape();
  if (as.n != xs.n || as.h != xs.h || as.w != xs.w || attn.dtype() != x.dtype()) {
    throw ShapeError("patch_centers: attention " + as.str() +
                     " does not align with features " + xs.str());
  }
  const PatchGrid g = make_grid(xs, ph, pw, "patch_centers");
  const std::int64_t k_count = as.c;
  const Shape os{xs.n, g.count, k_count, xs.c};
  Tensor out = make_result(os, x.dtype(), "patch_centers", {attn, x},
                           [attn, x, g, k_count](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      auto go = grad_values<T>(o);
      auto ad = values<T>(attn.impl());
      auto xd = values<T>(x.impl());
      T* ga = attn.requires_grad() ? grad_buffer<T>(attn.impl()).data() : nullptr;
      T* gx = x.requires_grad() ? grad_buffer<T>(x.impl()).data() : nullptr;
      const std::int64_t plane = g.h * g.w;
      for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t y = 0; y < g.h; ++y) {
          for (std::int64_t xx = 0; xx < g.w; ++xx) {
            const std::int64_t pix = y * g.w + xx;
            const T* gc = go.data() + (n * g.count + g.index(y, xx)) * k_count * g.c;
            for (std::int64_t k = 0; k < k_count; ++k) {
              const std::int64_t ai = (n * k_count + k) * plane + pix;
              T acc = 0;
              for (std::int64_t c = 0; c < g.c; ++c) {
                const std::int64_t xi = (n * g.c + c) * plane + pix;
                acc += gc[k * g.c + c] * xd[xi];
                if (gx) gx[xi] += gc[k * g.c + c] * ad[ai];
              }
              if (ga) ga[ai] += acc;
            }
          }
        }
      }
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    auto ad = attn.data<T>();
    auto xd = x.data<T>();
    auto od = values<T>(out.impl());
    const std::int64_t plane = g.h * g.w;
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t y = 0; y < g.h; ++y) {
        for (std::int64_t xx = 0; xx < g.w; ++xx) {
          const std::int64_t pix = y * g.w + xx;
          T* oc = od.data() + (n * g.count + g.index(y, xx)) * k_count * g.c;
          for (std::int64_t k = 0; k < k_count; ++k) {
            const T a = ad[(n * k_count + k) * plane + pix];
            for (std::int64_t c = 0; c < g.c; ++c) {
              oc[k * g.c + c] += a * xd[(n * g.c + c) * plane + pix];
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor patch_similarity(const Tensor& x, const Tensor& centers, std::int64_t ph,
                        std::int64_t pw, double factor) {
  const Shape xs = x.shape();
  const PatchGrid g = make_grid(xs, ph, pw, "patch_similarity");
  const Shape cs = centers.shape();
  if (cs.n != xs.n || cs.c != g.count || cs.w != xs.c || centers.dtype() != x.dtype()) {
    throw ShapeError("patch_similarity: centers " + cs.str() +
                     " do not match features " + xs.str());
  }
  const std::int64_t k_count = cs.h;
  const Shape os{xs.n, k_count, xs.h, xs.w};
  Tensor out = make_result(os, x.dtype(), "patch_similarity", {x, centers},
                           [x, centers, g, k_count, factor](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      auto go = grad_values<T>(o);
      auto xd = values<T>(x.impl());
      auto cd = values<T>(centers.impl());
      T* gx = x.requires_grad() ? grad_buffer<T>(x.impl()).data() : nullptr;
      T* gc = centers.requires_grad() ? grad_buffer<T>(centers.impl()).data() : nullptr;
      const std::int64_t plane = g.h * g.w;
      const T f = static_cast<T>(factor);
      for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t y = 0; y < g.h; ++y) {
          for (std::int64_t xx = 0; xx < g.w; ++xx) {
            const std::int64_t pix = y * g.w + xx;
            const std::int64_t cbase = (n * g.count + g.index(y, xx)) * k_count * g.c;
            for (std::int64_t k = 0; k < k_count; ++k) {
              const T gs = go[(n * k_count + k) * plane + pix] * f;
              for (std::int64_t c = 0; c < g.c; ++c) {
                const std::int64_t xi = (n * g.c + c) * plane + pix;
                if (gx) gx[xi] += gs * cd[cbase + k * g.c + c];
                if (gc) gc[cbase + k * g.c + c] += gs * xd[xi];
              }
            }
          }
        }
      }
    });
  });
  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto cd = centers.data<T>();
    auto od = values<T>(out.impl());
    const std::int64_t plane = g.h * g.w;
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t y = 0; y < g.h; ++y) {
        for (std::int64_t xx = 0; xx < g.w; ++xx) {
          const std::int64_t pix = y * g.w + xx;
          const T* cc = cd.data() + (n * g.count + g.index(y, xx)) * k_count * g.c;
          for (std::int64_t k = 0; k < k_count; ++k) {
            T acc = 0;
            for (std::int64_t c = 0; c < g.c; ++c) {
              acc += xd[(n * g.c + c) * plane + pix] * cc[k * g.c + c];
            }
            od[(n * k_count + k) * plane + pix] = acc * static_cast<T>(factor);
          }
        }
      }
    }
  });
  return out;
}

Tensor patch_aggregate(const Tensor& weights, const Tensor& centers,
                       std::int64_t ph, std::int64_t pw) {
  const Shape ws = weights.shape();
  const PatchGrid g = make_grid(ws, ph, pw, "patch_aggregate");
  const Shape cs = centers.shape();
  if (cs.n != ws.n || cs.c != g.count || cs.h != ws.c ||
      centers.dtype() != weights.dtype()) {
    throw ShapeError("patch_aggregate: centers " + cs.str() +
                     " do not match weights " + ws.str());
  }
  const std::int64_t k_count = ws.c;
  const std::int64_t channels = cs.w;
  const Shape os{ws.n, channels, ws.h, ws.w};
  Tensor out = make_result(os, weights.dtype(), "patch_aggregate", {weights, centers},
                           [weights, centers, g, k_count, channels](const TensorImpl& o) {
    dispatch(o.dtype, [&]<class T>() {
      auto go = grad_values<T>(o);
      auto wd = values<T>(weights.impl());
      auto cd = values<T>(centers.impl());
      T* gw = weights.requires_grad() ? grad_buffer<T>(weights.impl()).data() : nullptr;
      T* gc = centers.requires_grad() ? grad_buffer<T>(centers.impl()).data() : nullptr;
      const std::int64_t plane = g.h * g.w;
      for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t y = 0; y < g.h; ++y) {
          for (std::int64_t xx = 0; xx < g.w; ++xx) {
            const std::int64_t pix = y * g.w + xx;
            const std::int64_t cbase = (n * g.count + g.index(y, xx)) * k_count * channels;
            for (std::int64_t k = 0; k < k_count; ++k) {
              const std::int64_t wi = (n * k_count + k) * plane + pix;
              T acc = 0;
              for (std::int64_t c = 0; c < channels; ++c) {
                const T gv = go[(n * channels + c) * plane + pix];
                acc += gv * cd[cbase + k * channels + c];
                if (gc) gc[cbase + k * channels + c] += gv * wd[wi];
              }
              if (gw) gw[wi] += acc;
            }
          }
        }
      }
    });
  });
  dispatch(weights.dtype(), [&]<class T>() {
    auto wd = weights.data<T>();
    auto cd = centers.data<T>();
    auto od = values<T>(out.impl());
    const std::int64_t plane = g.h * g.w;
    for (std::int64_t n = 0; n < g.n; ++n) {
      for (std::int64_t y = 0; y < g.h; ++y) {
        for (std::int64_t xx = 0; xx < g.w; ++xx) {
          const std::int64_t pix = y * g.w + xx;
          const T* cc = cd.data() + (n * g.count + g.index(y, xx)) * k_count * channels;
          for (std::int64_t k = 0; k < k_count; ++k) {
            const T wv = wd[(n * k_count + k) * plane + pix];
            for (std::int64_t c = 0; c < channels; ++c) {
              od[(n * channels + c) * plane + pix] += wv * cc[k * channels + c];
            }
          }
        }
      }
    }
  });
  return out;
}

}  // namespace tlnp
