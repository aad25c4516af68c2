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

#include <Eigen/Core>

#include "tlnp/ops.hpp"

namespace tlnp {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Sliding-window geometry of one convolution in forward orientation:
// input (h, w) -> output (oh, ow).
struct Window {
  std::int64_t h, w, oh, ow;
  std::int64_t kh, kw, sh, sw, ph, pw, dh, dw;

  std::int64_t rows(std::int64_t channels) const { return channels * kh * kw; }
  std::int64_t cols() const { return oh * ow; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0;
  }
};

template <class T>
void im2col(const T* x, std::int64_t channels, const Window& g, T* cols) {
  const std::int64_t n_cols = g.cols();
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((c * g.kh + ki) * g.kw + kj) * n_cols;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.sh - g.ph + ki * g.dh;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.sw - g.pw + kj * g.dw;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of a column buffer back onto an input-shaped image.
template <class T>
void col2im(const T* cols, std::int64_t channels, const Window& g, T* x) {
  const std::int64_t n_cols = g.cols();
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((c * g.kh + ki) * g.kw + kj) * n_cols;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.sh - g.ph + ki * g.dh;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + oy * g.ow;
          T* dst = x + (c * g.h + iy) * g.w;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.sw - g.pw + kj * g.dw;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw ShapeError(std::string(op) + ": dtype mismatch (" +
                     dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()) + ")");
  }
}

void check_bias(const std::optional<Tensor>& bias, std::int64_t out,
                const Tensor& x, const char* op) {
  if (!bias) return;
  check_same_dtype(x, *bias, op);
  if (bias->shape() != Shape{1, out, 1, 1}) {
    throw ShapeError(std::string(op) + ": bias shape " + bias->shape().str() +
                     " does not match out_channels " + std::to_string(out));
  }
}

template <class T>
void add_bias(T* out, const T* b, std::int64_t channels, std::int64_t plane) {
  for (std::int64_t c = 0; c < channels; ++c) {
    T* o = out + c * plane;
    for (std::int64_t i = 0; i < plane; ++i) o[i] += b[c];
  }
}

template <class T>
void bias_grad(const T* gout, T* gb, std::int64_t channels, std::int64_t plane) {
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* g = gout + c * plane;
    T acc = 0;
    for (std::int64_t i = 0; i < plane; ++i) acc += g[i];
    gb[c] += acc;
  }
}

// groups == in == out: one filter per channel, computed directly.
template <class T>
void depthwise_forward(const T* x, const T* w, T* out, std::int64_t channels,
                       const Window& g) {
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* xc = x + c * g.h * g.w;
    const T* wc = w + c * g.kh * g.kw;
    T* oc = out + c * g.oh * g.ow;
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const T wv = wc[ki * g.kw + kj];
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.sh - g.ph + ki * g.dh;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = xc + iy * g.w;
          T* dst = oc + oy * g.ow;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.sw - g.pw + kj * g.dw;
            if (ix >= 0 && ix < g.w) dst[ox] += wv * src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void depthwise_backward(const T* x, const T* w, const T* gout, T* gx, T* gw,
                        std::int64_t channels, const Window& g) {
  for (std::int64_t c = 0; c < channels; ++c) {
    const T* xc = x + c * g.h * g.w;
    const T* wc = w + c * g.kh * g.kw;
    const T* goc = gout + c * g.oh * g.ow;
    for (std::int64_t ki = 0; ki < g.kh; ++ki) {
      for (std::int64_t kj = 0; kj < g.kw; ++kj) {
        const T wv = wc[ki * g.kw + kj];
        T wacc = 0;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const std::int64_t iy = oy * g.sh - g.ph + ki * g.dh;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = xc + iy * g.w;
          const T* go = goc + oy * g.ow;
          T* gdst = gx ? gx + c * g.h * g.w + iy * g.w : nullptr;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const std::int64_t ix = ox * g.sw - g.pw + kj * g.dw;
            if (ix < 0 || ix >= g.w) continue;
            wacc += go[ox] * src[ix];
            if (gdst) gdst[ix] += go[ox] * wv;
          }
        }
        if (gw) gw[c * g.kh * g.kw + ki * g.kw + kj] += wacc;
      }
    }
  }
}

}  // namespace

ConvParams ConvParams::same(std::int64_t in, std::int64_t out, std::int64_t k,
                            std::int64_t stride, std::int64_t dilation,
                            std::int64_t groups, bool bias) {
  ConvParams p;
  p.in_channels = in;
  p.out_channels = out;
  p.kernel = {k, k};
  p.stride = {stride, stride};
  p.dilation = {dilation, dilation};
  p.padding = {dilation * (k - 1) / 2, dilation * (k - 1) / 2};
  p.groups = groups;
  p.has_bias = bias;
  return p;
}

Shape ConvParams::weight_shape() const {
  return {out_channels, in_channels / groups, kernel[0], kernel[1]};
}

std::int64_t ConvParams::out_size(std::int64_t in, int axis) const {
  const std::int64_t span = dilation[axis] * (kernel[axis] - 1) + 1;
  const std::int64_t num = in + 2 * padding[axis] - span;
  if (num < 0) return 0;
  return num / stride[axis] + 1;
}

void ConvParams::validate() const {
  if (groups < 1 || in_channels < 1 || out_channels < 1) {
    throw ShapeError("conv2d: channel counts and groups must be positive");
  }
  if (in_channels % groups != 0) {
    throw ShapeError("conv2d: in_channels " + std::to_string(in_channels) +
                     " not divisible by groups " + std::to_string(groups));
  }
  if (out_channels % groups != 0) {
    throw ShapeError("conv2d: out_channels " + std::to_string(out_channels) +
                     " not divisible by groups " + std::to_string(groups));
  }
  for (int a = 0; a < 2; ++a) {
    if (kernel[a] < 1 || stride[a] < 1 || dilation[a] < 1 || padding[a] < 0) {
      throw ShapeError("conv2d: invalid kernel/stride/dilation/padding");
    }
  }
}

Shape ConvTransposeParams::weight_shape() const {
  return {in_channels, out_channels, kernel[0], kernel[1]};
}

std::int64_t ConvTransposeParams::out_size(std::int64_t in, int axis) const {
  return stride[axis] * (in - 1) + kernel[axis] - 2 * padding[axis];
}

Tensor conv2d(const Tensor& x, const Tensor& weight,
              const std::optional<Tensor>& bias, const ConvParams& p) {
  p.validate();
  const Shape& xs = x.shape();
  if (xs.c != p.in_channels) {
    throw ShapeError("conv2d: input channels " + std::to_string(xs.c) +
                     " != in_channels " + std::to_string(p.in_channels));
  }
  const Shape ws = p.weight_shape();
  if (weight.shape() != ws) {
    throw ShapeError("conv2d: weight shape " + weight.shape().str() +
                     " expected " + ws.str());
  }
  check_same_dtype(x, weight, "conv2d");
  if (p.has_bias != bias.has_value()) {
    throw ShapeError("conv2d: has_bias does not match the bias argument");
  }
  check_bias(bias, p.out_channels, x, "conv2d");

  const Window g{xs.h, xs.w, p.out_size(xs.h, 0), p.out_size(xs.w, 1),
                 p.kernel[0], p.kernel[1], p.stride[0], p.stride[1],
                 p.padding[0], p.padding[1], p.dilation[0], p.dilation[1]};
  if (g.oh < 1 || g.ow < 1) {
    throw ShapeError("conv2d: output spatial size (" + std::to_string(g.oh) +
                     ", " + std::to_string(g.ow) + ") for input " + xs.str());
  }

  const Shape os{xs.n, p.out_channels, g.oh, g.ow};
  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  const bool depthwise = p.groups == p.in_channels && p.groups == p.out_channels;
  const std::int64_t cin_g = p.in_channels / p.groups;
  const std::int64_t cout_g = p.out_channels / p.groups;
  const std::int64_t krows = g.rows(cin_g);

  Tensor out = make_result(
      os, x.dtype(), "conv2d", inputs,
      [x, weight, bias, g, p, depthwise, cin_g, cout_g, krows](const TensorImpl& o) {
        dispatch(o.dtype, [&]<class T>() {
          auto gout = grad_values<T>(o);
          auto xd = values<T>(x.impl());
          auto wd = values<T>(weight.impl());
          T* gx = x.requires_grad() ? grad_buffer<T>(x.impl()).data() : nullptr;
          T* gw = weight.requires_grad() ? grad_buffer<T>(weight.impl()).data()
                                         : nullptr;
          const std::int64_t in_img = p.in_channels * g.h * g.w;
          const std::int64_t out_img = p.out_channels * g.oh * g.ow;
          const std::int64_t n_batch = x.shape().n;
          if (bias && bias->requires_grad()) {
            T* gb = grad_buffer<T>(bias->impl()).data();
            for (std::int64_t n = 0; n < n_batch; ++n) {
              bias_grad(gout.data() + n * out_img, gb, p.out_channels, g.cols());
            }
          }
          if (depthwise) {
            for (std::int64_t n = 0; n < n_batch; ++n) {
              depthwise_backward(xd.data() + n * in_img, wd.data(),
                                 gout.data() + n * out_img,
                                 gx ? gx + n * in_img : nullptr, gw,
                                 p.in_channels, g);
            }
            return;
          }
          std::vector<T> cols;
          if (!g.pointwise()) cols.resize(static_cast<std::size_t>(krows * g.cols()));
          for (std::int64_t n = 0; n < n_batch; ++n) {
            for (std::int64_t grp = 0; grp < p.groups; ++grp) {
              const T* xin = xd.data() + n * in_img + grp * cin_g * g.h * g.w;
              const T* go = gout.data() + n * out_img + grp * cout_g * g.cols();
              ConstMapMat<T> w_m(wd.data() + grp * cout_g * krows, cout_g, krows);
              ConstMapMat<T> go_m(go, cout_g, g.cols());
              if (gw) {
                const T* c_ptr = xin;
                if (!g.pointwise()) {
                  im2col(xin, cin_g, g, cols.data());
                  c_ptr = cols.data();
                }
                ConstMapMat<T> c_m(c_ptr, krows, g.cols());
                MapMat<T> gw_m(gw + grp * cout_g * krows, cout_g, krows);
                gw_m.noalias() += go_m * c_m.transpose();
              }
              if (gx) {
                T* gxin = gx + n * in_img + grp * cin_g * g.h * g.w;
                if (g.pointwise()) {
                  MapMat<T> gx_m(gxin, cin_g, g.cols());
                  gx_m.noalias() += w_m.transpose() * go_m;
                } else {
                  MapMat<T> c_m(cols.data(), krows, g.cols());
                  c_m.noalias() = w_m.transpose() * go_m;
                  col2im(cols.data(), cin_g, g, gxin);
                }
              }
            }
          }
        });
      });

  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto wd = weight.data<T>();
    auto od = values<T>(out.impl());
    const std::int64_t in_img = p.in_channels * g.h * g.w;
    const std::int64_t out_img = p.out_channels * g.oh * g.ow;
    if (depthwise) {
      for (std::int64_t n = 0; n < xs.n; ++n) {
        depthwise_forward(xd.data() + n * in_img, wd.data(),
                          od.data() + n * out_img, p.in_channels, g);
      }
    } else {
      std::vector<T> cols;
      if (!g.pointwise()) cols.resize(static_cast<std::size_t>(krows * g.cols()));
      for (std::int64_t n = 0; n < xs.n; ++n) {
        for (std::int64_t grp = 0; grp < p.groups; ++grp) {
          const T* xin = xd.data() + n * in_img + grp * cin_g * g.h * g.w;
          const T* c_ptr = xin;
          if (!g.pointwise()) {
            im2col(xin, cin_g, g, cols.data());
            c_ptr = cols.data();
          }
          ConstMapMat<T> w_m(wd.data() + grp * cout_g * krows, cout_g, krows);
          ConstMapMat<T> c_m(c_ptr, krows, g.cols());
          MapMat<T> o_m(od.data() + n * out_img + grp * cout_g * g.cols(), cout_g,
                        g.cols());
          o_m.noalias() = w_m * c_m;
        }
      }
    }
    if (bias) {
      auto bd = bias->data<T>();
      for (std::int64_t n = 0; n < xs.n; ++n) {
        add_bias(od.data() + n * out_img, bd.data(), p.out_channels, g.cols());
      }
    }
  });
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const Tensor& weight,
                        const std::optional<Tensor>& bias,
                        const ConvTransposeParams& p) {
  const Shape& xs = x.shape();
  if (xs.c != p.in_channels) {
    throw ShapeError("conv_transpose2d: input channels " + std::to_string(xs.c) +
                     " != in_channels " + std::to_string(p.in_channels));
  }
  if (weight.shape() != p.weight_shape()) {
    throw ShapeError("conv_transpose2d: weight shape " + weight.shape().str() +
                     " expected " + p.weight_shape().str());
  }
  check_same_dtype(x, weight, "conv_transpose2d");
  if (p.has_bias != bias.has_value()) {
    throw ShapeError("conv_transpose2d: has_bias does not match the bias argument");
  }
  check_bias(bias, p.out_channels, x, "conv_transpose2d");
  const std::int64_t oh = p.out_size(xs.h, 0);
  const std::int64_t ow = p.out_size(xs.w, 1);
  if (oh < 1 || ow < 1) {
    throw ShapeError("conv_transpose2d: non-positive output size (" +
                     std::to_string(oh) + ", " + std::to_string(ow) + ")");
  }
  // The equivalent forward convolution maps the (oh, ow) output back to (h, w).
  const Window g{oh, ow, xs.h, xs.w, p.kernel[0], p.kernel[1], p.stride[0],
                 p.stride[1], p.padding[0], p.padding[1], 1, 1};
  const std::int64_t krows = g.rows(p.out_channels);
  const Shape os{xs.n, p.out_channels, oh, ow};
  std::vector<Tensor> inputs{x, weight};
  if (bias) inputs.push_back(*bias);

  Tensor out = make_result(
      os, x.dtype(), "conv_transpose2d", inputs,
      [x, weight, bias, g, p, krows](const TensorImpl& o) {
        dispatch(o.dtype, [&]<class T>() {
          auto gout = grad_values<T>(o);
          auto xd = values<T>(x.impl());
          auto wd = values<T>(weight.impl());
          const std::int64_t in_img = p.in_channels * g.cols();
          const std::int64_t out_img = p.out_channels * g.h * g.w;
          std::vector<T> cols(static_cast<std::size_t>(krows * g.cols()));
          ConstMapMat<T> w_m(wd.data(), p.in_channels, krows);
          for (std::int64_t n = 0; n < x.shape().n; ++n) {
            const T* go = gout.data() + n * out_img;
            if (bias && bias->requires_grad()) {
              bias_grad(go, grad_buffer<T>(bias->impl()).data(), p.out_channels,
                        g.h * g.w);
            }
            im2col(go, p.out_channels, g, cols.data());
            ConstMapMat<T> c_m(cols.data(), krows, g.cols());
            if (x.requires_grad()) {
              MapMat<T> gx_m(grad_buffer<T>(x.impl()).data() + n * in_img,
                             p.in_channels, g.cols());
              gx_m.noalias() += w_m * c_m;
            }
            if (weight.requires_grad()) {
              ConstMapMat<T> x_m(xd.data() + n * in_img, p.in_channels, g.cols());
              MapMat<T> gw_m(grad_buffer<T>(weight.impl()).data(), p.in_channels,
                             krows);
              gw_m.noalias() += x_m * c_m.transpose();
            }
          }
        });
      });

  dispatch(x.dtype(), [&]<class T>() {
    auto xd = x.data<T>();
    auto wd = weight.data<T>();
    auto od = values<T>(out.impl());
    const std::int64_t in_img = p.in_channels * g.cols();
    const std::int64_t out_img = p.out_channels * g.h * g.w;
    std::vector<T> cols(static_cast<std::size_t>(krows * g.cols()));
    ConstMapMat<T> w_m(wd.data(), p.in_channels, krows);
    for (std::int64_t n = 0; n < xs.n; ++n) {
      ConstMapMat<T> x_m(xd.data() + n * in_img, p.in_channels, g.cols());
      MapMat<T> c_m(cols.data(), krows, g.cols());
      c_m.noalias() = w_m.transpose() * x_m;
      col2im(cols.data(), p.out_channels, g, od.data() + n * out_img);
      if (bias) {
        add_bias(od.data() + n * out_img, bias->data<T>().data(), p.out_channels,
                 g.h * g.w);
      }
    }
  });
  return out;
}

}  // namespace tlnp
