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

#include "tlnp/layers.hpp"

#include <cmath>

namespace tlnp {
namespace {

Shape channel_shape(std::int64_t c) { return {1, c, 1, 1}; }

// Kaiming normal with fan-out = output channels x kernel area.
void kaiming_fan_out(Tensor& w, std::int64_t out_channels, std::int64_t kh,
                     std::int64_t kw, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(out_channels * kh * kw));
  for (std::int64_t i = 0; i < w.numel(); ++i) w.set(i, stddev * rng.normal());
}

void zero_fill(Tensor& t) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, 0.0);
}

std::int64_t optional_numel(const std::optional<Tensor>& t) {
  return t ? t->numel() : 0;
}

// Convolution whose weight/bias may be swapped for a hook override.
Tensor hooked_conv(const Conv2d& conv, const BatchNorm2d* bn, const Tensor& x,
                   const ForwardContext& ctx) {
  if (!ctx.hook) {
    Tensor y = conv.apply(x);
    return bn ? bn->forward(y, ctx.training) : y;
  }
  Tensor in = ctx.hook->on_input(conv.name(), x);
  Tensor y;
  if (const ConvOverride* ov = ctx.hook->override_for(conv.name())) {
    ConvParams p = conv.params();
    p.has_bias = ov->bias.has_value();
    y = conv2d(in, ov->weight, ov->bias, p);
  } else {
    y = conv.apply(in);
    if (bn) y = bn->forward(y, ctx.training);
  }
  ctx.hook->on_output(conv.name(), y);
  return y;
}

}  // namespace

Conv2d::Conv2d(std::string name, const ConvParams& p, DType dtype)
    : name_(std::move(name)), params_(p) {
  params_.validate();
  weight = Tensor::zeros(params_.weight_shape(), dtype);
  if (params_.has_bias) bias = Tensor::zeros(channel_shape(params_.out_channels), dtype);
}

Tensor Conv2d::apply(const Tensor& x) const { return conv2d(x, weight, bias, params_); }

Tensor Conv2d::forward(const Tensor& x, const ForwardContext& ctx) const {
  return hooked_conv(*this, nullptr, x, ctx);
}

void Conv2d::init(Rng& rng) {
  kaiming_fan_out(weight, params_.out_channels, params_.kernel[0], params_.kernel[1], rng);
  if (bias) zero_fill(*bias);
}

void Conv2d::collect(TensorList& out) {
  out.push_back({name_ + ".weight", &weight, true});
  if (bias) out.push_back({name_ + ".bias", &*bias, true});
}

std::int64_t Conv2d::parameter_count() const { return weight.numel() + optional_numel(bias); }

ConvTranspose2d::ConvTranspose2d(std::string name, const ConvTransposeParams& p,
                                 DType dtype)
    : name_(std::move(name)), params_(p) {
  weight = Tensor::zeros(params_.weight_shape(), dtype);
  if (params_.has_bias) bias = Tensor::zeros(channel_shape(params_.out_channels), dtype);
}

Tensor ConvTranspose2d::apply(const Tensor& x) const {
  return conv_transpose2d(x, weight, bias, params_);
}

void ConvTranspose2d::init(Rng& rng) {
  kaiming_fan_out(weight, params_.out_channels, params_.kernel[0], params_.kernel[1], rng);
  if (bias) zero_fill(*bias);
}

void ConvTranspose2d::collect(TensorList& out) {
  out.push_back({name_ + ".weight", &weight, true});
  if (bias) out.push_back({name_ + ".bias", &*bias, true});
}

std::int64_t ConvTranspose2d::parameter_count() const {
  return weight.numel() + optional_numel(bias);
}

BatchNorm2d::BatchNorm2d(std::string name, std::int64_t channels, DType dtype)
    : name_(std::move(name)) {
  gamma = Tensor::full(channel_shape(channels), 1.0, dtype);
  beta = Tensor::zeros(channel_shape(channels), dtype);
  running_mean = Tensor::zeros(channel_shape(channels), dtype);
  running_var = Tensor::full(channel_shape(channels), 1.0, dtype);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) const {
  Tensor rm = running_mean;  // handles share storage with the members
  Tensor rv = running_var;
  return batch_norm(x, gamma, beta, rm, rv, training, kMomentum, kEps);
}

void BatchNorm2d::collect(TensorList& out) {
  out.push_back({name_ + ".gamma", &gamma, true});
  out.push_back({name_ + ".beta", &beta, true});
  out.push_back({name_ + ".running_mean", &running_mean, false});
  out.push_back({name_ + ".running_var", &running_var, false});
}

std::int64_t BatchNorm2d::parameter_count() const { return gamma.numel() + beta.numel(); }

PRelu::PRelu(std::string name, std::int64_t channels, DType dtype)
    : name_(std::move(name)) {
  slope = Tensor::full(channel_shape(channels), kInitSlope, dtype);
}

Tensor PRelu::forward(const Tensor& x) const { return prelu(x, slope); }

void PRelu::collect(TensorList& out) { out.push_back({name_ + ".slope", &slope, true}); }

std::int64_t PRelu::parameter_count() const { return slope.numel(); }

BnAct::BnAct(const std::string& name, std::int64_t channels, DType dtype)
    : bn(name + ".bn", channels, dtype), act(name + ".act", channels, dtype) {}

Tensor BnAct::forward(const Tensor& x, const ForwardContext& ctx) const {
  return act.forward(bn.forward(x, ctx.training));
}

void BnAct::collect(TensorList& out) {
  bn.collect(out);
  act.collect(out);
}

std::int64_t BnAct::parameter_count() const {
  return bn.parameter_count() + act.parameter_count();
}

ConvBnAct::ConvBnAct(const std::string& name, const ConvParams& p, DType dtype)
    : conv(name + ".conv", p, dtype),
      bn(name + ".bn", p.out_channels, dtype),
      act(name + ".act", p.out_channels, dtype) {}

Tensor ConvBnAct::forward(const Tensor& x, const ForwardContext& ctx) const {
  return act.forward(hooked_conv(conv, &bn, x, ctx));
}

void ConvBnAct::init(Rng& rng) { conv.init(rng); }

void ConvBnAct::collect(TensorList& out) {
  conv.collect(out);
  bn.collect(out);
  act.collect(out);
}

void ConvBnAct::sites(std::vector<ConvSite>& out) const {
  out.push_back({conv.name(), &conv, nullptr, &bn});
}

std::int64_t ConvBnAct::parameter_count() const {
  return conv.parameter_count() + bn.parameter_count() + act.parameter_count();
}

ConvTransposeBnAct::ConvTransposeBnAct(const std::string& name,
                                       const ConvTransposeParams& p, DType dtype)
    : conv(name + ".conv", p, dtype),
      bn(name + ".bn", p.out_channels, dtype),
      act(name + ".act", p.out_channels, dtype) {}

Tensor ConvTransposeBnAct::forward(const Tensor& x, const ForwardContext& ctx) const {
  Tensor y;
  if (!ctx.hook) {
    y = bn.forward(conv.apply(x), ctx.training);
  } else {
    Tensor in = ctx.hook->on_input(conv.name(), x);
    if (const ConvOverride* ov = ctx.hook->override_for(conv.name())) {
      ConvTransposeParams p = conv.params();
      p.has_bias = ov->bias.has_value();
      y = conv_transpose2d(in, ov->weight, ov->bias, p);
    } else {
      y = bn.forward(conv.apply(in), ctx.training);
    }
    ctx.hook->on_output(conv.name(), y);
  }
  return act.forward(y);
}

void ConvTransposeBnAct::init(Rng& rng) { conv.init(rng); }

void ConvTransposeBnAct::collect(TensorList& out) {
  conv.collect(out);
  bn.collect(out);
  act.collect(out);
}

void ConvTransposeBnAct::sites(std::vector<ConvSite>& out) const {
  out.push_back({conv.name(), nullptr, &conv, &bn});
}

std::int64_t ConvTransposeBnAct::parameter_count() const {
  return conv.parameter_count() + bn.parameter_count() + act.parameter_count();
}

std::int64_t trainable_count(const TensorList& list) {
  std::int64_t total = 0;
  for (const auto& e : list)
    if (e.trainable) total += e.tensor->numel();
  return total;
}

}  // namespace tlnp
