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

#include "tlnp/blocks.hpp"

#include <algorithm>
#include <cmath>

namespace tlnp {
namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

}  // namespace

const char* variant_name(EspVariant v) {
  switch (v) {
    case EspVariant::kEsp: return "ESP";
    case EspVariant::kDesp: return "DESP";
    case EspVariant::kStrideEsp: return "StrideESP";
  }
  return "?";
}

void EspSpec::validate() const {
  const std::string tag = std::string(variant_name(variant)) + "(" +
                          std::to_string(in_channels) + "->" +
                          std::to_string(out_channels) + ")";
  require(in_channels >= 1, tag + ": in_channels must be positive");
  require(branches >= 1, tag + ": branch count must be positive");
  require(static_cast<std::int64_t>(dilations.size()) == branches,
          tag + ": " + std::to_string(dilations.size()) + " dilation rates for " +
              std::to_string(branches) + " branches");
  require(d() >= 1, tag + ": out_channels " + std::to_string(out_channels) +
                        " leaves branch width 0 with " + std::to_string(branches) +
                        " branches");
  for (auto r : dilations) require(r >= 1, tag + ": dilation rates must be positive");
  if (variant != EspVariant::kStrideEsp) {
    require(in_channels == out_channels,
            tag + ": residual block needs in_channels == out_channels");
  }
}

std::vector<Tensor> hff(const std::vector<Tensor>& branches) {
  std::vector<Tensor> out;
  out.reserve(branches.size());
  for (std::size_t k = 0; k < branches.size(); ++k) {
    if (k <= 1) {
      out.push_back(branches[k]);
      continue;
    }
    require(branches[k].shape() == branches[1].shape(),
            "hff: branch " + std::to_string(k) + " has shape " +
                branches[k].shape().str() + ", expected " + branches[1].shape().str());
    out.push_back(add(out.back(), branches[k]));
  }
  return out;
}

EspBlock::EspBlock(const std::string& name, const EspSpec& spec, DType dtype)
    : spec_(spec) {
  spec_.validate();
  const std::int64_t d = spec_.d();
  if (spec_.variant == EspVariant::kStrideEsp) {
    reduce = Conv2d(name + ".reduce", ConvParams::same(spec_.in_channels, d, 3, 2), dtype);
  } else {
    reduce = Conv2d(name + ".reduce", ConvParams::same(spec_.in_channels, d, 1), dtype);
  }
  for (std::int64_t k = 0; k < spec_.branches; ++k) {
    const std::int64_t rate = spec_.dilations[static_cast<std::size_t>(k)];
    const std::string bname = name + ".branch" + std::to_string(k);
    if (spec_.variant == EspVariant::kDesp) {
      branch.emplace_back(bname, ConvParams::same(d, d, 3, 1, rate, d), dtype);
      pointwise.emplace_back(
          name + ".pointwise" + std::to_string(k),
          ConvParams::same(d, spec_.branch_width(k), 1, 1, 1, 1, /*bias=*/true), dtype);
    } else {
      branch.emplace_back(bname, ConvParams::same(d, spec_.branch_width(k), 3, 1, rate),
                          dtype);
    }
  }
  out = BnAct(name + ".out", spec_.out_channels, dtype);
}

Tensor EspBlock::forward(const Tensor& x, const ForwardContext& ctx) const {
  const Shape s = x.shape();
  require(s.c == spec_.in_channels,
          std::string(variant_name(spec_.variant)) + ": input channels " +
              std::to_string(s.c) + " != " + std::to_string(spec_.in_channels));
  if (spec_.variant == EspVariant::kStrideEsp) {
    require(s.h % 2 == 0 && s.w % 2 == 0,
            "StrideESP: odd input spatial size " + std::to_string(s.h) + "x" +
                std::to_string(s.w));
  }
  const Tensor reduced = reduce.forward(x, ctx);
  std::vector<Tensor> outs;
  outs.reserve(branch.size());
  for (std::size_t k = 0; k < branch.size(); ++k) {
    Tensor b = branch[k].forward(reduced, ctx);
    if (!pointwise.empty()) b = pointwise[k].forward(b, ctx);
    outs.push_back(std::move(b));
  }
  return out.forward(concat_channels(hff(outs)), ctx);
}

void EspBlock::init(Rng& rng) {
  reduce.init(rng);
  for (std::size_t k = 0; k < branch.size(); ++k) {
    branch[k].init(rng);
    if (!pointwise.empty()) pointwise[k].init(rng);
  }
}

void EspBlock::collect(TensorList& list) {
  reduce.collect(list);
  for (std::size_t k = 0; k < branch.size(); ++k) {
    branch[k].collect(list);
    if (!pointwise.empty()) pointwise[k].collect(list);
  }
  out.collect(list);
}

void EspBlock::sites(std::vector<ConvSite>& list) const {
  list.push_back({reduce.name(), &reduce, nullptr, nullptr});
  for (std::size_t k = 0; k < branch.size(); ++k) {
    list.push_back({branch[k].name(), &branch[k], nullptr, nullptr});
    if (!pointwise.empty()) list.push_back({pointwise[k].name(), &pointwise[k], nullptr, nullptr});
  }
}

std::int64_t EspBlock::parameter_count() const {
  std::int64_t total = reduce.parameter_count() + out.parameter_count();
  for (const auto& c : branch) total += c.parameter_count();
  for (const auto& c : pointwise) total += c.parameter_count();
  return total;
}

namespace {

Tensor checked_variant(const Tensor& x, const EspBlock& block, EspVariant want,
                       const ForwardContext& ctx) {
  require(block.spec().variant == want,
          std::string(variant_name(want)) + " forward called on a " +
              variant_name(block.spec().variant) + " block");
  return block.forward(x, ctx);
}

}  // namespace

Tensor esp_forward(const Tensor& x, const EspBlock& block, const ForwardContext& ctx) {
  return checked_variant(x, block, EspVariant::kEsp, ctx);
}

Tensor desp_forward(const Tensor& x, const EspBlock& block, const ForwardContext& ctx) {
  return checked_variant(x, block, EspVariant::kDesp, ctx);
}

Tensor stride_esp_forward(const Tensor& x, const EspBlock& block,
                          const ForwardContext& ctx) {
  return checked_variant(x, block, EspVariant::kStrideEsp, ctx);
}

Ucb::Ucb(const std::string& name, std::int64_t in, std::int64_t out, DType dtype)
    : up(name + ".up", ConvTransposeParams{in, out}, dtype),
      conv1(name + ".conv1", ConvParams::same(out + 3, out, 3), dtype),
      conv2(name + ".conv2", ConvParams::same(out, out, 3), dtype) {}

Tensor Ucb::forward(const Tensor& x, const Tensor& skip_image,
                    const ForwardContext& ctx) const {
  const Shape xs = x.shape(), ss = skip_image.shape();
  require(ss.c == 3, "UCB: skip image has " + std::to_string(ss.c) + " channels, expected 3");
  require(ss.n == xs.n && ss.h == 2 * xs.h && ss.w == 2 * xs.w,
          "UCB: skip image " + ss.str() + " is not twice the spatial size of input " +
              xs.str());
  Tensor y = up.forward(x, ctx);
  y = conv1.forward(concat_channels({y, skip_image}), ctx);
  return conv2.forward(y, ctx);
}

void Ucb::init(Rng& rng) {
  up.init(rng);
  conv1.init(rng);
  conv2.init(rng);
}

void Ucb::collect(TensorList& list) {
  up.collect(list);
  conv1.collect(list);
  conv2.collect(list);
}

void Ucb::sites(std::vector<ConvSite>& list) const {
  up.sites(list);
  conv1.sites(list);
  conv2.sites(list);
}

std::int64_t Ucb::parameter_count() const {
  return up.parameter_count() + conv1.parameter_count() + conv2.parameter_count();
}

Usb::Usb(const std::string& name, std::int64_t in, std::int64_t classes, DType dtype)
    : up(name + ".up", ConvTransposeParams{in, classes}, dtype),
      logits(name + ".logits", ConvParams::same(classes, classes, 3), dtype) {}

Tensor Usb::forward(const Tensor& x, const ForwardContext& ctx) const {
  return logits.forward(up.forward(x, ctx), ctx);
}

void Usb::init(Rng& rng) {
  up.init(rng);
  logits.init(rng);
}

void Usb::collect(TensorList& list) {
  up.collect(list);
  logits.collect(list);
}

void Usb::sites(std::vector<ConvSite>& list) const {
  up.sites(list);
  list.push_back({logits.name(), &logits, nullptr, nullptr});
}

std::int64_t Usb::parameter_count() const {
  return up.parameter_count() + logits.parameter_count();
}

Pcaa::Pcaa(const std::string& name, std::int64_t channels, const PcaaConfig& cfg,
           DType dtype)
    : scores(name + ".scores", ConvParams::same(channels, cfg.local_classes, 1), dtype),
      refine(name + ".refine", ConvParams::same(channels, channels, 1), dtype),
      cfg_(cfg) {
  require(cfg.patch_h >= 1 && cfg.patch_w >= 1, "PCAA: patch size must be positive");
  require(cfg.local_classes >= 1, "PCAA: local class count must be positive");
}

std::pair<std::int64_t, std::int64_t> Pcaa::patch_for(std::int64_t h, std::int64_t w) const {
  return {std::min(cfg_.patch_h, h), std::min(cfg_.patch_w, w)};
}

Tensor Pcaa::forward(const Tensor& x, const ForwardContext& ctx) const {
  const Shape s = x.shape();
  const auto [ph, pw] = patch_for(s.h, s.w);
  require(s.h % ph == 0 && s.w % pw == 0,
          "PCAA: patch " + std::to_string(ph) + "x" + std::to_string(pw) +
              " does not divide feature size " + std::to_string(s.h) + "x" +
              std::to_string(s.w));
  const Tensor attn = patch_softmax(scores.forward(x, ctx), ph, pw);
  const Tensor centers = patch_centers(attn, x, ph, pw);
  const double factor = 1.0 / std::sqrt(static_cast<double>(s.c));
  const Tensor sim = softmax_channel(patch_similarity(x, centers, ph, pw, factor));
  const Tensor refined = refine.forward(patch_aggregate(sim, centers, ph, pw), ctx);
  return add(x, refined);
}

void Pcaa::init(Rng& rng) {
  scores.init(rng);
  refine.init(rng);
}

void Pcaa::collect(TensorList& list) {
  scores.collect(list);
  refine.collect(list);
}

void Pcaa::sites(std::vector<ConvSite>& list) const {
  list.push_back({scores.name(), &scores, nullptr, nullptr});
  list.push_back({refine.name(), &refine, nullptr, nullptr});
}

std::int64_t Pcaa::parameter_count() const {
  return scores.parameter_count() + refine.parameter_count();
}

}  // namespace tlnp
