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

#include "tlnp/model.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

namespace tlnp {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

ModelConfig make(std::string name, std::int64_t a, std::int64_t b, std::int64_t s1,
                 std::int64_t p, std::int64_t m1, std::int64_t s2, std::int64_t q,
                 std::int64_t pre, std::int64_t post, std::int64_t u1, std::int64_t u2) {
  ModelConfig c;
  c.name = std::move(name);
  c.stem_a = a;
  c.stem_b = b;
  c.stage1_out = s1;
  c.p = p;
  c.merge_out = m1;
  c.stage2_out = s2;
  c.q = q;
  c.pre_pcaa = pre;
  c.post_pcaa = post;
  c.ucb1_out = u1;
  c.ucb2_out = u2;
  return c;
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

EspSpec esp_spec(std::int64_t in, std::int64_t out, EspVariant v) {
  EspSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.variant = v;
  return s;
}

}  // namespace

const std::vector<std::string>& ModelConfig::preset_names() {
  static const std::vector<std::string> names{"nano", "small", "medium", "large"};
  return names;
}

ModelConfig ModelConfig::preset(std::string_view name, TaskVariant variant) {
  const std::string key = lower(name);
  ModelConfig c;
  if (key == "nano") {
    c = make("Nano", 4, 8, 16, 1, 32, 32, 1, 16, 8, 4, 4);
  } else if (key == "small") {
    c = make("Small", 8, 16, 32, 2, 64, 64, 3, 32, 16, 8, 8);
  } else if (key == "medium") {
    c = make("Medium", 16, 32, 64, 3, 128, 128, 5, 64, 32, 16, 8);
  } else if (key == "large") {
    c = make("Large", 32, 64, 128, 5, 256, 256, 7, 128, 64, 32, 8);
  } else {
    throw std::invalid_argument("unknown model config '" + std::string(name) +
                                "' (expected nano, small, medium or large)");
  }
  if (variant == TaskVariant::kDrivableAlternative) c.heads[0].classes = 3;
  return c;
}

TaskVariant parse_variant(std::string_view text) {
  const std::string key = lower(text);
  if (key == "standard") return TaskVariant::kStandard;
  if (key == "d_and_a" || key == "d&a") return TaskVariant::kDrivableAlternative;
  throw std::invalid_argument("unknown task variant '" + std::string(text) +
                              "' (expected standard or d_and_a)");
}

void ModelConfig::validate() const {
  auto positive = [&](std::int64_t v, const char* field) {
    if (v < 1) throw std::invalid_argument(name + ": " + field + " must be positive");
  };
  positive(stem_a, "stem_a");
  positive(stem_b, "stem_b");
  positive(stage1_out, "stage1_out");
  positive(merge_out, "merge_out");
  positive(stage2_out, "stage2_out");
  positive(pre_pcaa, "pre_pcaa");
  positive(post_pcaa, "post_pcaa");
  positive(ucb1_out, "ucb1_out");
  positive(ucb2_out, "ucb2_out");
  if (p < 0 || q < 0) throw std::invalid_argument(name + ": P and Q must be >= 0");
  if (heads.size() != 2 || heads[0].task != "drivable" || heads[1].task != "lane") {
    throw std::invalid_argument(name + ": heads must be exactly (drivable, lane)");
  }
  for (const auto& h : heads) positive(h.classes, "head class count");
}

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "stem=" << stem_a << "," << stem_b << ";stage1=" << stage1_out << "," << p
     << "," << merge_out << ";stage2=" << stage2_out << "," << q << "," << pre_pcaa
     << "," << post_pcaa << ";decoder=" << ucb1_out << "," << ucb2_out << ";heads=";
  for (std::size_t i = 0; i < heads.size(); ++i) {
    os << (i ? "," : "") << heads[i].task << ":" << heads[i].classes;
  }
  os << ";pcaa=" << pcaa.patch_h << "x" << pcaa.patch_w << "x" << pcaa.local_classes;
  return os.str();
}

std::uint64_t ModelConfig::fingerprint() const { return fnv1a64(canonical()); }

std::string ModelConfig::display_name() const {
  const bool dna = !heads.empty() && heads[0].classes == 3;
  return name + (dna ? " (D&A)" : "");
}

std::optional<ModelConfig> config_for_fingerprint(std::uint64_t fp) {
  for (const auto& n : ModelConfig::preset_names()) {
    for (auto v : {TaskVariant::kStandard, TaskVariant::kDrivableAlternative}) {
      ModelConfig c = ModelConfig::preset(n, v);
      if (c.fingerprint() == fp) return c;
    }
  }
  return std::nullopt;
}

void check_input(const Shape& s) {
  if (s.c != 3) {
    throw ShapeError("model input has " + std::to_string(s.c) + " channels, expected 3");
  }
  if (s.h % 16 != 0 || s.w % 16 != 0) {
    throw ShapeError("model input size " + std::to_string(s.h) + "x" +
                     std::to_string(s.w) + " is not divisible by 16");
  }
}

Model Model::build(const ModelConfig& cfg, std::uint64_t seed, DType dtype) {
  cfg.validate();
  Model m;
  m.config_ = cfg;
  m.dtype_ = dtype;
  m.stem0 = ConvBnAct("stem.conv0a", ConvParams::same(3, cfg.stem_a, 3, 2), dtype);
  m.stem1 = ConvBnAct("stem.conv0b", ConvParams::same(cfg.stem_a, cfg.stem_b, 3), dtype);
  m.stage1_down = EspBlock("stage1.down",
                           esp_spec(cfg.stem_b + 3, cfg.stage1_out, EspVariant::kStrideEsp),
                           dtype);
  for (std::int64_t i = 0; i < cfg.p; ++i) {
    m.stage1_blocks.emplace_back("stage1.desp" + std::to_string(i),
                                 esp_spec(cfg.stage1_out, cfg.stage1_out, EspVariant::kDesp),
                                 dtype);
  }
  m.merge1 = ConvBnAct("stage1.merge",
                       ConvParams::same(2 * cfg.stage1_out + 3, cfg.merge_out, 3), dtype);
  m.stage2_down = EspBlock("stage2.down",
                           esp_spec(cfg.merge_out, cfg.stage2_out, EspVariant::kStrideEsp),
                           dtype);
  for (std::int64_t i = 0; i < cfg.q; ++i) {
    m.stage2_blocks.emplace_back("stage2.desp" + std::to_string(i),
                                 esp_spec(cfg.stage2_out, cfg.stage2_out, EspVariant::kDesp),
                                 dtype);
  }
  m.pre_pcaa = ConvBnAct("stage2.pre",
                         ConvParams::same(2 * cfg.stage2_out, cfg.pre_pcaa, 3), dtype);
  m.pcaa = Pcaa("pcaa", cfg.pre_pcaa, cfg.pcaa, dtype);
  m.post_pcaa = ConvBnAct("post", ConvParams::same(cfg.pre_pcaa, cfg.post_pcaa, 1), dtype);
  for (const auto& spec : cfg.heads) {
    const std::string prefix = "head." + spec.task;
    m.heads.push_back(Head{spec, Ucb(prefix + ".ucb1", cfg.post_pcaa, cfg.ucb1_out, dtype),
                           Ucb(prefix + ".ucb2", cfg.ucb1_out, cfg.ucb2_out, dtype),
                           Usb(prefix + ".usb", cfg.ucb2_out, spec.classes, dtype)});
  }

  Rng rng(seed);
  m.stem0.init(rng);
  m.stem1.init(rng);
  m.stage1_down.init(rng);
  for (auto& b : m.stage1_blocks) b.init(rng);
  m.merge1.init(rng);
  m.stage2_down.init(rng);
  for (auto& b : m.stage2_blocks) b.init(rng);
  m.pre_pcaa.init(rng);
  m.pcaa.init(rng);
  m.post_pcaa.init(rng);
  for (auto& h : m.heads) {
    h.ucb1.init(rng);
    h.ucb2.init(rng);
    h.usb.init(rng);
  }
  return m;
}

HeadOutputs Model::forward(const Tensor& image, const ForwardContext& ctx) const {
  check_input(image.shape());
  const Tensor i1 = avg_pool2(image);
  const Tensor i2 = avg_pool2(i1);

  Tensor x = stem1.forward(stem0.forward(image, ctx), ctx);
  ctx.emit("stem", x.shape());

  const Tensor f0 = stage1_down.forward(concat_channels({x, i1}), ctx);
  Tensor f = f0;
  for (const auto& b : stage1_blocks) f = add(f, b.forward(f, ctx));
  const Tensor m1 = merge1.forward(concat_channels({f0, f, i2}), ctx);
  ctx.emit("stage1", m1.shape());

  const Tensor g0 = stage2_down.forward(m1, ctx);
  Tensor g = g0;
  for (const auto& b : stage2_blocks) g = add(g, b.forward(g, ctx));
  Tensor e = pre_pcaa.forward(concat_channels({g0, g}), ctx);
  ctx.emit("stage2", e.shape());
  e = pcaa.forward(e, ctx);
  ctx.emit("pcaa", e.shape());
  e = post_pcaa.forward(e, ctx);
  ctx.emit("post", e.shape());

  std::vector<Tensor> outs;
  for (const auto& h : heads) {
    Tensor y = h.ucb1.forward(e, i2, ctx);
    ctx.emit(h.spec.task + ".ucb1", y.shape());
    y = h.ucb2.forward(y, i1, ctx);
    ctx.emit(h.spec.task + ".ucb2", y.shape());
    y = h.usb.forward(y, ctx);
    ctx.emit(h.spec.task + ".usb", y.shape());
    outs.push_back(std::move(y));
  }
  return {outs[0], outs[1]};
}

TensorList Model::state() {
  TensorList list;
  stem0.collect(list);
  stem1.collect(list);
  stage1_down.collect(list);
  for (auto& b : stage1_blocks) b.collect(list);
  merge1.collect(list);
  stage2_down.collect(list);
  for (auto& b : stage2_blocks) b.collect(list);
  pre_pcaa.collect(list);
  pcaa.collect(list);
  post_pcaa.collect(list);
  for (auto& h : heads) {
    h.ucb1.collect(list);
    h.ucb2.collect(list);
    h.usb.collect(list);
  }
  return list;
}

TensorList Model::parameters() {
  TensorList all = state();
  TensorList out;
  for (auto& e : all)
    if (e.trainable) out.push_back(e);
  return out;
}

std::int64_t Model::parameter_count() const {
  std::int64_t total = stem0.parameter_count() + stem1.parameter_count() +
                       stage1_down.parameter_count() + merge1.parameter_count() +
                       stage2_down.parameter_count() + pre_pcaa.parameter_count() +
                       pcaa.parameter_count() + post_pcaa.parameter_count();
  for (const auto& b : stage1_blocks) total += b.parameter_count();
  for (const auto& b : stage2_blocks) total += b.parameter_count();
  for (const auto& h : heads) {
    total += h.ucb1.parameter_count() + h.ucb2.parameter_count() + h.usb.parameter_count();
  }
  return total;
}

std::vector<ConvSite> Model::conv_sites() const {
  std::vector<ConvSite> sites;
  stem0.sites(sites);
  stem1.sites(sites);
  stage1_down.sites(sites);
  for (const auto& b : stage1_blocks) b.sites(sites);
  merge1.sites(sites);
  stage2_down.sites(sites);
  for (const auto& b : stage2_blocks) b.sites(sites);
  pre_pcaa.sites(sites);
  pcaa.sites(sites);
  post_pcaa.sites(sites);
  for (const auto& h : heads) {
    h.ucb1.sites(sites);
    h.ucb2.sites(sites);
    h.usb.sites(sites);
  }
  return sites;
}

std::vector<std::pair<std::string, std::int64_t>> Model::census() {
  // Layer prefix = tensor name without its final ".field" component.
  std::vector<std::pair<std::string, std::int64_t>> out;
  for (const auto& e : state()) {
    if (!e.trainable) continue;
    const std::string layer = e.name.substr(0, e.name.rfind('.'));
    if (out.empty() || out.back().first != layer) out.emplace_back(layer, 0);
    out.back().second += e.tensor->numel();
  }
  return out;
}

}  // namespace tlnp
