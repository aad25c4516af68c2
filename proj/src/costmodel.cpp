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

#include "tlnp/costmodel.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

#include "tlnp/checkpoint.hpp"

namespace tlnp {
namespace {

struct Cost {
  std::int64_t params = 0, macs = 0, elementwise = 0;
  Cost& operator+=(const Cost& o) {
    params += o.params;
    macs += o.macs;
    elementwise += o.elementwise;
    return *this;
  }
};

// k x k convolution producing co x h x w.
Cost conv(std::int64_t ci, std::int64_t co, std::int64_t k, std::int64_t h, std::int64_t w,
          std::int64_t groups = 1, bool bias = false) {
  const std::int64_t per_position = co * (ci / groups) * k * k;
  return {per_position + (bias ? co : 0), per_position * h * w, bias ? co * h * w : 0};
}

// Transposed convolution with kernel 2, counted at its output resolution.
Cost tconv(std::int64_t ci, std::int64_t co, std::int64_t out_h, std::int64_t out_w) {
  return {ci * co * 4, ci * co * 4 * out_h * out_w, 0};
}

Cost bn_act(std::int64_t c, std::int64_t h, std::int64_t w) { return {3 * c, 0, 4 * c * h * w}; }

Cost elementwise(std::int64_t count) { return {0, 0, count}; }

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

class Builder {
 public:
  void add(std::string name, std::string kind, const Cost& c, Shape out) {
    layers.push_back({std::move(name), std::move(kind), c.params, c.macs, c.elementwise, out});
  }
  std::vector<LayerCost> layers;
};

std::string esp_kind(const EspSpec& s) {
  return std::string(variant_name(s.variant)) + "(" + std::to_string(s.in_channels) + "->" +
         std::to_string(s.out_channels) + ")";
}

}  // namespace

CostConvention CostConvention::parse(std::string_view text) {
  if (text == "mac") return {1, true};
  if (text == "2mac") return {2, true};
  throw std::invalid_argument("unknown FLOP convention '" + std::string(text) +
                              "' (expected mac or 2mac)");
}

std::string CostConvention::describe() const {
  return std::to_string(flops_per_mac) + " FLOP per MAC" +
         (include_elementwise ? " + elementwise ops" : ", elementwise ops excluded");
}

double LayerCost::flops(const CostConvention& c) const {
  return static_cast<double>(c.flops_per_mac) * static_cast<double>(macs) +
         (c.include_elementwise ? static_cast<double>(elementwise) : 0.0);
}

std::int64_t CostReport::total_params() const {
  std::int64_t t = 0;
  for (const auto& l : layers) t += l.params;
  return t;
}

std::int64_t CostReport::total_macs() const {
  std::int64_t t = 0;
  for (const auto& l : layers) t += l.macs;
  return t;
}

std::int64_t CostReport::total_elementwise() const {
  std::int64_t t = 0;
  for (const auto& l : layers) t += l.elementwise;
  return t;
}

double CostReport::total_flops() const {
  double t = 0;
  for (const auto& l : layers) t += l.flops(convention);
  return t;
}

LayerCost esp_block_cost(const EspSpec& spec, std::int64_t in_h, std::int64_t in_w) {
  spec.validate();
  const bool strided = spec.variant == EspVariant::kStrideEsp;
  const std::int64_t h = strided ? in_h / 2 : in_h, w = strided ? in_w / 2 : in_w;
  const std::int64_t d = spec.d();
  Cost c = strided ? conv(spec.in_channels, d, 3, h, w) : conv(spec.in_channels, d, 1, h, w);
  for (std::int64_t k = 0; k < spec.branches; ++k) {
    if (spec.variant == EspVariant::kDesp) {
      c += conv(d, d, 3, h, w, d);
      c += conv(d, spec.branch_width(k), 1, h, w, 1, true);
    } else {
      c += conv(d, spec.branch_width(k), 3, h, w);
    }
  }
  if (spec.branches > 2) c += elementwise((spec.branches - 2) * d * h * w);
  c += bn_act(spec.out_channels, h, w);
  return {esp_kind(spec), esp_kind(spec), c.params, c.macs, c.elementwise,
          {1, spec.out_channels, h, w}};
}

CostReport count_flops(const ModelConfig& cfg, std::int64_t H, std::int64_t W,
                       const CostConvention& convention) {
  cfg.validate();
  check_input({1, 3, H, W});
  Builder b;
  auto conv_bn = [&](const std::string& name, std::int64_t ci, std::int64_t co, std::int64_t k,
                     std::int64_t h, std::int64_t w) {
    Cost c = conv(ci, co, k, h, w);
    c += bn_act(co, h, w);
    b.add(name, "Conv" + std::to_string(k) + "x" + std::to_string(k) + "(" +
                    std::to_string(ci) + "->" + std::to_string(co) + ")",
          c, {1, co, h, w});
  };
  auto block = [&](const std::string& name, std::int64_t in, std::int64_t out, EspVariant v,
                   std::int64_t in_h, std::int64_t in_w) {
    EspSpec s;
    s.in_channels = in;
    s.out_channels = out;
    s.variant = v;
    LayerCost l = esp_block_cost(s, in_h, in_w);
    l.name = name;
    b.layers.push_back(l);
    if (v == EspVariant::kDesp) {
      b.add(name + ".residual", "Add", elementwise(out * in_h * in_w), l.out);
    }
  };

  b.add("input.pool1", "AvgPool2", elementwise(4 * 3 * (H / 2) * (W / 2)), {1, 3, H / 2, W / 2});
  b.add("input.pool2", "AvgPool2", elementwise(4 * 3 * (H / 4) * (W / 4)), {1, 3, H / 4, W / 4});
  conv_bn("stem.conv0a", 3, cfg.stem_a, 3, H / 2, W / 2);
  conv_bn("stem.conv0b", cfg.stem_a, cfg.stem_b, 3, H / 2, W / 2);

  block("stage1.down", cfg.stem_b + 3, cfg.stage1_out, EspVariant::kStrideEsp, H / 2, W / 2);
  for (std::int64_t i = 0; i < cfg.p; ++i) {
    block("stage1.desp" + std::to_string(i), cfg.stage1_out, cfg.stage1_out, EspVariant::kDesp,
          H / 4, W / 4);
  }
  conv_bn("stage1.merge", 2 * cfg.stage1_out + 3, cfg.merge_out, 3, H / 4, W / 4);

  block("stage2.down", cfg.merge_out, cfg.stage2_out, EspVariant::kStrideEsp, H / 4, W / 4);
  for (std::int64_t i = 0; i < cfg.q; ++i) {
    block("stage2.desp" + std::to_string(i), cfg.stage2_out, cfg.stage2_out, EspVariant::kDesp,
          H / 8, W / 8);
  }
  conv_bn("stage2.pre", 2 * cfg.stage2_out, cfg.pre_pcaa, 3, H / 8, W / 8);

  {
    const std::int64_t c = cfg.pre_pcaa, k = cfg.pcaa.local_classes;
    const std::int64_t hw = (H / 8) * (W / 8);
    Cost p = conv(c, k, 1, H / 8, W / 8);  // class scores
    p += elementwise(3 * k * hw);           // patch softmax
    p += Cost{0, k * c * hw, 0};            // class centers
    p += Cost{0, k * c * hw, k * hw};       // similarity and its scale
    p += elementwise(3 * k * hw);           // softmax over classes
    p += Cost{0, k * c * hw, 0};            // aggregation
    p += conv(c, c, 1, H / 8, W / 8);       // refinement
    p += elementwise(c * hw);               // residual
    b.add("pcaa", "PCAA(" + std::to_string(c) + ",K=" + std::to_string(k) + ")", p,
          {1, c, H / 8, W / 8});
  }
  conv_bn("post", cfg.pre_pcaa, cfg.post_pcaa, 1, H / 8, W / 8);

  for (const auto& head : cfg.heads) {
    const std::string prefix = "head." + head.task;
    auto ucb = [&](const std::string& name, std::int64_t in, std::int64_t out, std::int64_t h,
                   std::int64_t w) {
      Cost c = tconv(in, out, h, w);
      c += bn_act(out, h, w);
      c += conv(out + 3, out, 3, h, w);
      c += bn_act(out, h, w);
      c += conv(out, out, 3, h, w);
      c += bn_act(out, h, w);
      b.add(name, "UCB(" + std::to_string(in) + "->" + std::to_string(out) + ")", c,
            {1, out, h, w});
    };
    ucb(prefix + ".ucb1", cfg.post_pcaa, cfg.ucb1_out, H / 4, W / 4);
    ucb(prefix + ".ucb2", cfg.ucb1_out, cfg.ucb2_out, H / 2, W / 2);
    Cost u = tconv(cfg.ucb2_out, head.classes, H, W);
    u += bn_act(head.classes, H, W);
    u += conv(head.classes, head.classes, 3, H, W);
    b.add(prefix + ".usb",
          "USB(" + std::to_string(cfg.ucb2_out) + "->" + std::to_string(head.classes) + ")", u,
          {1, head.classes, H, W});
  }

  CostReport r;
  r.config = cfg.display_name();
  r.height = H;
  r.width = W;
  r.convention = convention;
  r.layers = std::move(b.layers);
  return r;
}

CostReport count_params(const ModelConfig& config) { return count_flops(config); }

const std::vector<PublishedBudget>& published_budgets() {
  static const std::vector<PublishedBudget> table{
      {"Nano", 0.03, 0.57, 0.06},
      {"Small", 0.12, 1.40, 0.23},
      {"Medium", 0.48, 4.63, 0.92},
      {"Large", 1.94, 17.58, 3.72},
  };
  return table;
}

std::optional<PublishedBudget> published_budget(std::string_view config) {
  const std::string want = lower(config);
  for (const auto& b : published_budgets())
    if (lower(b.config) == want) return b;
  return std::nullopt;
}

CheckpointSize checkpoint_size(const ModelConfig& config, std::size_t bytes_per_element) {
  Model m = Model::build(config, 0);
  CheckpointSize s;
  for (const auto& e : m.state()) {
    s.payload += static_cast<std::uint64_t>(e.tensor->numel()) * bytes_per_element;
  }
  s.overhead = encoded_size(m, DType::kF32) - s.payload / bytes_per_element * 4;
  return s;
}

double percent_deviation(double computed, double reference) {
  return 100.0 * (computed - reference) / reference;
}

std::string render_text(const CostReport& r) {
  std::ostringstream os;
  char line[256];
  os << r.config << " at " << r.height << "x" << r.width << ", " << r.convention.describe()
     << "\n";
  std::snprintf(line, sizeof line, "%-24s %-22s %12s %16s %14s %16s\n", "layer", "kind",
                "params", "MACs", "elementwise", "FLOPs");
  os << line;
  for (const auto& l : r.layers) {
    std::snprintf(line, sizeof line, "%-24s %-22s %12lld %16lld %14lld %16.0f\n", l.name.c_str(),
                  l.kind.c_str(), static_cast<long long>(l.params),
                  static_cast<long long>(l.macs), static_cast<long long>(l.elementwise),
                  l.flops(r.convention));
    os << line;
  }
  std::snprintf(line, sizeof line, "%-24s %-22s %12lld %16lld %14lld %16.0f\n", "total", "",
                static_cast<long long>(r.total_params()), static_cast<long long>(r.total_macs()),
                static_cast<long long>(r.total_elementwise()), r.total_flops());
  os << line;

  const std::string base = r.config.substr(0, r.config.find(' '));
  const auto ref = published_budget(base);
  const double params_m = static_cast<double>(r.total_params()) / 1e6;
  const double flops_g = r.total_flops() / 1e9;
  if (ref) {
    std::snprintf(line, sizeof line,
                  "\n%-10s %12s %12s %10s\n%-10s %11.4fM %11.2fM %+9.1f%%\n",
                  "", "computed", "published", "deviation", "params", params_m, ref->params_m,
                  percent_deviation(params_m, ref->params_m));
    os << line;
    if (r.height == 384 && r.width == 640) {
      std::snprintf(line, sizeof line, "%-10s %11.3fG %11.2fG %+9.1f%%\n", "FLOPs", flops_g,
                    ref->flops_g, percent_deviation(flops_g, ref->flops_g));
    } else {
      std::snprintf(line, sizeof line, "%-10s %11.3fG %12s\n", "FLOPs", flops_g,
                    "(384x640 only)");
    }
    os << line;
  } else {
    std::snprintf(line, sizeof line, "\nparams %.4fM, FLOPs %.3fG\n", params_m, flops_g);
    os << line;
  }
  return os.str();
}

std::string render_csv(const CostReport& r) {
  std::ostringstream os;
  os << "layer,params,macs,elementwise,flops\n";
  char line[64];
  for (const auto& l : r.layers) {
    std::snprintf(line, sizeof line, "%.0f", l.flops(r.convention));
    os << l.name << "," << l.params << "," << l.macs << "," << l.elementwise << "," << line
       << "\n";
  }
  std::snprintf(line, sizeof line, "%.0f", r.total_flops());
  os << "total," << r.total_params() << "," << r.total_macs() << "," << r.total_elementwise()
     << "," << line << "\n";
  return os.str();
}

}  // namespace tlnp
