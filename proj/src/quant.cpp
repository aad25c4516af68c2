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

#include "tlnp/quant.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace tlnp {
namespace {

// Scales are stored as f32 in the sidecar; rounding them up front keeps the
// in-memory scheme and the file identical.
double as_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Calls fn(slice_index, flat_index) for every element of `w`, where the slice
// index runs along `axis`.
template <class F>
void for_each_slice(const Shape& s, int axis, F&& fn) {
  const std::int64_t inner = s.plane();
  for (std::int64_t a = 0; a < s.n; ++a)
    for (std::int64_t b = 0; b < s.c; ++b)
      for (std::int64_t i = 0; i < inner; ++i) fn(axis == 0 ? a : b, (a * s.c + b) * inner + i);
}

std::int64_t slices(const Shape& s, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("weight axis must be 0 or 1");
  return axis == 0 ? s.n : s.c;
}

class Histogram {
 public:
  Histogram(double lo, double hi, std::int64_t bins)
      : lo_(lo), hi_(hi), counts_(static_cast<std::size_t>(bins), 0) {}

  void add(const Tensor& t) {
    const double width = (hi_ - lo_) / double(counts_.size());
    dispatch(t.dtype(), [&]<class T>() {
      for (T v : t.data<T>()) {
        auto b = width > 0 ? static_cast<std::int64_t>((double(v) - lo_) / width) : 0;
        b = std::clamp<std::int64_t>(b, 0, std::int64_t(counts_.size()) - 1);
        ++counts_[static_cast<std::size_t>(b)];
        ++total_;
      }
    });
  }

  // Smallest value v with at least `q` of the mass at or below v, linearly
  // interpolated inside its bin.
  double quantile(double q) const {
    const double width = (hi_ - lo_) / double(counts_.size());
    const double target = q * double(total_);
    double seen = 0;
    for (std::size_t b = 0; b < counts_.size(); ++b) {
      const double next = seen + double(counts_[b]);
      if (next >= target && counts_[b] > 0) {
        const double frac = std::clamp((target - seen) / double(counts_[b]), 0.0, 1.0);
        return lo_ + (double(b) + frac) * width;
      }
      seen = next;
    }
    return hi_;
  }

 private:
  double lo_, hi_;
  std::vector<std::int64_t> counts_;
  std::int64_t total_ = 0;
};

class Observer : public ConvHook {
 public:
  explicit Observer(Calibration& out) : out_(out) {}
  Tensor on_input(const std::string& site, const Tensor& x) override {
    if (histograms_) {
      histograms_->at(site + ".in").add(x);
    } else {
      out_.inputs[site].observe(x);
    }
    return x;
  }
  void on_output(const std::string& site, const Tensor& y) override {
    if (histograms_) {
      histograms_->at(site + ".out").add(y);
    } else {
      out_.outputs[site].observe(y);
    }
  }
  const ConvOverride* override_for(const std::string&) const override { return nullptr; }

  void use_histograms(std::map<std::string, Histogram>* h) { histograms_ = h; }

 private:
  Calibration& out_;
  std::map<std::string, Histogram>* histograms_ = nullptr;
};

void write_bytes(std::ofstream& f, const void* p, std::size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
void write_le(std::ofstream& f, T v) {
  static_assert(std::endian::native == std::endian::little);
  write_bytes(f, &v, sizeof v);
}

template <class T>
T read_le(std::ifstream& f, const std::filesystem::path& path) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw std::runtime_error(path.string() + ": truncated quantization sidecar");
  return v;
}

constexpr char kSidecarMagic[4] = {'T', 'L', 'N', 'Q'};
constexpr std::uint32_t kSidecarVersion = 1;

}  // namespace

std::int32_t quant_min(int bits) {
  if (bits < 2 || bits > 16) throw std::invalid_argument("bit width must be in [2, 16]");
  return -(1 << (bits - 1));
}

std::int32_t quant_max(int bits) { return -quant_min(bits) - 1; }

Tensor fake_quantize(const Tensor& t, double scale, std::int32_t zero_point, int bits) {
  if (!(scale > 0)) throw std::invalid_argument("quantization scale must be positive");
  const double lo = quant_min(bits), hi = quant_max(bits);
  Tensor out(t.shape(), t.dtype());
  dispatch(t.dtype(), [&]<class T>() {
    auto src = t.data<T>();
    auto dst = out.mutable_data<T>();
    for (std::size_t i = 0; i < src.size(); ++i) {
      const double q = std::clamp(std::round(double(src[i]) / scale) + zero_point, lo, hi);
      dst[i] = static_cast<T>((q - zero_point) * scale);
    }
  });
  return out;
}

void RangeStats::observe(const Tensor& t) {
  dispatch(t.dtype(), [&]<class T>() {
    for (T v : t.data<T>()) {
      const double d = v;
      if (count == 0) {
        min = max = d;
      } else {
        min = std::min(min, d);
        max = std::max(max, d);
      }
      ++count;
    }
  });
}

RangeStats& RangeStats::merge(const RangeStats& other) {
  if (other.count == 0) return *this;
  if (count == 0) return *this = other;
  min = std::min(min, other.min);
  max = std::max(max, other.max);
  count += other.count;
  return *this;
}

AffineQuant affine_params(double lo, double hi, int bits) {
  lo = std::min(lo, 0.0);
  hi = std::max(hi, 0.0);
  const double qmax = quant_max(bits);
  AffineQuant a;
  a.scale = hi > lo ? as_f32((hi - lo) / (2 * qmax)) : 1.0;
  const double zp = -qmax - std::round(lo / a.scale);
  a.zero_point = static_cast<std::int32_t>(std::clamp<double>(zp, quant_min(bits), qmax));
  return a;
}

std::vector<double> weight_scales(const Tensor& w, int axis, bool per_channel, int bits) {
  const Shape s = w.shape();
  std::vector<double> peak(static_cast<std::size_t>(per_channel ? slices(s, axis) : 1), 0.0);
  const std::vector<double> v = w.to_vector();
  for_each_slice(s, axis, [&](std::int64_t c, std::int64_t i) {
    double& p = peak[per_channel ? std::size_t(c) : 0];
    p = std::max(p, std::abs(v[std::size_t(i)]));
  });
  for (double& p : peak) p = p > 0 ? as_f32(p / quant_max(bits)) : 1.0;
  return peak;
}

Tensor quantize_weight(const Tensor& w, int axis, const std::vector<double>& scales, int bits) {
  const Shape s = w.shape();
  const std::int64_t n = slices(s, axis);
  if (scales.size() != 1 && std::int64_t(scales.size()) != n) {
    throw ShapeError("expected 1 or " + std::to_string(n) + " weight scales, got " +
                     std::to_string(scales.size()));
  }
  const double lo = quant_min(bits), hi = quant_max(bits);
  Tensor out(s, w.dtype());
  dispatch(w.dtype(), [&]<class T>() {
    auto src = w.data<T>();
    auto dst = out.mutable_data<T>();
    for_each_slice(s, axis, [&](std::int64_t c, std::int64_t i) {
      const double sc = scales[scales.size() == 1 ? 0 : std::size_t(c)];
      const auto k = static_cast<std::size_t>(i);
      dst[k] = static_cast<T>(std::clamp(std::round(double(src[k]) / sc), lo, hi) * sc);
    });
  });
  return out;
}

int output_axis(const ConvSite& site) { return site.tconv ? 1 : 0; }

ConvOverride fold_site(const ConvSite& site) {
  const Tensor& weight = site.conv ? site.conv->weight : site.tconv->weight;
  const std::optional<Tensor>& bias = site.conv ? site.conv->bias : site.tconv->bias;
  if (!site.bn) return {weight.clone(), bias ? std::optional<Tensor>(bias->clone()) : std::nullopt};

  const int axis = output_axis(site);
  const Shape s = weight.shape();
  const std::int64_t out_ch = slices(s, axis);
  const auto gamma = site.bn->gamma.to_vector(), beta = site.bn->beta.to_vector();
  const auto mean = site.bn->running_mean.to_vector(), var = site.bn->running_var.to_vector();
  std::vector<double> factor(static_cast<std::size_t>(out_ch));
  std::vector<double> b(static_cast<std::size_t>(out_ch));
  const std::vector<double> old_bias =
      bias ? bias->to_vector() : std::vector<double>(std::size_t(out_ch), 0.0);
  for (std::size_t c = 0; c < factor.size(); ++c) {
    factor[c] = gamma[c] / std::sqrt(var[c] + BatchNorm2d::kEps);
    b[c] = beta[c] + (old_bias[c] - mean[c]) * factor[c];
  }
  const std::vector<double> w = weight.to_vector();
  std::vector<double> folded(w.size());
  for_each_slice(s, axis, [&](std::int64_t c, std::int64_t i) {
    folded[std::size_t(i)] = w[std::size_t(i)] * factor[std::size_t(c)];
  });
  return {Tensor::from_vector(s, folded, weight.dtype()),
          Tensor::from_vector(Shape{1, out_ch, 1, 1}, b, weight.dtype())};
}

Calibration calibrate(const Model& model, const std::vector<Tensor>& batches,
                      const CalibrationConfig& config) {
  if (batches.empty()) throw std::invalid_argument("calibration needs at least one batch");
  Calibration cal;
  Observer observer(cal);
  NoGradGuard no_grad;
  ForwardContext ctx;
  ctx.hook = &observer;
  for (const Tensor& b : batches) model.forward(b.to(model.dtype()), ctx);
  if (config.method == CalibrationMethod::kMinMax) return cal;

  if (!(config.percentile > 50 && config.percentile <= 100) || config.histogram_bins < 1) {
    throw std::invalid_argument("percentile must be in (50, 100] with at least one bin");
  }
  std::map<std::string, Histogram> hist;
  for (const auto& [site, r] : cal.inputs)
    hist.emplace(site + ".in", Histogram(r.min, r.max, config.histogram_bins));
  for (const auto& [site, r] : cal.outputs)
    hist.emplace(site + ".out", Histogram(r.min, r.max, config.histogram_bins));
  observer.use_histograms(&hist);
  for (const Tensor& b : batches) model.forward(b.to(model.dtype()), ctx);
  const double q = config.percentile / 100.0;
  auto narrow = [&](std::map<std::string, RangeStats>& ranges, const char* suffix) {
    for (auto& [site, r] : ranges) {
      const Histogram& h = hist.at(site + suffix);
      r.min = std::max(r.min, h.quantile(1.0 - q));
      r.max = std::min(r.max, h.quantile(q));
    }
  };
  narrow(cal.inputs, ".in");
  narrow(cal.outputs, ".out");
  return cal;
}

std::vector<std::pair<std::string, AffineQuant>> QuantScheme::points() const {
  std::vector<std::pair<std::string, AffineQuant>> out;
  for (const auto& [site, a] : inputs) out.emplace_back(site + ".input", a);
  for (const auto& [site, scales] : weight_scales)
    for (std::size_t c = 0; c < scales.size(); ++c)
      out.emplace_back(site + ".weight." + std::to_string(c), AffineQuant{scales[c], 0});
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

QuantScheme build_scheme(const Model& model, const Calibration& calibration, int bits) {
  QuantScheme scheme;
  scheme.bits = bits;
  for (const ConvSite& site : model.conv_sites()) {
    const auto it = calibration.inputs.find(site.name);
    if (it == calibration.inputs.end() || it->second.count == 0) {
      throw std::invalid_argument("site " + site.name + " was not reached during calibration");
    }
    scheme.inputs[site.name] = affine_params(it->second.min, it->second.max, bits);
    scheme.weight_scales[site.name] =
        weight_scales(fold_site(site).weight, output_axis(site), true, bits);
  }
  return scheme;
}

QuantHook::QuantHook(const Model& model, const QuantScheme& scheme) : bits_(scheme.bits) {
  for (const ConvSite& site : model.conv_sites()) {
    const auto in = scheme.inputs.find(site.name);
    const auto ws = scheme.weight_scales.find(site.name);
    if (in == scheme.inputs.end() || ws == scheme.weight_scales.end()) {
      throw std::invalid_argument("no quantization parameters for site " + site.name);
    }
    ConvOverride folded = fold_site(site);
    folded.weight = quantize_weight(folded.weight, output_axis(site), ws->second, bits_);
    inputs_[site.name] = in->second;
    overrides_.emplace(site.name, std::move(folded));
  }
}

Tensor QuantHook::on_input(const std::string& site, const Tensor& x) {
  const auto it = inputs_.find(site);
  if (it == inputs_.end()) throw std::invalid_argument("no quantization parameters for site " + site);
  return fake_quantize(x, it->second.scale, it->second.zero_point, bits_);
}

const ConvOverride* QuantHook::override_for(const std::string& site) const {
  const auto it = overrides_.find(site);
  return it == overrides_.end() ? nullptr : &it->second;
}

HeadOutputs quantized_forward(const Model& model, const QuantScheme& scheme,
                              const Tensor& image) {
  QuantHook hook(model, scheme);
  NoGradGuard no_grad;
  ForwardContext ctx;
  ctx.hook = &hook;
  return model.forward(image.to(model.dtype()), ctx);
}

QuantReport quant_report(const Model& model, const QuantScheme& scheme,
                         const std::vector<Sample>& samples, std::int64_t batch_size) {
  QuantHook hook(model, scheme);
  return {model.config().display_name(), evaluate(model, samples, batch_size),
          evaluate(model, samples, batch_size, &hook)};
}

std::string render_quant_report(const QuantReport& r) {
  struct Row {
    const char* name;
    double fp32, ptsq;
  };
  std::vector<Row> rows{{"mIoU drivable", r.fp32.miou_drivable(), r.ptsq.miou_drivable()},
                        {"Acc lane", r.fp32.acc_lane(), r.ptsq.acc_lane()},
                        {"IoU lane", r.fp32.iou_lane(), r.ptsq.iou_lane()}};
  if (r.fp32.drivable.classes > 2) {
    rows.push_back({"PA drivable", r.fp32.pa_drivable(), r.ptsq.pa_drivable()});
    rows.push_back({"mPA drivable", r.fp32.mpa_drivable(), r.ptsq.mpa_drivable()});
  }
  std::string out = r.config + "\n";
  char line[128];
  std::snprintf(line, sizeof line, "%-14s %9s %11s %9s\n", "metric (%)", "FP32", "INT8-PTSQ",
                "delta");
  out += line;
  for (const Row& row : rows) {
    std::snprintf(line, sizeof line, "%-14s %9.2f %11.2f %+9.2f\n", row.name, 100 * row.fp32,
                  100 * row.ptsq, 100 * (row.ptsq - row.fp32));
    out += line;
  }
  return out;
}

void write_scheme(const QuantScheme& scheme, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const auto points = scheme.points();
  write_bytes(f, kSidecarMagic, 4);
  write_le<std::uint32_t>(f, kSidecarVersion);
  write_le<std::uint32_t>(f, static_cast<std::uint32_t>(scheme.bits));
  write_le<std::uint32_t>(f, static_cast<std::uint32_t>(points.size()));
  for (const auto& [name, a] : points) {
    write_le<std::uint16_t>(f, static_cast<std::uint16_t>(name.size()));
    write_bytes(f, name.data(), name.size());
    write_le<float>(f, static_cast<float>(a.scale));
    write_le<std::int32_t>(f, a.zero_point);
  }
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

QuantScheme read_scheme(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kSidecarMagic, 4) != 0) {
    throw std::runtime_error(path.string() + ": not a quantization sidecar");
  }
  if (const auto v = read_le<std::uint32_t>(f, path); v != kSidecarVersion) {
    throw std::runtime_error(path.string() + ": unsupported sidecar version " + std::to_string(v));
  }
  QuantScheme scheme;
  scheme.bits = static_cast<int>(read_le<std::uint32_t>(f, path));
  quant_min(scheme.bits);
  const auto count = read_le<std::uint32_t>(f, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(read_le<std::uint16_t>(f, path), '\0');
    f.read(name.data(), static_cast<std::streamsize>(name.size()));
    const AffineQuant a{read_le<float>(f, path), read_le<std::int32_t>(f, path)};
    if (name.ends_with(".input")) {
      scheme.inputs[name.substr(0, name.size() - 6)] = a;
      continue;
    }
    const auto dot = name.rfind(".weight.");
    if (dot == std::string::npos) throw std::runtime_error(path.string() + ": bad point " + name);
    const std::size_t channel = std::stoul(name.substr(dot + 8));
    auto& scales = scheme.weight_scales[name.substr(0, dot)];
    if (scales.size() <= channel) scales.resize(channel + 1, 0.0);
    scales[channel] = a.scale;
  }
  for (const auto& [site, scales] : scheme.weight_scales)
    for (double s : scales)
      if (!(s > 0)) throw std::runtime_error(path.string() + ": missing weight scale for " + site);
  return scheme;
}

}  // namespace tlnp
