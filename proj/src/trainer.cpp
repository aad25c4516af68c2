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

#include "tlnp/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "tlnp/image.hpp"
#include "tlnp/losses.hpp"

namespace tlnp {
namespace {

void check_rate(const char* name, double v, double lo, double hi, bool hi_inclusive) {
  if (!(v >= lo && (hi_inclusive ? v <= hi : v < hi))) {
    throw std::invalid_argument(std::string(name) + " = " + std::to_string(v) + " outside [" +
                                std::to_string(lo) + ", " + std::to_string(hi) +
                                (hi_inclusive ? "]" : ")"));
  }
}

EpochMetrics to_metrics(std::int64_t epoch, double loss, const SegmentationScores& s) {
  return {epoch, loss, s.miou_drivable(), s.acc_lane(), s.iou_lane()};
}

Checkpoint ema_checkpoint(Model& model, const EmaState& ema) {
  Checkpoint ckpt = snapshot(model);
  std::map<std::string, std::size_t> slot;
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) slot[ckpt.tensors[i].first] = i;
  for (std::size_t i = 0; i < ema.names.size(); ++i) {
    ckpt.tensors[slot.at(ema.names[i])].second = ema.shadow[i].clone();
  }
  return ckpt;
}

}  // namespace

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.hflip = c.translate = c.crop = c.hsv = false;
  return c;
}

void TrainConfig::validate() const {
  check_rate("learning_rate", learning_rate, 0, 1, false);
  check_rate("weight_decay", weight_decay, 0, 1, false);
  check_rate("beta1", beta1, 0, 1, false);
  check_rate("beta2", beta2, 0, 1, false);
  check_rate("ema_decay", ema_decay, 0, 1, true);
  if (!(adam_epsilon > 0)) throw std::invalid_argument("adam_epsilon must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (ema_ramp_steps < 0) throw std::invalid_argument("ema_ramp_steps must be non-negative");
  check_rate("flip_probability", augment.flip_probability, 0, 1, true);
  check_rate("max_shift", augment.max_shift, 0, 1, false);
  if (!(augment.min_crop_scale > 0 && augment.min_crop_scale <= 1)) {
    throw std::invalid_argument("min_crop_scale must be in (0, 1]");
  }
  check_rate("hue", augment.hue, 0, 0.5, true);
  check_rate("saturation", augment.saturation, 0, 1, true);
  check_rate("value", augment.value, 0, 1, true);
}

void adamw_step(const TensorList& params, AdamState& state, const TrainConfig& config) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor->shape(), DType::kF64);
      state.v.emplace_back(p.tensor->shape(), DType::kF64);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("optimizer state holds " + std::to_string(state.m.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  for (const auto& p : params) {
    if (!p.tensor->has_grad()) throw std::invalid_argument("parameter " + p.name + " has no gradient");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    if (state.m[i].shape() != p.shape()) {
      throw ShapeError("optimizer state for " + params[i].name + " has shape " +
                       state.m[i].shape().str() + ", parameter is " + p.shape().str());
    }
    auto m = state.m[i].mutable_data<double>();
    auto v = state.v[i].mutable_data<double>();
    dispatch(p.dtype(), [&]<class T>() {
      auto w = p.mutable_data<T>();
      auto g = p.grad<T>();
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k];
        m[k] = config.beta1 * m[k] + (1 - config.beta1) * gk;
        v[k] = config.beta2 * v[k] + (1 - config.beta2) * gk * gk;
        const double step = (m[k] / c1) / (std::sqrt(v[k] / c2) + config.adam_epsilon) +
                            config.weight_decay * static_cast<double>(w[k]);
        w[k] = static_cast<T>(static_cast<double>(w[k]) - config.learning_rate * step);
      }
    });
  }
}

EmaState EmaState::init(const TensorList& params, double decay, std::int64_t ramp_steps) {
  EmaState e;
  e.decay = decay;
  e.ramp_steps = ramp_steps;
  for (const auto& p : params) {
    e.names.push_back(p.name);
    e.shadow.push_back(p.tensor->clone());
  }
  return e;
}

double EmaState::next_decay() const {
  if (ramp_steps == 0) return decay;
  return decay * std::min(1.0, static_cast<double>(updates + 1) / static_cast<double>(ramp_steps));
}

void ema_update(EmaState& ema, const TensorList& params) {
  if (params.size() != ema.shadow.size()) {
    throw ShapeError("EMA tracks " + std::to_string(ema.shadow.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = *params[i].tensor;
    Tensor& s = ema.shadow[i];
    if (params[i].name != ema.names[i] || p.shape() != s.shape() || p.dtype() != s.dtype()) {
      throw ShapeError("EMA entry " + ema.names[i] + " " + s.shape().str() +
                       " does not match parameter " + params[i].name + " " + p.shape().str());
    }
  }
  const double d = ema.next_decay();
  for (std::size_t i = 0; i < params.size(); ++i) {
    dispatch(params[i].tensor->dtype(), [&]<class T>() {
      auto src = params[i].tensor->data<T>();
      auto dst = ema.shadow[i].mutable_data<T>();
      for (std::size_t k = 0; k < dst.size(); ++k) {
        dst[k] = static_cast<T>(d * static_cast<double>(dst[k]) +
                                (1 - d) * static_cast<double>(src[k]));
      }
    });
  }
  ++ema.updates;
}

Augmented augment(const Tensor& image, const std::vector<LabelMap>& masks,
                  const AugmentConfig& config, Rng& rng) {
  Augmented out{image, masks};
  const Shape s = image.shape();
  for (const auto& m : masks) {
    if (m.h != s.h || m.w != s.w) {
      throw ShapeError("mask " + std::to_string(m.h) + "x" + std::to_string(m.w) +
                       " is not aligned with image " + s.str());
    }
  }
  if (config.crop) {
    const double scale = rng.uniform(config.min_crop_scale, 1.0);
    const auto ch = std::max<std::int64_t>(1, std::llround(scale * double(s.h)));
    const auto cw = std::max<std::int64_t>(1, std::llround(scale * double(s.w)));
    const std::int64_t y = rng.integer(0, s.h - ch), x = rng.integer(0, s.w - cw);
    out.image = resize_bilinear(crop(out.image, y, x, ch, cw), s.h, s.w);
    for (auto& m : out.masks) m = resize_nearest(crop(m, y, x, ch, cw), s.h, s.w);
  }
  if (config.translate) {
    const auto my = std::llround(config.max_shift * double(s.h));
    const auto mx = std::llround(config.max_shift * double(s.w));
    const std::int64_t dy = rng.integer(-my, my), dx = rng.integer(-mx, mx);
    out.image = translate(out.image, dy, dx);
    for (auto& m : out.masks) m = translate(m, dy, dx);
  }
  if (config.hflip && rng.bernoulli(config.flip_probability)) {
    out.image = hflip(out.image);
    for (auto& m : out.masks) m = hflip(m);
  }
  if (config.hsv) {
    const double h = rng.uniform(-config.hue, config.hue);
    const double sg = 1 + rng.uniform(-config.saturation, config.saturation);
    const double vg = 1 + rng.uniform(-config.value, config.value);
    out.image = hsv_adjust(out.image, h, sg, vg);
  }
  return out;
}

TrainResult train(Model& model, const Dataset& data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (data.train.empty()) throw std::invalid_argument("training split is empty");
  const std::vector<Sample>& val = data.val.empty() ? data.train : data.val;

  const TensorList params = model.parameters();
  for (const auto& p : params) p.tensor->set_requires_grad(true);
  AdamState adam;
  const TensorList state = model.state();
  EmaState ema = EmaState::init(state, config.ema_decay, config.ema_ramp_steps);
  Model ema_model = Model::build(model.config(), 0, model.dtype());
  const std::vector<LossParams> loss_params{LossParams::drivable(), LossParams::lane()};
  const auto& heads = model.config().heads;

  Rng rng(config.seed);
  TrainResult result;
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  ForwardContext ctx;
  ctx.training = true;

  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.integer(0, std::int64_t(i) - 1))]);
    }
    double loss_sum = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + std::size_t(config.batch_size));
      std::vector<Sample> batch_samples;
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = data.train[order[i]];
        Augmented a = augment(s.image, {s.drivable, s.lane}, config.augment, rng);
        batch_samples.push_back({std::move(a.image), std::move(a.masks[0]), std::move(a.masks[1])});
      }
      std::vector<std::size_t> idx(batch_samples.size());
      std::iota(idx.begin(), idx.end(), 0);
      const Batch b = make_batch(batch_samples, idx, model.dtype());

      const HeadOutputs out = model.forward(b.image, ctx);
      const LossBreakdown loss = total_loss(
          {out.drivable, out.lane},
          {one_hot(b.drivable, heads[0].classes, model.dtype()),
           one_hot(b.lane, heads[1].classes, model.dtype())},
          loss_params);
      const double value = loss.total.item();
      const std::int64_t step = result.steps + 1;
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss " + std::to_string(value) + " at step " +
                                std::to_string(step) + " (epoch " + std::to_string(epoch) + ")",
                            step);
      }
      for (const auto& p : params) p.tensor->zero_grad();
      backward(loss.total);
      adamw_step(params, adam, config);
      ema_update(ema, state);
      result.steps = step;
      loss_sum += value * double(end - start);
    }
    const double train_loss = loss_sum / double(order.size());

    result.log.push_back(to_metrics(epoch, train_loss, evaluate(model, val)));
    restore(ema_model, ema_checkpoint(model, ema));
    result.ema_log.push_back(to_metrics(epoch, train_loss, evaluate(ema_model, val)));
    if (on_epoch) on_epoch(result.log.back(), result.ema_log.back());
  }
  result.raw = snapshot(model);
  result.ema = ema_checkpoint(model, ema);
  return result;
}

std::string metrics_csv(const std::vector<EpochMetrics>& log) {
  std::string out = "epoch,train_loss,miou_drivable,acc_lane,iou_lane\n";
  char line[160];
  for (const auto& e : log) {
    std::snprintf(line, sizeof line, "%lld,%.6f,%.6f,%.6f,%.6f\n",
                  static_cast<long long>(e.epoch), e.train_loss, e.miou_drivable, e.acc_lane,
                  e.iou_lane);
    out += line;
  }
  return out;
}

void write_metrics_csv(const std::vector<EpochMetrics>& log, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << metrics_csv(log);
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace tlnp
