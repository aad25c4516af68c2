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

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tlnp/ops.hpp"
#include "tlnp/random.hpp"
#include "tlnp/tensor.hpp"

namespace tlnp {

// A named tensor owned by some layer. `trainable` is false for BN running
// statistics, which are state but not optimizer parameters.
struct NamedTensor {
  std::string name;
  Tensor* tensor = nullptr;
  bool trainable = true;
};
using TensorList = std::vector<NamedTensor>;

class Conv2d;
class ConvTranspose2d;
class BatchNorm2d;

// A convolution as seen by quantization: its name, the layer and, when a
// batch norm directly follows it, that batch norm (foldable into the conv).
struct ConvSite {
  std::string name;
  const Conv2d* conv = nullptr;
  const ConvTranspose2d* tconv = nullptr;
  const BatchNorm2d* bn = nullptr;
};

// Replacement weight and bias for a site. When the site has a batch norm,
// the replacement already includes it and the batch norm is skipped.
struct ConvOverride {
  Tensor weight;
  std::optional<Tensor> bias;
};

// Observes and rewrites convolutions during a forward pass.
class ConvHook {
 public:
  virtual ~ConvHook() = default;
  // Returns the tensor actually fed to the convolution.
  virtual Tensor on_input(const std::string& site, const Tensor& x) = 0;
  virtual void on_output(const std::string& site, const Tensor& y) = 0;
  virtual const ConvOverride* override_for(const std::string& site) const = 0;
};

struct ForwardContext {
  bool training = false;
  ConvHook* hook = nullptr;
  // Called with a stage label and its output shape, when set.
  std::function<void(const std::string&, const Shape&)> trace;

  void emit(const std::string& label, const Shape& s) const {
    if (trace) trace(label, s);
  }
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, const ConvParams& p, DType dtype);

  // Runs the hook protocol for a bare convolution (no following batch norm).
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
  Tensor apply(const Tensor& x) const;

  void init(Rng& rng);
  void collect(TensorList& out);
  std::int64_t parameter_count() const;

  const std::string& name() const { return name_; }
  const ConvParams& params() const { return params_; }
  Tensor weight;
  std::optional<Tensor> bias;

 private:
  std::string name_;
  ConvParams params_;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::string name, const ConvTransposeParams& p, DType dtype);

  Tensor apply(const Tensor& x) const;
  void init(Rng& rng);
  void collect(TensorList& out);
  std::int64_t parameter_count() const;

  const std::string& name() const { return name_; }
  const ConvTransposeParams& params() const { return params_; }
  Tensor weight;
  std::optional<Tensor> bias;

 private:
  std::string name_;
  ConvTransposeParams params_;
};

class BatchNorm2d {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  BatchNorm2d() = default;
  BatchNorm2d(std::string name, std::int64_t channels, DType dtype);

  // Training mode updates the running statistics in place.
  Tensor forward(const Tensor& x, bool training) const;
  void collect(TensorList& out);
  std::int64_t parameter_count() const;  // gamma + beta

  const std::string& name() const { return name_; }
  Tensor gamma, beta, running_mean, running_var;

 private:
  std::string name_;
};

class PRelu {
 public:
  static constexpr double kInitSlope = 0.25;

  PRelu() = default;
  PRelu(std::string name, std::int64_t channels, DType dtype);

  Tensor forward(const Tensor& x) const;
  void collect(TensorList& out);
  std::int64_t parameter_count() const;

  Tensor slope;

 private:
  std::string name_;
};

// Batch norm followed by PReLU.
class BnAct {
 public:
  BnAct() = default;
  BnAct(const std::string& name, std::int64_t channels, DType dtype);

  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
  void collect(TensorList& out);
  std::int64_t parameter_count() const;

  BatchNorm2d bn;
  PRelu act;
};

// Convolution, batch norm, PReLU. Quantization sees the convolution and the
// batch norm as one foldable site.
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(const std::string& name, const ConvParams& p, DType dtype);

  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
  void init(Rng& rng);
  void collect(TensorList& out);
  void sites(std::vector<ConvSite>& out) const;
  std::int64_t parameter_count() const;

  Conv2d conv;
  BatchNorm2d bn;
  PRelu act;
};

class ConvTransposeBnAct {
 public:
  ConvTransposeBnAct() = default;
  ConvTransposeBnAct(const std::string& name, const ConvTransposeParams& p,
                     DType dtype);

  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;
  void init(Rng& rng);
  void collect(TensorList& out);
  void sites(std::vector<ConvSite>& out) const;
  std::int64_t parameter_count() const;

  ConvTranspose2d conv;
  BatchNorm2d bn;
  PRelu act;
};

std::int64_t trainable_count(const TensorList& list);

}  // namespace tlnp
