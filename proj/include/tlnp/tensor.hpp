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

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace tlnp {

// Element precision. The numeric tag values are part of the checkpoint format.
enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

const char* dtype_name(DType dtype);
std::size_t dtype_size(DType dtype);

// NCHW extent. Every dimension is at least 1.
struct Shape {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  std::int64_t numel() const { return n * c * h * w; }
  std::int64_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Thrown for any shape or argument contract violation in tensor ops.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

class Tensor;
struct TensorImpl;

// One recorded operation on the tape. `backward` reads the output gradient
// and accumulates into the gradients of `inputs` that require them.
struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::kF32;
  Buffer data;
  Buffer grad;  // empty vector unless requires_grad
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

// Reference-counted handle to a dense NCHW tensor. Copying the handle shares
// storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, DType dtype);  // zero-filled

  static Tensor zeros(Shape shape, DType dtype = DType::kF32);
  static Tensor full(Shape shape, double value, DType dtype = DType::kF32);
  static Tensor from_vector(Shape shape, const std::vector<double>& values,
                            DType dtype = DType::kF32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  DType dtype() const;
  std::int64_t numel() const { return shape().numel(); }

  template <class T>
  std::span<const T> data() const;
  template <class T>
  std::span<T> mutable_data();
  template <class T>
  std::span<const T> grad() const;
  template <class T>
  std::span<T> mutable_grad();

  // Element access converted to double; slow, meant for tests and IO.
  double at(std::int64_t flat_index) const;
  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;
  void set(std::int64_t flat_index, double value);
  double grad_at(std::int64_t flat_index) const;
  std::vector<double> to_vector() const;
  std::vector<double> grad_vector() const;
  double item() const;

  bool requires_grad() const;
  // Turns this tensor into a gradient-tracked leaf (allocates a zero grad).
  Tensor& set_requires_grad(bool on);
  bool has_grad() const;
  void zero_grad();
  bool is_leaf() const;
  const std::shared_ptr<Node>& grad_fn() const;

  // Deep copy of the values, detached from the tape.
  Tensor clone() const;
  // Copy of the values without the tape link or the grad.
  Tensor detach() const;
  Tensor to(DType dtype) const;
  // Copy with a different extent (numel must match); not differentiable.
  Tensor reshaped(Shape shape) const;

  // Bitwise equality of shape, dtype and values.
  bool same_bits(const Tensor& other) const;

  TensorImpl& impl() const;
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_result(Shape, DType, std::string,
                            std::vector<Tensor>,
                            std::function<void(const TensorImpl&)>);
};

// Tape recording is enabled by default; a guard turns it off for its scope on
// the current thread.
bool grad_enabled();
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Reverse-mode accumulation from a scalar (1x1x1x1) loss. Leaf gradients
// accumulate across calls until zero_grad().
void backward(const Tensor& loss);

// Allocates an op result. When recording is on and any input requires a
// gradient, the result is linked to a tape node running `backward_fn`.
Tensor make_result(Shape shape, DType dtype, std::string op,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl&)> backward_fn);

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::kF32; }
template <>
constexpr DType dtype_of<double>() { return DType::kF64; }

// Runs `fn.template operator()<T>()` with T matching `dtype`.
template <class Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::kF64) return fn.template operator()<double>();
  return fn.template operator()<float>();
}

// Raw accessors on impl buffers, used by kernels.
template <class T>
std::span<T> values(TensorImpl& impl) {
  return std::get<std::vector<T>>(impl.data);
}
template <class T>
std::span<const T> values(const TensorImpl& impl) {
  return std::get<std::vector<T>>(impl.data);
}
// Gradient buffer of `impl`, allocated on first use.
template <class T>
std::span<T> grad_buffer(TensorImpl& impl) {
  auto& g = std::get<std::vector<T>>(impl.grad);
  if (static_cast<std::int64_t>(g.size()) != impl.shape.numel()) {
    g.assign(static_cast<std::size_t>(impl.shape.numel()), T(0));
  }
  return g;
}
template <class T>
std::span<const T> grad_values(const TensorImpl& impl) {
  return std::get<std::vector<T>>(impl.grad);
}

}  // namespace tlnp
