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

#include "tlnp/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <unordered_set>

namespace tlnp {
namespace {

thread_local bool g_grad_enabled = true;

Buffer make_buffer(DType dtype, std::int64_t count) {
  if (dtype == DType::kF64) {
    return std::vector<double>(static_cast<std::size_t>(count), 0.0);
  }
  return std::vector<float>(static_cast<std::size_t>(count), 0.0f);
}

Buffer empty_buffer(DType dtype) {
  if (dtype == DType::kF64) return std::vector<double>{};
  return std::vector<float>{};
}

void check_shape(const Shape& s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw ShapeError("tensor dimensions must be >= 1, got " + s.str());
  }
}

}  // namespace

const char* dtype_name(DType dtype) {
  return dtype == DType::kF64 ? "f64" : "f32";
}

std::size_t dtype_size(DType dtype) { return dtype == DType::kF64 ? 8 : 4; }

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " +
         std::to_string(h) + ", " + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, DType dtype) {
  check_shape(shape);
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = shape;
  impl_->dtype = dtype;
  impl_->data = make_buffer(dtype, shape.numel());
  impl_->grad = empty_buffer(dtype);
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return Tensor(shape, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(shape, dtype);
  dispatch(dtype, [&]<class T>() {
    auto d = t.mutable_data<T>();
    std::fill(d.begin(), d.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_vector(Shape shape, const std::vector<double>& values,
                           DType dtype) {
  Tensor t(shape, dtype);
  if (static_cast<std::int64_t>(values.size()) != shape.numel()) {
    throw ShapeError("from_vector: " + std::to_string(values.size()) +
                     " values for shape " + shape.str());
  }
  dispatch(dtype, [&]<class T>() {
    auto d = t.mutable_data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

const Shape& Tensor::shape() const { return impl().shape; }
DType Tensor::dtype() const { return impl().dtype; }

TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_;
}

template <class T>
std::span<const T> Tensor::data() const {
  if (dtype() != dtype_of<T>()) {
    throw ShapeError(std::string("tensor dtype is ") + dtype_name(dtype()));
  }
  return values<T>(std::as_const(impl()));
}

template <class T>
std::span<T> Tensor::mutable_data() {
  if (dtype() != dtype_of<T>()) {
    throw ShapeError(std::string("tensor dtype is ") + dtype_name(dtype()));
  }
  return values<T>(impl());
}

template <class T>
std::span<const T> Tensor::grad() const {
  if (dtype() != dtype_of<T>()) {
    throw ShapeError(std::string("tensor dtype is ") + dtype_name(dtype()));
  }
  return grad_values<T>(impl());
}

template <class T>
std::span<T> Tensor::mutable_grad() {
  if (dtype() != dtype_of<T>()) {
    throw ShapeError(std::string("tensor dtype is ") + dtype_name(dtype()));
  }
  return grad_buffer<T>(impl());
}

template std::span<const float> Tensor::data<float>() const;
template std::span<const double> Tensor::data<double>() const;
template std::span<float> Tensor::mutable_data<float>();
template std::span<double> Tensor::mutable_data<double>();
template std::span<const float> Tensor::grad<float>() const;
template std::span<const double> Tensor::grad<double>() const;
template std::span<float> Tensor::mutable_grad<float>();
template std::span<double> Tensor::mutable_grad<double>();

double Tensor::at(std::int64_t i) const {
  return dispatch(dtype(), [&]<class T>() -> double {
    return static_cast<double>(data<T>()[static_cast<std::size_t>(i)]);
  });
}

double Tensor::at(std::int64_t n, std::int64_t c, std::int64_t h,
                  std::int64_t w) const {
  const Shape& s = shape();
  return at(((n * s.c + c) * s.h + h) * s.w + w);
}

void Tensor::set(std::int64_t i, double value) {
  dispatch(dtype(), [&]<class T>() {
    mutable_data<T>()[static_cast<std::size_t>(i)] = static_cast<T>(value);
  });
}

double Tensor::grad_at(std::int64_t i) const {
  if (!has_grad()) return 0.0;
  return dispatch(dtype(), [&]<class T>() -> double {
    return static_cast<double>(grad<T>()[static_cast<std::size_t>(i)]);
  });
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<std::size_t>(numel()));
  dispatch(dtype(), [&]<class T>() {
    auto d = data<T>();
    std::copy(d.begin(), d.end(), out.begin());
  });
  return out;
}

std::vector<double> Tensor::grad_vector() const {
  std::vector<double> out(static_cast<std::size_t>(numel()), 0.0);
  if (!has_grad()) return out;
  dispatch(dtype(), [&]<class T>() {
    auto g = grad<T>();
    std::copy(g.begin(), g.end(), out.begin());
  });
  return out;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() on tensor of shape " + shape().str());
  }
  return at(0);
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  impl().requires_grad = on;
  if (on) {
    dispatch(dtype(), [&]<class T>() { grad_buffer<T>(impl()); });
  } else {
    impl().grad = empty_buffer(dtype());
  }
  return *this;
}

bool Tensor::has_grad() const {
  return std::visit([&](const auto& g) { return !g.empty(); }, impl().grad);
}

void Tensor::zero_grad() {
  std::visit([](auto& g) { std::fill(g.begin(), g.end(), 0); }, impl().grad);
}

bool Tensor::is_leaf() const { return impl().grad_fn == nullptr; }

const std::shared_ptr<Node>& Tensor::grad_fn() const { return impl().grad_fn; }

Tensor Tensor::clone() const {
  Tensor t(shape(), dtype());
  t.impl().data = impl().data;
  return t;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape();
  impl->dtype = dtype();
  impl->data = this->impl().data;
  impl->grad = empty_buffer(dtype());
  return Tensor(impl);
}

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return clone();
  Tensor t(shape(), target);
  dispatch(dtype(), [&]<class S>() {
    auto src = data<S>();
    dispatch(target, [&]<class D>() {
      auto dst = t.mutable_data<D>();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return t;
}

Tensor Tensor::reshaped(Shape s) const {
  check_shape(s);
  if (s.numel() != numel()) {
    throw ShapeError("reshape " + shape().str() + " -> " + s.str());
  }
  Tensor t = detach();
  t.impl().shape = s;
  return t;
}

bool Tensor::same_bits(const Tensor& other) const {
  if (shape() != other.shape() || dtype() != other.dtype()) return false;
  return dispatch(dtype(), [&]<class T>() {
    auto a = data<T>();
    auto b = other.data<T>();
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
  });
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, DType dtype, std::string op,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl&)> backward_fn) {
  Tensor out(shape, dtype);
  if (!g_grad_enabled) return out;
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) needs = true;
  }
  if (!needs) return out;
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward_fn);
  out.impl().requires_grad = true;
  out.impl().grad_fn = std::move(node);
  return out;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     loss.shape().str());
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward() on a tensor that does not require grad");
  }

  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(&loss.impl(), 0);
  seen.insert(&loss.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      const Tensor& child = fn->inputs[next++];
      if (child.defined() && child.requires_grad() &&
          seen.insert(&child.impl()).second) {
        stack.emplace_back(&child.impl(), 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  // Interior gradients are per-call; leaf gradients accumulate.
  for (TensorImpl* t : order) {
    if (t->grad_fn) {
      std::visit([](auto& g) { g.clear(); }, t->grad);
    }
  }
  dispatch(loss.dtype(), [&]<class T>() {
    grad_buffer<T>(loss.impl())[0] += T(1);
  });
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (!t->grad_fn) continue;
    bool has = std::visit([](const auto& g) { return !g.empty(); }, t->grad);
    if (!has) continue;
    t->grad_fn->backward(*t);
  }
}

}  // namespace tlnp
