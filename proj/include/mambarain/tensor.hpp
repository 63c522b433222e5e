#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mambarain/errors.hpp"

namespace mambarain {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
};
}  // namespace detail

// Dense row-major double tensor. Copies share storage, the way autograd
// handles do; use clone() for an independent buffer.
class Tensor {
public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

  explicit Tensor(Shape shape, double fill = 0.0) : Tensor() {
    for (auto e : shape)
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
  }

  // Boundary constructor: validates length and finiteness.
  Tensor(Shape shape, std::vector<double> values) : Tensor() {
    for (auto e : shape)
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != values.size())
      throw DimensionError("shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    for (double v : values)
      if (!std::isfinite(v)) throw DomainError("non-finite value at tensor construction");
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  double* ptr() { return impl_->data.data(); }
  const double* ptr() const { return impl_->data.data(); }
  double& operator[](std::size_t i) { return impl_->data[i]; }
  double operator[](std::size_t i) const { return impl_->data[i]; }

  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    impl_->requires_grad = on;
    return *this;
  }

  // Gradient storage belongs to the shared buffer, so it is reachable through
  // const handles (backward closures hold their inputs by const copy).
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<double> grad() const {
    ensure_grad();
    return impl_->grad;
  }
  void ensure_grad() const {
    if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  }
  void zero_grad() const {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  Tensor clone() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

  bool all_finite() const {
    for (double v : impl_->data)
      if (!std::isfinite(v)) return false;
    return true;
  }

private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of differentiable operations. backward() replays the
// records in exact reverse order, each once.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Tensor output, std::function<void()> backward_fn) {
    outputs_.push_back(std::move(output));
    backward_fns_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return backward_fns_.size(); }

  // Seeds d(loss)/d(loss) = 1. Intermediate gradients are reset first so the
  // tape can be replayed; leaf gradients accumulate, as with any optimizer
  // that expects the caller to zero them.
  void backward(Tensor loss) {
    if (loss.size() != 1) throw ContractError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
    for (auto& t : outputs_) t.zero_grad();
    loss.ensure_grad();
    loss.grad()[0] = 1.0;
    for (std::size_t i = backward_fns_.size(); i-- > 0;) backward_fns_[i]();
  }

  void clear() {
    outputs_.clear();
    backward_fns_.clear();
  }

  static Tape*& active() {
    thread_local Tape* tape = nullptr;
    return tape;
  }

private:
  std::vector<Tensor> outputs_;
  std::vector<std::function<void()>> backward_fns_;
};

// Installs a tape as the recording target for this thread.
class TapeScope {
public:
  explicit TapeScope(Tape& tape) : previous_(Tape::active()) { Tape::active() = &tape; }
  ~TapeScope() { Tape::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

private:
  Tape* previous_;
};

// Suspends recording, e.g. for inference inside a training loop.
class NoGradScope {
public:
  NoGradScope() : previous_(Tape::active()) { Tape::active() = nullptr; }
  ~NoGradScope() { Tape::active() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

private:
  Tape* previous_;
};

namespace detail {
inline Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = Tape::active();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs)
    if (t && t->requires_grad()) return tape;
  return nullptr;
}
}  // namespace detail

}  // namespace mambarain
