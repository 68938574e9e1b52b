#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "hgan/common.hpp"
#include "hgan/random.hpp"

namespace hgan {

template <class Real>
struct TensorImpl {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until a backward pass touches this tensor
  bool requires_grad = false;
};

// N-dimensional row-major array with an optional gradient accumulator.
// Copying a Tensor copies the handle; the storage is shared. Ops never
// mutate inputs, so sharing is safe between forward passes.
template <class Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor() : impl_(std::make_shared<TensorImpl<Real>>()) {}

  explicit Tensor(std::shared_ptr<TensorImpl<Real>> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), Real(0), requires_grad);
  }

  static Tensor filled(Shape shape, Real v, bool requires_grad = false) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->value.assign(shape_numel(t.impl_->shape), v);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<Real> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw_shape("tensor: shape ", shape_str(shape), " does not match data length ",
                  data.size());
    }
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->value = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor randn(Shape shape, Rng& rng, Real stddev = Real(1)) {
    Tensor t = zeros(std::move(shape));
    for (Real& x : t.values()) x = static_cast<Real>(rng.normal()) * stddev;
    return t;
  }

  static Tensor truncated_normal(Shape shape, Rng& rng, Real stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (Real& x : t.values()) {
      x = static_cast<Real>(rng.truncated_normal(0.0, static_cast<double>(stddev)));
    }
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->value.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }

  std::vector<Real>& values() { return impl_->value; }
  const std::vector<Real>& values() const { return impl_->value; }
  Real* data() { return impl_->value.data(); }
  const Real* data() const { return impl_->value.data(); }

  Real item() const {
    if (numel() != 1) {
      throw ContractError("tensor: item() on non-scalar " + shape_str(shape()));
    }
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }

  std::vector<Real>& grad() {
    ensure_grad();
    return impl_->grad;
  }
  const std::vector<Real>& grad() const { return impl_->grad; }

  void ensure_grad() {
    if (impl_->grad.size() != impl_->value.size()) {
      impl_->grad.assign(impl_->value.size(), Real(0));
    }
  }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
  }

  // Value copy with no gradient history or requirement.
  Tensor detach() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->value = impl_->value;
    return t;
  }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> t = Tensor<Other>::zeros(impl_->shape, impl_->requires_grad);
    for (std::size_t i = 0; i < numel(); ++i) {
      t.values()[i] = static_cast<Other>(impl_->value[i]);
    }
    return t;
  }

  bool finite() const {
    for (Real x : impl_->value) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  const std::shared_ptr<TensorImpl<Real>>& impl() const { return impl_; }
  TensorImpl<Real>* raw() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl<Real>> impl_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace hgan
