// SPDX-License-Identifier: Apache-2.0
#include "dvit/tensor.hpp"

#include <cmath>
#include <sstream>

namespace dvit {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, float fill) : s_(std::make_shared<detail::Storage>()) {
  s_->data.assign(shape_numel(shape), fill);
  s_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : s_(std::make_shared<detail::Storage>()) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor init: " + shape_str(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  s_->shape = std::move(shape);
  s_->data = std::move(values);
}

Tensor Tensor::randn(Shape shape, std::mt19937& rng, float stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& v : t.vec()) v = dist(rng);
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& sh = storage().shape;
  if (axis >= sh.size())
    throw ContractError("axis " + std::to_string(axis) + " out of range for " +
                        shape_str(sh));
  return sh[axis];
}

float Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return storage().data[0];
}

double Tensor::item_precise() const {
  if (numel() != 1)
    throw ContractError("item_precise() on non-scalar tensor " + shape_str(shape()));
  const auto& st = storage();
  return st.shadow.empty() ? double(st.data[0]) : st.shadow[0];
}

float Tensor::at2(std::size_t r, std::size_t c) const {
  const auto& st = storage();
  if (st.shape.size() != 2)
    throw ContractError("at2() on tensor " + shape_str(st.shape));
  return st.data.at(r * st.shape[1] + c);
}

Tensor& Tensor::set_requires_grad(bool rg) {
  storage().requires_grad = rg;
  return *this;
}

const std::vector<float>& Tensor::grad() const {
  if (!has_grad())
    throw ContractError("grad() before backward materialized one");
  return storage().grad;
}

void Tensor::clear_grad() {
  if (s_) {
    s_->grad.clear();
    s_->has_grad = false;
  }
}

Tensor Tensor::clone() const {
  Tensor out(shape());
  out.s_->data = storage().data;
  out.s_->shadow = storage().shadow;
  out.set_requires_grad(requires_grad());
  return out;
}

detail::Storage& Tensor::storage() {
  if (!s_) throw ContractError("use of undefined tensor");
  return *s_;
}

const detail::Storage& Tensor::storage() const {
  if (!s_) throw ContractError("use of undefined tensor");
  return *s_;
}

void check_finite(const Tensor& t, const std::string& name) {
  const auto& v = t.vec();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw NumericError("non-finite value in tensor '" + name + "' at flat index " +
                         std::to_string(i));
}

}  // namespace dvit
