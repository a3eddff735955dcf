// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float tensor. Copies share storage; clone() makes a deep
// copy. Gradients live beside the data and exist only after a backward pass.
#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dvit/errors.hpp"

namespace dvit {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

// Identity of a tensor on a tape. gen == 0 means "not on any tape".
struct TapeMark {
  std::uint64_t gen = 0;
  std::uint32_t node = 0;
};

struct Storage {
  Shape shape;
  std::vector<float> data;
  bool requires_grad = false;
  std::vector<float> grad;  // empty until backward materializes it
  bool has_grad = false;
  TapeMark mark;
  // Double-precision shadow of `data`, maintained by every forward op from
  // its inputs' shadows (leaves promote their floats on read). The float
  // buffer stays the official value; the shadow only feeds item_precise(),
  // which keeps finite-difference oracles out of the float noise floor.
  // Empty on leaves and after raw writes through the mutable accessors.
  std::vector<double> shadow;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, float v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }
  // Gaussian init, mean 0. One draw per element in row-major order.
  static Tensor randn(Shape shape, std::mt19937& rng, float stddev);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return storage().shape; }
  std::size_t ndim() const { return storage().shape.size(); }
  std::size_t numel() const { return storage().data.size(); }
  std::size_t dim(std::size_t axis) const;

  // Mutable access drops the shadow: a raw write would desync it.
  float* data() { storage().shadow.clear(); return storage().data.data(); }
  const float* data() const { return storage().data.data(); }
  std::vector<float>& vec() { storage().shadow.clear(); return storage().data; }
  const std::vector<float>& vec() const { return storage().data; }

  // Scalar extraction; contract error unless numel() == 1.
  float item() const;
  // The double shadow of a scalar when one exists, else item().
  double item_precise() const;

  float at(std::size_t i) const { return storage().data.at(i); }
  float at2(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return s_ && s_->requires_grad; }
  Tensor& set_requires_grad(bool rg);

  bool has_grad() const { return s_ && s_->has_grad; }
  const std::vector<float>& grad() const;
  void clear_grad();

  Tensor clone() const;
  // Value snapshot detached from any tape, requires_grad off.
  Tensor detached() const { auto c = clone(); c.set_requires_grad(false); return c; }

  // Same underlying buffer (autograd identity).
  bool same_storage(const Tensor& other) const { return s_ == other.s_; }

  detail::Storage& storage();
  const detail::Storage& storage() const;
  detail::Storage* storage_ptr() const { return s_.get(); }

 private:
  std::shared_ptr<detail::Storage> s_;
};

// Throws NumericError naming `name` if any element is NaN or infinite.
void check_finite(const Tensor& t, const std::string& name);

}  // namespace dvit
