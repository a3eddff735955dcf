// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives over Tensor. Every op validates shapes up front,
// computes the forward result, and records a backward closure when an input
// is tracked on the active tape. Reductions accumulate in double before the
// float store.
#pragma once

#include <cstddef>
#include <vector>

#include "dvit/tensor.hpp"

namespace dvit {

// Elementwise, identical shapes. No broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Scalar times tensor (the only sanctioned broadcast).
Tensor scale(const Tensor& a, float s);

// [p x q] . [q x r] -> [p x r].
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);  // rank-2 only

// Same element count, new shape; data order preserved.
Tensor reshape(const Tensor& a, Shape shape);

// Contiguous range along one axis: shape[axis] -> len.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len);

// All parts agree on every dim except `axis`.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// mat [n x d] plus vec [d] added to every row.
Tensor add_rowwise(const Tensor& mat, const Tensor& vec);

Tensor gelu(const Tensor& x);  // exact erf form

// Rank-2 x [n x d], normalized per row; gamma/beta [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  float eps = 1e-5f);

// Max-subtracted, slice-wise along `axis`. Non-finite input is an error.
Tensor softmax(const Tensor& x, std::size_t axis);

// Reduces `axis` away (rank drops by one; scalar when rank-1 input).
Tensor mean(const Tensor& x, std::size_t axis);

Tensor sum(const Tensor& x);                     // all elements -> scalar
Tensor dot(const Tensor& a, const Tensor& b);    // rank-1 pair -> scalar
Tensor mse(const Tensor& a, const Tensor& b);    // mean squared diff -> scalar

// Softmax cross-entropy of rank-1 logits [k] against an integer label.
Tensor cross_entropy_logits(const Tensor& logits, std::size_t label);

// [h x w x c] -> [n x p*p*c], patches row-major over the grid, pixels
// (py, px, channel) within a patch. Pure data movement.
Tensor patchify(const Tensor& image, std::size_t patch);

// Forward only, never recorded. Float-encoded indices; ties pick the
// lowest index. Output shape = input shape minus `axis`.
Tensor argmax(const Tensor& x, std::size_t axis);

}  // namespace dvit
