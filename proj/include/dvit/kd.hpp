// SPDX-License-Identifier: Apache-2.0
//
// Attention-guided distillation terms: per-token weights from the reference
// encoder's class attention, per-teacher weights from mean class/token
// responses with a fixed share for the designated reference teacher, and the
// weighted distillation loss over aligned token sets. Weight tensors are
// detached supervision; only the loss itself carries gradients.
#pragma once

#include <cstdint>
#include <vector>

#include "dvit/tensor.hpp"

namespace dvit {

struct KDWeights {
  Tensor token_w;    // [n], positive, sums to 1
  Tensor teacher_w;  // [m], positive, sums to 1
};

struct KDConfig {
  float lambda_kd = 0.5f;        // share of the distillation term in the total
  float clip_fixed_weight = 0.8f;  // fixed share of the reference teacher
  std::size_t clip_index = 0;      // which teacher holds the fixed share
  std::size_t scale_dim = 0;       // d for the 1/sqrt(d) factor; 0 = from cls

  void validate() const;
};

// Pre-softmax scaled scores ((cls.wq) . (res.wk)^T) / sqrt(d), shape [n].
// Detached: never recorded on a tape.
Tensor token_weight_scores(const Tensor& cls, const Tensor& res, const Tensor& wq,
                           const Tensor& wk);

// Softmax of token_weight_scores, shape [n]. Detached.
Tensor token_weights(const Tensor& cls, const Tensor& res, const Tensor& wq,
                     const Tensor& wk);

// Mean over tokens of (cls . token_j) / sqrt(d) per teacher, shape [m].
// Tokens must be post-adapter (student width d). Detached.
Tensor teacher_scores(const Tensor& cls, const std::vector<Tensor>& teacher_tokens,
                      std::size_t scale_dim = 0);

// Fixed share for the reference teacher, softmax of the remaining scores over
// the residual mass for the rest. Requires m >= 2; a single-teacher setup
// bypasses this with weight [1]. Detached.
Tensor teacher_weights(const Tensor& cls, const std::vector<Tensor>& teacher_tokens,
                       const KDConfig& cfg);

// Sum over teachers i of teacher_w[i] * sum over tokens j of
// (token_w[j] + 1/n) * (channel-mean squared difference of token j).
// Recorded: gradients flow into student and teacher token arguments.
Tensor kd_loss(const Tensor& student_tokens, const std::vector<Tensor>& teacher_tokens,
               const KDWeights& w);

// text + lambda * kd, recorded.
Tensor total_loss(const Tensor& text_loss, const Tensor& kd, const KDConfig& cfg);

}  // namespace dvit
