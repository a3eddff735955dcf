// SPDX-License-Identifier: Apache-2.0
#include "dvit/kd.hpp"

#include <algorithm>
#include <cmath>

#include "dvit/ops.hpp"
#include "dvit/tape.hpp"

namespace dvit {

void KDConfig::validate() const {
  if (!(clip_fixed_weight > 0.0f && clip_fixed_weight < 1.0f))
    throw ConfigError("kd: fixed reference weight " +
                      std::to_string(clip_fixed_weight) + " outside (0, 1)");
  if (!(lambda_kd >= 0.0f) || !std::isfinite(lambda_kd))
    throw ConfigError("kd: lambda must be finite and >= 0");
}

Tensor token_weight_scores(const Tensor& cls, const Tensor& res, const Tensor& wq,
                           const Tensor& wk) {
  if (cls.ndim() != 1)
    throw ShapeError("token weights: cls " + shape_str(cls.shape()) + " not rank 1");
  const std::size_t d = cls.dim(0), n = res.dim(0);
  NoGradGuard guard;
  Tensor q = matmul(reshape(cls, {1, d}), wq);
  Tensor k = matmul(res, wk);
  Tensor scores = scale(matmul(q, transpose(k)), 1.0f / std::sqrt(float(d)));
  return reshape(scores, {n});
}

Tensor token_weights(const Tensor& cls, const Tensor& res, const Tensor& wq,
                     const Tensor& wk) {
  NoGradGuard guard;
  return softmax(token_weight_scores(cls, res, wq, wk), 0);
}

Tensor teacher_scores(const Tensor& cls, const std::vector<Tensor>& teacher_tokens,
                      std::size_t scale_dim) {
  if (teacher_tokens.empty()) throw ContractError("teacher scores: no teachers");
  if (cls.ndim() != 1)
    throw ShapeError("teacher scores: cls " + shape_str(cls.shape()) + " not rank 1");
  const std::size_t d = scale_dim ? scale_dim : cls.dim(0);
  const float inv = 1.0f / std::sqrt(float(d));
  NoGradGuard guard;
  Tensor out({teacher_tokens.size()});
  float* po = out.data();
  for (std::size_t i = 0; i < teacher_tokens.size(); ++i) {
    const Tensor& toks = teacher_tokens[i];
    if (toks.ndim() != 2 || toks.dim(1) != cls.dim(0))
      throw ShapeError("teacher scores: teacher " + std::to_string(i) + " tokens " +
                       shape_str(toks.shape()) + " vs cls " + shape_str(cls.shape()));
    Tensor per_tok = scale(matmul(toks, reshape(cls, {cls.dim(0), 1})), inv);
    po[i] = mean(per_tok, 0).item();
  }
  return out;
}

Tensor teacher_weights(const Tensor& cls, const std::vector<Tensor>& teacher_tokens,
                       const KDConfig& cfg) {
  cfg.validate();
  const std::size_t m = teacher_tokens.size();
  if (m < 2)
    throw ConfigError("teacher weights: need at least 2 teachers for the fixed-share "
                      "split; single-teacher runs use weight 1 directly");
  if (cfg.clip_index >= m)
    throw ContractError("teacher weights: reference index " +
                        std::to_string(cfg.clip_index) + " out of range for " +
                        std::to_string(m) + " teachers");
  Tensor scores = teacher_scores(cls, teacher_tokens, cfg.scale_dim);

  // Softmax over the non-reference scores only, in double.
  double mx = -1e300;
  for (std::size_t i = 0; i < m; ++i)
    if (i != cfg.clip_index) mx = std::max(mx, double(scores.at(i)));
  double denom = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (i != cfg.clip_index) denom += std::exp(double(scores.at(i)) - mx);

  Tensor out({m});
  float* po = out.data();
  const double residual = 1.0 - double(cfg.clip_fixed_weight);
  for (std::size_t i = 0; i < m; ++i)
    po[i] = i == cfg.clip_index
                ? cfg.clip_fixed_weight
                : static_cast<float>(residual * std::exp(double(scores.at(i)) - mx) /
                                     denom);
  return out;
}

Tensor kd_loss(const Tensor& student_tokens, const std::vector<Tensor>& teacher_tokens,
               const KDWeights& w) {
  if (teacher_tokens.empty()) throw ContractError("kd loss: no teachers");
  if (student_tokens.ndim() != 2)
    throw ShapeError("kd loss: student tokens " + shape_str(student_tokens.shape()) +
                     " not rank 2");
  const std::size_t n = student_tokens.dim(0);
  if (!w.teacher_w.defined() || w.teacher_w.numel() != teacher_tokens.size())
    throw ContractError("kd loss: " + std::to_string(teacher_tokens.size()) +
                        " teachers vs " +
                        std::to_string(w.teacher_w.defined() ? w.teacher_w.numel() : 0) +
                        " teacher weights");
  if (!w.token_w.defined() || w.token_w.numel() != n)
    throw ContractError("kd loss: token weights sized " +
                        std::to_string(w.token_w.defined() ? w.token_w.numel() : 0) +
                        " for " + std::to_string(n) + " tokens");

  // Fixed supervision: token_w + 1/n, assembled outside any tape.
  Tensor tw_plus;
  {
    NoGradGuard guard;
    tw_plus = add(w.token_w, Tensor::full({n}, 1.0f / float(n)));
  }

  Tensor total;
  const float* twt = w.teacher_w.data();
  for (std::size_t i = 0; i < teacher_tokens.size(); ++i) {
    const Tensor& tt = teacher_tokens[i];
    if (tt.shape() != student_tokens.shape())
      throw ShapeError("kd loss: teacher " + std::to_string(i) + " tokens " +
                       shape_str(tt.shape()) + " vs student " +
                       shape_str(student_tokens.shape()));
    Tensor diff = sub(student_tokens, tt);
    Tensor per_token = mean(mul(diff, diff), 1);  // [n]
    Tensor term = scale(dot(tw_plus, per_token), twt[i]);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

Tensor total_loss(const Tensor& text_loss, const Tensor& kd, const KDConfig& cfg) {
  cfg.validate();
  if (text_loss.numel() != 1 || kd.numel() != 1)
    throw ContractError("total loss: both terms must be scalars");
  return add(text_loss, scale(kd, cfg.lambda_kd));
}

}  // namespace dvit
