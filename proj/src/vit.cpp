// SPDX-License-Identifier: Apache-2.0
#include "dvit/vit.hpp"

#include <cmath>

#include "dvit/ops.hpp"
#include "dvit/tape.hpp"

namespace dvit {

void EncoderConfig::validate() const {
  if (patch_size == 0 || image_size % patch_size != 0)
    throw ConfigError("encoder: patch size " + std::to_string(patch_size) +
                      " does not tile image size " + std::to_string(image_size));
  if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0)
    throw ConfigError("encoder: embed dim " + std::to_string(embed_dim) +
                      " not divisible by heads " + std::to_string(num_heads));
  if (depth == 0) throw ConfigError("encoder: depth must be >= 1");
  if (ffn_hidden == 0) throw ConfigError("encoder: ffn hidden must be >= 1");
  if (channels == 0) throw ConfigError("encoder: channels must be >= 1");
}

EncoderParams init_encoder(const EncoderConfig& cfg, std::mt19937& rng) {
  cfg.validate();
  constexpr float kStd = 0.02f;
  EncoderParams p;
  p.patch_w = Tensor::randn({cfg.patch_dim(), cfg.embed_dim}, rng, kStd);
  p.patch_b = Tensor::zeros({cfg.embed_dim});
  if (cfg.has_cls) p.cls = Tensor::randn({cfg.embed_dim}, rng, kStd);
  p.pos = Tensor::randn({cfg.seq_len(), cfg.embed_dim}, rng, kStd);
  for (std::size_t b = 0; b < cfg.depth; ++b) {
    BlockParams blk;
    blk.ln1_g = Tensor::full({cfg.embed_dim}, 1.0f);
    blk.ln1_b = Tensor::zeros({cfg.embed_dim});
    blk.wq = Tensor::randn({cfg.embed_dim, cfg.embed_dim}, rng, kStd);
    blk.wk = Tensor::randn({cfg.embed_dim, cfg.embed_dim}, rng, kStd);
    blk.wv = Tensor::randn({cfg.embed_dim, cfg.embed_dim}, rng, kStd);
    blk.wo = Tensor::randn({cfg.embed_dim, cfg.embed_dim}, rng, kStd);
    blk.ln2_g = Tensor::full({cfg.embed_dim}, 1.0f);
    blk.ln2_b = Tensor::zeros({cfg.embed_dim});
    blk.ffn_w1 = Tensor::randn({cfg.embed_dim, cfg.ffn_hidden}, rng, kStd);
    blk.ffn_b1 = Tensor::zeros({cfg.ffn_hidden});
    blk.ffn_w2 = Tensor::randn({cfg.ffn_hidden, cfg.embed_dim}, rng, kStd);
    blk.ffn_b2 = Tensor::zeros({cfg.embed_dim});
    p.blocks.push_back(std::move(blk));
  }
  p.final_ln_g = Tensor::full({cfg.embed_dim}, 1.0f);
  p.final_ln_b = Tensor::zeros({cfg.embed_dim});
  return p;
}

EncoderOutput encode(const EncoderConfig& cfg, const EncoderParams& params,
                     const Tensor& image, const std::vector<MoLELayer>* mole,
                     std::vector<std::uint64_t>* usage) {
  cfg.validate();
  if (image.shape() != Shape{cfg.image_size, cfg.image_size, cfg.channels})
    throw ShapeError("encode: image " + shape_str(image.shape()) + " vs config " +
                     shape_str({cfg.image_size, cfg.image_size, cfg.channels}));
  if (mole && mole->size() != cfg.depth)
    throw ContractError("encode: mole stack has " + std::to_string(mole->size()) +
                        " layers for depth " + std::to_string(cfg.depth));

  const std::size_t n = cfg.tokens(), d = cfg.embed_dim;
  const std::size_t heads = cfg.num_heads, dh = cfg.head_dim();
  const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));

  Tensor x = add_rowwise(matmul(patchify(image, cfg.patch_size), params.patch_w),
                         params.patch_b);
  if (cfg.has_cls) x = concat({reshape(params.cls, {1, d}), x}, 0);
  x = add(x, params.pos);

  const std::size_t seq = cfg.seq_len();
  Tensor final_scores;  // head-mean class-to-token scores of the last block

  for (std::size_t b = 0; b < cfg.depth; ++b) {
    const BlockParams& blk = params.blocks[b];
    Tensor h = layer_norm(x, blk.ln1_g, blk.ln1_b);
    Tensor q = matmul(h, blk.wq);
    Tensor k = matmul(h, blk.wk);
    Tensor v = matmul(h, blk.wv);

    std::vector<Tensor> ctx_heads;
    const bool capture = cfg.has_cls && b + 1 == cfg.depth;
    std::vector<double> score_acc(capture ? n : 0, 0.0);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Tensor qh = slice(q, 1, hd * dh, dh);
      Tensor kh = slice(k, 1, hd * dh, dh);
      Tensor vh = slice(v, 1, hd * dh, dh);
      Tensor scores = scale(matmul(qh, transpose(kh)), att_scale);
      if (capture)  // row 0 is the class query; columns 1.. are token keys
        for (std::size_t j = 0; j < n; ++j) score_acc[j] += scores.at2(0, j + 1);
      Tensor attn = softmax(scores, 1);
      ctx_heads.push_back(matmul(attn, vh));
    }
    if (capture) {
      final_scores = Tensor({n});
      for (std::size_t j = 0; j < n; ++j)
        final_scores.data()[j] = static_cast<float>(score_acc[j] / heads);
    }

    Tensor ctx = concat(ctx_heads, 1);
    x = add(x, matmul(ctx, blk.wo));

    Tensor h2 = layer_norm(x, blk.ln2_g, blk.ln2_b);
    Tensor f = add_rowwise(matmul(gelu(add_rowwise(matmul(h2, blk.ffn_w1), blk.ffn_b1)),
                                  blk.ffn_w2),
                           blk.ffn_b2);
    if (mole) f = mole_forward((*mole)[b], f, h2, usage);
    x = add(x, f);
  }

  x = layer_norm(x, params.final_ln_g, params.final_ln_b);

  EncoderOutput out;
  if (cfg.has_cls) {
    out.cls = reshape(slice(x, 0, 0, 1), {d});
    out.tokens = slice(x, 0, 1, seq - 1);
    out.cls_attention_scores = final_scores;
  } else {
    out.tokens = x;
  }
  return out;
}

Tensor cls_attention_map(const EncoderOutput& out) {
  if (!out.cls_attention_scores.defined())
    throw ContractError("cls_attention_map: encoder has no class token");
  const std::size_t n = out.cls_attention_scores.numel();
  const auto g = static_cast<std::size_t>(std::lround(std::sqrt(double(n))));
  if (g * g != n)
    throw ContractError("cls_attention_map: " + std::to_string(n) +
                        " scores are not a square grid");
  NoGradGuard guard;
  return reshape(softmax(out.cls_attention_scores, 0), {g, g});
}

std::vector<std::pair<std::string, Tensor>> named_encoder_params(
    const std::string& prefix, const EncoderParams& p) {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back(prefix + ".patch_w", p.patch_w);
  out.emplace_back(prefix + ".patch_b", p.patch_b);
  if (p.cls.defined()) out.emplace_back(prefix + ".cls", p.cls);
  out.emplace_back(prefix + ".pos", p.pos);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const std::string bp = prefix + ".block" + std::to_string(b);
    const BlockParams& blk = p.blocks[b];
    out.emplace_back(bp + ".ln1_g", blk.ln1_g);
    out.emplace_back(bp + ".ln1_b", blk.ln1_b);
    out.emplace_back(bp + ".wq", blk.wq);
    out.emplace_back(bp + ".wk", blk.wk);
    out.emplace_back(bp + ".wv", blk.wv);
    out.emplace_back(bp + ".wo", blk.wo);
    out.emplace_back(bp + ".ln2_g", blk.ln2_g);
    out.emplace_back(bp + ".ln2_b", blk.ln2_b);
    out.emplace_back(bp + ".ffn_w1", blk.ffn_w1);
    out.emplace_back(bp + ".ffn_b1", blk.ffn_b1);
    out.emplace_back(bp + ".ffn_w2", blk.ffn_w2);
    out.emplace_back(bp + ".ffn_b2", blk.ffn_b2);
  }
  out.emplace_back(prefix + ".final_ln_g", p.final_ln_g);
  out.emplace_back(prefix + ".final_ln_b", p.final_ln_b);
  return out;
}

}  // namespace dvit
