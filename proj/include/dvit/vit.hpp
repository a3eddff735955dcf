// SPDX-License-Identifier: Apache-2.0
//
// Minimal pre-norm vision transformer: patchify, linear patch embedding,
// optional class token, learned positional embeddings, then depth blocks of
// multi-head attention and an FFN, each with a residual around a layer-normed
// input, and a final layer norm. The student threads a MoLE stack through its
// FFN outputs; teachers run the plain path.
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "dvit/mole.hpp"
#include "dvit/tensor.hpp"

namespace dvit {

struct EncoderConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t channels = 1;
  std::size_t depth = 2;
  std::size_t embed_dim = 64;
  std::size_t num_heads = 4;
  std::size_t ffn_hidden = 128;
  bool has_cls = true;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t seq_len() const { return tokens() + (has_cls ? 1 : 0); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t head_dim() const { return embed_dim / num_heads; }

  void validate() const;
};

struct BlockParams {
  Tensor ln1_g, ln1_b;
  Tensor wq, wk, wv, wo;  // [d x d], no attention biases
  Tensor ln2_g, ln2_b;
  Tensor ffn_w1, ffn_b1;  // [d x h], [h]
  Tensor ffn_w2, ffn_b2;  // [h x d], [d]
};

struct EncoderParams {
  Tensor patch_w, patch_b;  // [p*p*c x d], [d]
  Tensor cls;               // [d], only when has_cls
  Tensor pos;               // [seq_len x d]
  std::vector<BlockParams> blocks;
  Tensor final_ln_g, final_ln_b;
};

struct EncoderOutput {
  Tensor tokens;  // [n x d] after the final norm, class row excluded
  Tensor cls;     // [d], defined only when the encoder has a class token
  // Final-block pre-softmax scaled scores from the class query to each token
  // key, averaged over heads. Detached diagnostic values, [n].
  Tensor cls_attention_scores;
};

// Weights N(0, 0.02), biases zero, norm gains one. Deterministic in rng.
EncoderParams init_encoder(const EncoderConfig& cfg, std::mt19937& rng);

// Forward pass. `mole` may hold one layer per block to augment the FFN
// output; pass nullptr for the plain encoder. `usage` collects routed-token
// counts across blocks when given.
EncoderOutput encode(const EncoderConfig& cfg, const EncoderParams& params,
                     const Tensor& image, const std::vector<MoLELayer>* mole = nullptr,
                     std::vector<std::uint64_t>* usage = nullptr);

// Softmax of the stored class-attention scores reshaped to the patch grid.
// Entries sum to 1.
Tensor cls_attention_map(const EncoderOutput& out);

// All parameters of one encoder in a fixed traversal order, for counting,
// hashing and optimizer registration.
std::vector<std::pair<std::string, Tensor>> named_encoder_params(
    const std::string& prefix, const EncoderParams& p);

}  // namespace dvit
