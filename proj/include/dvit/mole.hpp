// SPDX-License-Identifier: Apache-2.0
//
// Mixture of low-rank experts wrapped around an FFN: each token is routed to
// exactly one expert by a linear router, and the selected expert's low-rank
// d->r->d product is added to the FFN output. Up-projections start at zero,
// so a freshly built layer is an exact no-op.
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dvit/tensor.hpp"

namespace dvit {

struct LoRAExpert {
  Tensor down;  // [d x r]
  Tensor up;    // [r x d], zero at init
};

struct RouterParams {
  Tensor weight;  // [d x e]
  Tensor bias;    // [e]
};

struct MoLELayer {
  RouterParams router;
  std::vector<LoRAExpert> experts;

  std::size_t expert_count() const { return experts.size(); }
  std::size_t rank() const { return experts.empty() ? 0 : experts[0].down.dim(1); }
};

struct MoLEConfig {
  std::size_t experts = 3;
  std::size_t rank = 32;
};

// Fresh layer for width d: router and down-projections N(0, 0.02), biases
// and up-projections zero. r must satisfy 1 <= r < d; e >= 1.
MoLELayer make_mole_layer(std::size_t d, const MoLEConfig& cfg, std::mt19937& rng);

// Hard top-1 routing: argmax over router logits per token (softmax omitted,
// it cannot change the argmax). Ties resolve to the lowest expert index.
// Forward only; float-encoded expert ids [n].
Tensor route(const RouterParams& router, const Tensor& x);

// F*(x) = ffn_out + E_i(x) with i chosen per token by route(). The routing
// decision is non-differentiable and contributes no gradient to the router;
// selected experts receive gradients through their low-rank product.
// If `usage` is given, usage[e] grows by the number of tokens routed to e.
Tensor mole_forward(const MoLELayer& layer, const Tensor& ffn_out,
                    const Tensor& ffn_in, std::vector<std::uint64_t>* usage = nullptr);

struct ParamCount {
  std::uint64_t mole = 0;   // every router and expert tensor element
  std::uint64_t total = 0;  // student encoder params including MoLE
  double ratio = 0.0;       // mole / total
};

// Closed form: depth * (e * 2 r d + d e + e) for the MoLE share.
// base_params is the MoLE-free student parameter count.
ParamCount mole_param_count(std::size_t depth, std::size_t d, const MoLEConfig& cfg,
                            std::uint64_t base_params);

}  // namespace dvit
