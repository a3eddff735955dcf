// SPDX-License-Identifier: Apache-2.0
//
// Per-teacher adapters: resample the teacher's token grid onto the student's
// grid, then map channels with a two-layer MLP. The resampling is a fixed
// linear map; only the MLP carries parameters.
#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dvit/tensor.hpp"

namespace dvit {

struct AdapterParams {
  Tensor w1, b1;  // [d_t x h], [h]
  Tensor w2, b2;  // [h x d_s], [d_s]
  std::size_t source_grid = 0;  // g_t
  std::size_t target_grid = 0;  // g_s
};

// Bilinear resampling of a g_t x g_t token grid to g_s x g_s, channelwise,
// with corner-aligned sample positions. Exact identity when the grids match;
// constant grids stay constant to the bit. Differentiable in `tokens`.
Tensor align_grid(const Tensor& tokens, std::size_t g_t, std::size_t g_s);

// hidden == 0 picks the default width max(d_t, d_s). The width floor is
// max(d_t, d_s) / 2; anything lower is a config error.
AdapterParams make_adapter(std::size_t d_t, std::size_t d_s, std::size_t g_t,
                           std::size_t g_s, std::mt19937& rng,
                           std::size_t hidden = 0);

// gelu(align_grid(tokens) . w1 + b1) . w2 + b2, shape [g_s^2 x d_s].
Tensor adapt(const AdapterParams& params, const Tensor& tokens);

std::vector<std::pair<std::string, Tensor>> named_adapter_params(
    const std::string& prefix, const AdapterParams& p);

}  // namespace dvit
