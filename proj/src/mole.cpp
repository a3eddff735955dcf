// SPDX-License-Identifier: Apache-2.0
#include "dvit/mole.hpp"

#include "dvit/ops.hpp"
#include "dvit/tape.hpp"

namespace dvit {

MoLELayer make_mole_layer(std::size_t d, const MoLEConfig& cfg, std::mt19937& rng) {
  if (cfg.experts == 0) throw ConfigError("mole: expert count must be >= 1");
  if (cfg.rank == 0 || cfg.rank >= d)
    throw ConfigError("mole: rank " + std::to_string(cfg.rank) +
                      " must satisfy 1 <= rank < d = " + std::to_string(d));
  MoLELayer layer;
  layer.router.weight = Tensor::randn({d, cfg.experts}, rng, 0.02f);
  layer.router.weight.set_requires_grad(true);
  layer.router.bias = Tensor::zeros({cfg.experts});
  layer.router.bias.set_requires_grad(true);
  for (std::size_t e = 0; e < cfg.experts; ++e) {
    LoRAExpert ex;
    ex.down = Tensor::randn({d, cfg.rank}, rng, 0.02f);
    ex.down.set_requires_grad(true);
    ex.up = Tensor::zeros({cfg.rank, d});  // exact identity at init
    ex.up.set_requires_grad(true);
    layer.experts.push_back(std::move(ex));
  }
  return layer;
}

Tensor route(const RouterParams& router, const Tensor& x) {
  NoGradGuard guard;  // selection never joins the graph
  Tensor logits = add_rowwise(matmul(x, router.weight), router.bias);
  return argmax(logits, 1);
}

Tensor mole_forward(const MoLELayer& layer, const Tensor& ffn_out,
                    const Tensor& ffn_in, std::vector<std::uint64_t>* usage) {
  if (layer.experts.empty()) throw ConfigError("mole_forward: no experts");
  if (ffn_out.shape() != ffn_in.shape())
    throw ShapeError("mole_forward: ffn_out " + shape_str(ffn_out.shape()) +
                     " vs ffn_in " + shape_str(ffn_in.shape()));
  const std::size_t n = ffn_in.dim(0), d = ffn_in.dim(1);
  const std::size_t e_count = layer.experts.size();
  if (usage && usage->size() != e_count)
    throw ContractError("mole_forward: usage counter size mismatch");

  Tensor ids = route(layer.router, ffn_in);
  // Per-expert 0/1 row masks; multiplication by a constant mask keeps
  // gradients local to the experts that actually received tokens.
  Tensor out = ffn_out;
  for (std::size_t e = 0; e < e_count; ++e) {
    std::uint64_t hits = 0;
    Tensor mask = Tensor::zeros({n, d});
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<std::size_t>(ids.at(i)) == e) {
        ++hits;
        for (std::size_t j = 0; j < d; ++j) mask.data()[i * d + j] = 1.0f;
      }
    }
    if (usage) (*usage)[e] += hits;
    if (hits == 0) continue;  // zero mask contributes nothing either way
    Tensor delta = matmul(matmul(ffn_in, layer.experts[e].down), layer.experts[e].up);
    out = add(out, mul(mask, delta));
  }
  return out;
}

ParamCount mole_param_count(std::size_t depth, std::size_t d, const MoLEConfig& cfg,
                            std::uint64_t base_params) {
  if (cfg.experts == 0) throw ConfigError("mole_param_count: expert count must be >= 1");
  ParamCount pc;
  const std::uint64_t e = cfg.experts, r = cfg.rank, dd = d;
  pc.mole = std::uint64_t(depth) * (e * 2 * r * dd + dd * e + e);
  pc.total = base_params + pc.mole;
  pc.ratio = static_cast<double>(pc.mole) / static_cast<double>(pc.total);
  return pc;
}

}  // namespace dvit
