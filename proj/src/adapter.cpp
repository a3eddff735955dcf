// SPDX-License-Identifier: Apache-2.0
#include "dvit/adapter.hpp"

#include <cmath>

#include "dvit/ops.hpp"
#include "dvit/tape.hpp"

namespace dvit {

namespace {

// One output token's bilinear source: four corner rows and the two lerp
// fractions. Corner indices stay valid at grid edges (weights vanish there).
struct Sample {
  std::size_t r00, r01, r10, r11;
  double fy, fx;
};

std::vector<Sample> make_samples(std::size_t g_t, std::size_t g_s) {
  std::vector<Sample> out;
  out.reserve(g_s * g_s);
  auto src_of = [&](std::size_t o) {
    return g_s == 1 ? 0.5 * double(g_t - 1)
                    : double(o) * double(g_t - 1) / double(g_s - 1);
  };
  for (std::size_t oy = 0; oy < g_s; ++oy)
    for (std::size_t ox = 0; ox < g_s; ++ox) {
      const double sy = src_of(oy), sx = src_of(ox);
      auto y0 = static_cast<std::size_t>(sy);
      auto x0 = static_cast<std::size_t>(sx);
      if (y0 >= g_t - 1) y0 = g_t - 1;
      if (x0 >= g_t - 1) x0 = g_t - 1;
      const std::size_t y1 = std::min(y0 + 1, g_t - 1);
      const std::size_t x1 = std::min(x0 + 1, g_t - 1);
      Sample s;
      s.fy = sy - double(y0);
      s.fx = sx - double(x0);
      s.r00 = y0 * g_t + x0;
      s.r01 = y0 * g_t + x1;
      s.r10 = y1 * g_t + x0;
      s.r11 = y1 * g_t + x1;
      out.push_back(s);
    }
  return out;
}

const std::vector<double>& hi_of(const Tensor& t, std::vector<double>& scratch) {
  const auto& st = t.storage();
  if (!st.shadow.empty()) return st.shadow;
  scratch.assign(st.data.begin(), st.data.end());
  return scratch;
}

}  // namespace

Tensor align_grid(const Tensor& tokens, std::size_t g_t, std::size_t g_s) {
  if (tokens.ndim() != 2)
    throw ShapeError("align_grid: expected rank 2 tokens, got " +
                     shape_str(tokens.shape()));
  if (g_t == 0 || g_s == 0)
    throw ContractError("align_grid: grid sizes must be positive");
  if (tokens.dim(0) != g_t * g_t)
    throw ContractError("align_grid: " + std::to_string(tokens.dim(0)) +
                        " tokens do not form a " + std::to_string(g_t) + "x" +
                        std::to_string(g_t) + " grid");
  const std::size_t d = tokens.dim(1);
  const auto samples = make_samples(g_t, g_s);
  Tensor out(Shape{g_s * g_s, d});
  {
    const float* pt = tokens.data();
    float* po = out.data();
    std::vector<double> st_, so(out.numel());
    const auto& ht = hi_of(tokens, st_);
    for (std::size_t o = 0; o < samples.size(); ++o) {
      const Sample& s = samples[o];
      const float fy = static_cast<float>(s.fy), fx = static_cast<float>(s.fx);
      for (std::size_t j = 0; j < d; ++j) {
        // Lerp form: exact copies at integer landings, constants preserved.
        const float a00 = pt[s.r00 * d + j], a01 = pt[s.r01 * d + j];
        const float a10 = pt[s.r10 * d + j], a11 = pt[s.r11 * d + j];
        const float v0 = a00 + fx * (a01 - a00);
        const float v1 = a10 + fx * (a11 - a10);
        po[o * d + j] = v0 + fy * (v1 - v0);
        const double h00 = ht[s.r00 * d + j], h01 = ht[s.r01 * d + j];
        const double h10 = ht[s.r10 * d + j], h11 = ht[s.r11 * d + j];
        const double hv0 = h00 + s.fx * (h01 - h00);
        const double hv1 = h10 + s.fx * (h11 - h10);
        so[o * d + j] = hv0 + s.fy * (hv1 - hv0);
      }
    }
    out.storage().shadow = std::move(so);
  }

  if (Tape* t = Tape::active(); t && t->flows(tokens)) {
    const auto it = t->node_of(tokens), io = t->node_of(out);
    t->record("align_grid", {it}, io, [=](AdjointView& adj) {
      const auto& dy = *adj.of(io);
      auto& dt = adj.into(it);
      for (std::size_t o = 0; o < samples.size(); ++o) {
        const Sample& s = samples[o];
        const double w00 = (1.0 - s.fy) * (1.0 - s.fx);
        const double w01 = (1.0 - s.fy) * s.fx;
        const double w10 = s.fy * (1.0 - s.fx);
        const double w11 = s.fy * s.fx;
        for (std::size_t j = 0; j < d; ++j) {
          const double g = dy[o * d + j];
          dt[s.r00 * d + j] += static_cast<float>(w00 * g);
          dt[s.r01 * d + j] += static_cast<float>(w01 * g);
          dt[s.r10 * d + j] += static_cast<float>(w10 * g);
          dt[s.r11 * d + j] += static_cast<float>(w11 * g);
        }
      }
    });
  }
  return out;
}

AdapterParams make_adapter(std::size_t d_t, std::size_t d_s, std::size_t g_t,
                           std::size_t g_s, std::mt19937& rng, std::size_t hidden) {
  if (d_t == 0 || d_s == 0 || g_t == 0 || g_s == 0)
    throw ConfigError("adapter: dims and grids must be positive");
  const std::size_t dmax = std::max(d_t, d_s);
  if (hidden == 0) hidden = dmax;
  if (hidden < (dmax + 1) / 2)
    throw ConfigError("adapter: hidden width " + std::to_string(hidden) +
                      " below floor " + std::to_string((dmax + 1) / 2));
  constexpr float kStd = 0.02f;
  AdapterParams p;
  p.w1 = Tensor::randn({d_t, hidden}, rng, kStd);
  p.b1 = Tensor::zeros({hidden});
  p.w2 = Tensor::randn({hidden, d_s}, rng, kStd);
  p.b2 = Tensor::zeros({d_s});
  p.source_grid = g_t;
  p.target_grid = g_s;
  return p;
}

Tensor adapt(const AdapterParams& params, const Tensor& tokens) {
  if (tokens.ndim() != 2 || tokens.dim(1) != params.w1.dim(0))
    throw ConfigError("adapt: tokens " + shape_str(tokens.shape()) +
                      " do not match adapter input dim " +
                      std::to_string(params.w1.dim(0)));
  if (params.w1.dim(1) != params.b1.dim(0) ||
      params.w1.dim(1) != params.w2.dim(0) ||
      params.w2.dim(1) != params.b2.dim(0))
    throw ConfigError("adapt: inconsistent adapter parameter shapes " +
                      shape_str(params.w1.shape()) + ", " +
                      shape_str(params.w2.shape()));
  Tensor aligned = align_grid(tokens, params.source_grid, params.target_grid);
  Tensor h = gelu(add_rowwise(matmul(aligned, params.w1), params.b1));
  return add_rowwise(matmul(h, params.w2), params.b2);
}

std::vector<std::pair<std::string, Tensor>> named_adapter_params(
    const std::string& prefix, const AdapterParams& p) {
  return {{prefix + ".w1", p.w1},
          {prefix + ".b1", p.b1},
          {prefix + ".w2", p.w2},
          {prefix + ".b2", p.b2}};
}

}  // namespace dvit
