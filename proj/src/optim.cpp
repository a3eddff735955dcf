// SPDX-License-Identifier: Apache-2.0
#include "dvit/optim.hpp"

#include <cmath>

#include "dvit/errors.hpp"

namespace dvit {

Optimizer::Optimizer(OptimizerConfig cfg,
                     std::vector<std::pair<std::string, Tensor>> params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  if (cfg_.kind != "adam" && cfg_.kind != "sgd")
    throw ConfigError("optimizer must be adam or sgd, got '" + cfg_.kind + "'");
  if (!(cfg_.lr > 0.0f) || !std::isfinite(cfg_.lr))
    throw ConfigError("optimizer: learning rate must be positive and finite");
  if (cfg_.kind == "adam") {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& [name, p] : params_) {
      (void)name;
      m_.emplace_back(p.numel(), 0.0f);
      v_.emplace_back(p.numel(), 0.0f);
    }
  }
}

void Optimizer::step() {
  ++t_;
  const float lr = cfg_.lr;
  if (cfg_.kind == "sgd") {
    for (auto& [name, p] : params_) {
      (void)name;
      if (!p.has_grad()) continue;
      const std::vector<float>& g = p.grad();
      float* x = p.data();
      for (std::size_t i = 0; i < g.size(); ++i) x[i] -= lr * g[i];
      p.clear_grad();
    }
    return;
  }

  // Bias corrections depend only on t, shared by every parameter.
  const double c1 = 1.0 - std::pow(double(cfg_.beta1), double(t_));
  const double c2 = 1.0 - std::pow(double(cfg_.beta2), double(t_));
  const float b1 = cfg_.beta1, b2 = cfg_.beta2;
  static const std::vector<float> kNoGrad;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].second;
    const bool has = p.has_grad();
    const std::vector<float>& g = has ? p.grad() : kNoGrad;
    float* x = p.data();
    std::vector<float>& m = m_[k];
    std::vector<float>& v = v_[k];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const float gi = has ? g[i] : 0.0f;
      m[i] = b1 * m[i] + (1.0f - b1) * gi;
      v[i] = b2 * v[i] + (1.0f - b2) * gi * gi;
      const float mhat = float(double(m[i]) / c1);
      const float vhat = float(double(v[i]) / c2);
      x[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
    if (has) p.clear_grad();
  }
}

std::vector<std::pair<std::string, Tensor>> Optimizer::state_entries() const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (cfg_.kind != "adam") return out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const std::string& name = params_[k].first;
    Tensor m(params_[k].second.shape(), m_[k]);
    Tensor v(params_[k].second.shape(), v_[k]);
    out.emplace_back("optim." + name + ".m", std::move(m));
    out.emplace_back("optim." + name + ".v", std::move(v));
  }
  return out;
}

void Optimizer::load_state(const std::map<std::string, Tensor>& entries) {
  if (cfg_.kind != "adam") return;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    const std::string base = "optim." + params_[k].first;
    auto im = entries.find(base + ".m");
    if (im != entries.end() && im->second.numel() == m_[k].size())
      m_[k] = im->second.vec();
    auto iv = entries.find(base + ".v");
    if (iv != entries.end() && iv->second.numel() == v_[k].size())
      v_[k] = iv->second.vec();
  }
}

}  // namespace dvit
