// SPDX-License-Identifier: Apache-2.0
//
// In-place gradient-descent updates over a fixed, named parameter list.
// Adam keeps first/second moment buffers per parameter plus one shared step
// counter; SGD is stateless. Parameters missing a gradient after backward
// are treated as having a zero gradient.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dvit/tensor.hpp"

namespace dvit {

struct OptimizerConfig {
  std::string kind = "adam";  // adam | sgd
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

class Optimizer {
 public:
  // `params` are (name, tensor) pairs updated in the given order. Tensors
  // share storage with the model, so updates land in place.
  Optimizer(OptimizerConfig cfg, std::vector<std::pair<std::string, Tensor>> params);

  // Applies one update from the parameters' current gradients, then clears
  // those gradients. Increments the step counter.
  void step();

  std::uint64_t step_count() const { return t_; }
  void set_step_count(std::uint64_t t) { t_ = t; }

  // Moment buffers as checkpoint entries ("optim.<param>.m" / ".v"); empty
  // for SGD. load_state copies matching entries and ignores the rest.
  std::vector<std::pair<std::string, Tensor>> state_entries() const;
  void load_state(const std::map<std::string, Tensor>& entries);

  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<float>> m_, v_;  // adam moments, parallel to params_
  std::uint64_t t_ = 0;
};

}  // namespace dvit
