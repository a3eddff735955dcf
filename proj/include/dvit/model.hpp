// SPDX-License-Identifier: Apache-2.0
//
// The full distillation bundle: one student encoder with a MoLE stack, the
// frozen teacher encoders with their trainable adapters, and a linear proxy
// head over mean-pooled student tokens.
#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dvit/adapter.hpp"
#include "dvit/config.hpp"
#include "dvit/mole.hpp"
#include "dvit/vit.hpp"

namespace dvit {

struct TeacherBundle {
  EncoderConfig cfg;
  EncoderParams params;
  AdapterParams adapter;
  bool is_clip = false;
};

struct Model {
  EncoderConfig student_cfg;
  EncoderParams student;
  std::vector<MoLELayer> mole;  // one layer per student block
  std::vector<TeacherBundle> teachers;
  Tensor head_w, head_b;  // [d x classes], [classes]
  std::size_t classes = 0;
  std::size_t clip_index = 0;
};

// Deterministic in rng; draws in the fixed order student, MoLE stack,
// teacher params + adapter per teacher, head.
Model build_model(const TrainConfig& cfg, std::mt19937& rng);

// Every parameter under a stable dotted name, in a fixed global order:
// student.*, mole.block{i}.*, teacher{i}.*, adapter{i}.*, head.*.
std::vector<std::pair<std::string, Tensor>> named_model_params(const Model& m);

// MoLE stack names only, used by both the model traversal and param counts.
std::vector<std::pair<std::string, Tensor>> named_mole_params(
    const std::string& prefix, const std::vector<MoLELayer>& stack);

// Parameter names updated in the given stage. Pretrain: MoLE, adapters and
// the head; finetune: everything except the teachers. Teachers never appear.
std::vector<std::string> trainable_set(const std::string& stage, const Model& m);

}  // namespace dvit
