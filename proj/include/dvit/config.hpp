// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat `key = value` text format with dotted keys and
// `#` comments. Unknown keys are rejected with their line number so typos
// cannot silently fall back to defaults.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dvit/dataset.hpp"
#include "dvit/mole.hpp"
#include "dvit/vit.hpp"

namespace dvit {

struct TeacherSpec {
  EncoderConfig encoder;
  bool is_clip = false;  // exactly one teacher carries the reference flag
};

struct TrainConfig {
  std::string stage = "finetune";  // pretrain | finetune
  std::size_t steps = 200;
  std::size_t batch_size = 16;
  float learning_rate = 0.0f;  // 0 selects the stage default
  std::string optimizer = "adam";  // adam | sgd
  std::uint32_t seed = 1;

  float lambda_kd = 0.5f;
  float clip_fixed_weight = 0.8f;

  EncoderConfig student;
  std::vector<TeacherSpec> teachers;
  MoLEConfig mole;

  // Proxy task data.
  std::size_t classes = 4;
  std::size_t dataset_size = 256;
  float noise = 0.05f;

  std::string trace_path = "trace.csv";
  std::string checkpoint_path = "checkpoint.mvkd";

  void validate() const;
  std::size_t clip_index() const;  // index of the flagged teacher
  float effective_lr() const;      // stage default when learning_rate is 0
  DatasetConfig train_data() const;
  DatasetConfig eval_data() const;  // offset seed, 128 images
};

// Parses the text form. Errors carry 1-based line numbers.
TrainConfig parse_config_text(const std::string& text);

// Reads and parses a file; unreadable path -> IoError with the path.
TrainConfig load_config(const std::string& path);

// Full canonical text: every key, fixed order, default-independent. Parsing
// it back yields an equivalent config.
std::string canonical_config(const TrainConfig& cfg);

// FNV-1a over the architecture and seed only: model shapes, teacher list,
// MoLE size and data stream. Schedule knobs (steps, learning rate, lambda,
// batch size, optimizer, stage) and paths are excluded so a resumed run may
// change them without being treated as a different model.
std::uint64_t config_fingerprint(const TrainConfig& cfg);

}  // namespace dvit
