// SPDX-License-Identifier: Apache-2.0
//
// The training loop: batched forward/backward over the proxy task plus the
// weighted distillation term, stage-controlled trainability, loss tracing,
// checkpoint persistence and the cumulative design-ablation ladder.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dvit/config.hpp"
#include "dvit/dataset.hpp"
#include "dvit/kd.hpp"
#include "dvit/model.hpp"
#include "dvit/optim.hpp"

namespace dvit {

// Which pieces of the full method are active. Defaults give the full
// method; the ablation ladder switches them on cumulatively.
struct StepOptions {
  bool use_adapter = true;    // learned adapters vs plain interpolation
  bool use_mole = true;       // MoLE-augmented student FFN
  bool use_token_w = true;    // class-attention token weights (+1/n floor)
  bool use_teacher_w = true;  // fixed-reference teacher weights vs uniform
};

struct BatchLosses {
  Tensor text, kd, total;  // batch means, scalar
  std::vector<std::uint64_t> expert_usage;
};

struct StepReport {
  float l_text = 0.0f, l_kd = 0.0f, l_total = 0.0f;
  std::vector<std::uint64_t> expert_usage;
  std::vector<std::pair<std::string, double>> grad_norms;  // per group L2
};

struct RunSummary {
  float l_text = 0.0f, l_kd = 0.0f, l_total = 0.0f;  // batch-0 eval, post-run
  double accuracy = 0.0;                             // held-out stream
  std::uint32_t final_step = 0;
  std::string trace_path, checkpoint_path;
};

// Batch forward under the ambient tape (if any). Losses are means over the
// batch; expert usage sums over every image and block.
BatchLosses batch_losses(const Model& m, const SyntheticDataset& data,
                         const std::vector<std::size_t>& indices,
                         const KDConfig& kd, const StepOptions& opts);

// One optimizer step: forward, finiteness check, backward, update. Throws
// NumericError naming the first non-finite loss tensor.
StepReport train_step(const Model& m, const SyntheticDataset& data,
                      const std::vector<std::size_t>& indices, const KDConfig& kd,
                      Optimizer& opt, const StepOptions& opts);

// Indices of batch `step`: (step * batch + j) % count, so a resumed run
// consumes exactly the batches the uninterrupted run would.
std::vector<std::size_t> batch_indices(std::uint64_t step, std::size_t batch,
                                       std::size_t count);

// Fraction of correctly classified images over a dataset.
double evaluate_accuracy(const Model& m, const SyntheticDataset& data,
                         bool use_mole = true);

// Full schedule: build (or resume), train cfg.steps steps, write the trace
// CSV and checkpoint, evaluate. resume_path may be empty.
RunSummary run(const TrainConfig& cfg, const std::string& resume_path = "");

struct AblationRow {
  std::string variant;
  float final_l_kd = 0.0f;
  double accuracy = 0.0;
};

// Cumulative ladder re-trained from the same seed per variant; `upto` caps
// how many of the five variants run.
std::vector<AblationRow> run_ablation(const TrainConfig& cfg, std::size_t upto = 5);

// The five ladder variants in order, and the options each one uses.
extern const char* const kAblationVariants[5];
StepOptions ablation_options(std::size_t variant);

}  // namespace dvit
