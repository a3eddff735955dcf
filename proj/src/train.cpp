// SPDX-License-Identifier: Apache-2.0
#include "dvit/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "dvit/checkpoint.hpp"
#include "dvit/errors.hpp"
#include "dvit/ops.hpp"
#include "dvit/tape.hpp"

namespace dvit {
namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string hex16(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Plain-interpolation target: spatial grid alignment followed by linear
// interpolation across channels, producing a [n_s x d_s] constant with no
// trainable parts. This is the distillation target of the ladder's
// mse-baseline variant.
Tensor interp_target(const Tensor& tokens, std::size_t g_t, std::size_t g_s,
                     std::size_t d_s) {
  NoGradGuard guard;
  Tensor spatial = align_grid(tokens, g_t, g_s);
  const std::size_t n = spatial.dim(0), d_t = spatial.dim(1);
  Tensor out({n, d_s});
  float* po = out.data();
  for (std::size_t j = 0; j < d_s; ++j) {
    double src = d_s == 1 ? 0.5 * double(d_t - 1)
                          : double(j) * double(d_t - 1) / double(d_s - 1);
    std::size_t c0 = std::size_t(src);
    if (c0 >= d_t - 1) c0 = d_t - 1;
    const std::size_t c1 = std::min(c0 + 1, d_t - 1);
    // f == 0 at integer landings, so matching widths copy exactly.
    const float f = float(src - double(c0));
    for (std::size_t r = 0; r < n; ++r) {
      const float a = spatial.at2(r, c0), b = spatial.at2(r, c1);
      po[r * d_s + j] = a + f * (b - a);
    }
  }
  return out;
}

Tensor head_logits(const Model& m, const Tensor& student_tokens) {
  Tensor pooled = reshape(mean(student_tokens, 0), {1, m.head_w.dim(0)});
  Tensor row = add_rowwise(matmul(pooled, m.head_w), m.head_b);
  return reshape(row, {m.classes});
}

const char* group_of(const std::string& name) {
  if (name.rfind("student", 0) == 0) return "student";
  if (name.rfind("mole", 0) == 0) return "mole";
  if (name.rfind("adapter", 0) == 0) return "adapter";
  if (name.rfind("teacher", 0) == 0) return "teacher";
  return "head";
}

void apply_stage_flags(const Model& m, const std::string& stage,
                       std::vector<std::pair<std::string, Tensor>>& trainable) {
  trainable.clear();
  auto all = named_model_params(m);
  const auto names = trainable_set(stage, m);
  const std::set<std::string> tset(names.begin(), names.end());
  for (auto& [name, t] : all) {
    Tensor copy = t;
    copy.set_requires_grad(tset.count(name) > 0);
    if (tset.count(name)) trainable.emplace_back(name, copy);
  }
}

}  // namespace

const char* const kAblationVariants[5] = {"mse-baseline", "+adapter", "+mole",
                                          "+token-w", "+teacher-w"};

StepOptions ablation_options(std::size_t variant) {
  if (variant > 4) throw ContractError("ablation variant index out of range");
  StepOptions o;
  o.use_adapter = variant >= 1;
  o.use_mole = variant >= 2;
  o.use_token_w = variant >= 3;
  o.use_teacher_w = variant >= 4;
  return o;
}

std::vector<std::size_t> batch_indices(std::uint64_t step, std::size_t batch,
                                       std::size_t count) {
  if (batch == 0 || count == 0)
    throw ContractError("batch_indices: batch and count must be positive");
  std::vector<std::size_t> idx(batch);
  for (std::size_t j = 0; j < batch; ++j)
    idx[j] = std::size_t((step * batch + j) % count);
  return idx;
}

BatchLosses batch_losses(const Model& m, const SyntheticDataset& data,
                         const std::vector<std::size_t>& indices,
                         const KDConfig& kd, const StepOptions& opts) {
  if (indices.empty()) throw ContractError("batch_losses: empty batch");
  if (m.teachers.empty()) throw ContractError("batch_losses: no teachers");
  const TeacherBundle& clip = m.teachers[m.clip_index];
  const std::size_t mcount = m.teachers.size();

  BatchLosses out;
  out.expert_usage.assign(m.mole.empty() ? 0 : m.mole[0].expert_count(), 0);
  Tensor text_acc, kd_acc;

  for (std::size_t idx : indices) {
    const Tensor& img = data.image(idx);
    const std::size_t label = data.label(idx);

    EncoderOutput s = encode(m.student_cfg, m.student, img,
                             opts.use_mole ? &m.mole : nullptr,
                             opts.use_mole ? &out.expert_usage : nullptr);
    Tensor lt = cross_entropy_logits(head_logits(m, s.tokens), label);

    std::vector<Tensor> targets;
    targets.reserve(mcount);
    EncoderOutput clip_out;
    for (std::size_t i = 0; i < mcount; ++i) {
      const TeacherBundle& t = m.teachers[i];
      EncoderOutput to = encode(t.cfg, t.params, img);
      if (i == m.clip_index) clip_out = to;
      targets.push_back(opts.use_adapter
                            ? adapt(t.adapter, to.tokens)
                            : interp_target(to.tokens, t.cfg.grid(),
                                            m.student_cfg.grid(),
                                            m.student_cfg.embed_dim));
    }

    Tensor lk;
    if (opts.use_token_w) {
      const BlockParams& last = clip.params.blocks.back();
      KDWeights w;
      w.token_w = token_weights(clip_out.cls, clip_out.tokens, last.wq, last.wk);
      if (mcount == 1) {
        // Single-teacher runs bypass the teacher softmax; weight 1 directly.
        w.teacher_w = Tensor({1}, std::vector<float>{1.0f});
      } else if (opts.use_teacher_w) {
        w.teacher_w = teacher_weights(clip_out.cls, targets, kd);
      } else {
        w.teacher_w = Tensor::full({mcount}, 1.0f / float(mcount));
      }
      lk = kd_loss(s.tokens, targets, w);
    } else {
      // Uniform distillation: token-mean MSE averaged over teachers, no
      // class-attention weighting and no +1/n floor.
      Tensor acc;
      for (const Tensor& target : targets) {
        Tensor e = mse(s.tokens, target);
        acc = acc.defined() ? add(acc, e) : e;
      }
      lk = scale(acc, 1.0f / float(mcount));
    }

    text_acc = text_acc.defined() ? add(text_acc, lt) : lt;
    kd_acc = kd_acc.defined() ? add(kd_acc, lk) : lk;
  }

  const float inv = 1.0f / float(indices.size());
  out.text = scale(text_acc, inv);
  out.kd = scale(kd_acc, inv);
  out.total = total_loss(out.text, out.kd, kd);
  return out;
}

StepReport train_step(const Model& m, const SyntheticDataset& data,
                      const std::vector<std::size_t>& indices, const KDConfig& kd,
                      Optimizer& opt, const StepOptions& opts) {
  Tape tape;
  BatchLosses bl = batch_losses(m, data, indices, kd, opts);

  StepReport rep;
  rep.l_text = bl.text.item();
  rep.l_kd = bl.kd.item();
  rep.l_total = bl.total.item();
  rep.expert_usage = bl.expert_usage;
  const std::pair<const char*, float> checks[] = {
      {"L_text", rep.l_text}, {"L_kd", rep.l_kd}, {"L_total", rep.l_total}};
  for (const auto& [name, v] : checks)
    if (!std::isfinite(v))
      throw NumericError(std::string("train_step: ") + name +
                         " is not finite; aborting before the update");

  tape.backward(bl.total);

  std::map<std::string, double> sq;
  for (const auto& [name, t] : named_model_params(m))
    if (t.has_grad()) {
      double s = 0.0;
      for (float g : t.grad()) s += double(g) * double(g);
      sq[group_of(name)] += s;
    }
  for (const auto& [group, s] : sq) rep.grad_norms.emplace_back(group, std::sqrt(s));

  opt.step();
  return rep;
}

double evaluate_accuracy(const Model& m, const SyntheticDataset& data,
                         bool use_mole) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    EncoderOutput s = encode(m.student_cfg, m.student, data.image(i),
                             use_mole ? &m.mole : nullptr);
    Tensor logits = head_logits(m, s.tokens);
    std::size_t best = 0;
    for (std::size_t k = 1; k < logits.numel(); ++k)
      if (logits.at(k) > logits.at(best)) best = k;
    if (best == data.label(i)) ++hits;
  }
  return double(hits) / double(data.size());
}

RunSummary run(const TrainConfig& cfg, const std::string& resume_path) {
  cfg.validate();
  std::mt19937 rng(cfg.seed);
  SyntheticDataset data(cfg.train_data());
  Model m = build_model(cfg, rng);

  std::vector<std::pair<std::string, Tensor>> trainable;
  apply_stage_flags(m, cfg.stage, trainable);

  KDConfig kd;
  kd.lambda_kd = cfg.lambda_kd;
  kd.clip_fixed_weight = cfg.clip_fixed_weight;
  kd.clip_index = cfg.clip_index();

  OptimizerConfig ocfg;
  ocfg.kind = cfg.optimizer;
  ocfg.lr = cfg.effective_lr();
  Optimizer opt(ocfg, trainable);

  std::uint64_t start = 0;
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    const std::uint64_t want = config_fingerprint(cfg);
    if (ck.fingerprint != want)
      throw ConfigError("resume refused: checkpoint fingerprint " +
                        hex16(ck.fingerprint) + " does not match config " +
                        hex16(want));
    std::map<std::string, Tensor> by_name(ck.entries.begin(), ck.entries.end());
    for (auto& [name, t] : named_model_params(m)) {
      auto it = by_name.find(name);
      if (it == by_name.end())
        throw ConfigError("checkpoint is missing parameter '" + name + "'");
      if (it->second.shape() != t.shape())
        throw ConfigError("checkpoint shape mismatch for '" + name + "'");
      Tensor copy = t;
      copy.vec() = it->second.vec();
    }
    opt.load_state(by_name);
    opt.set_step_count(ck.step);
    start = ck.step;
  }

  std::ofstream trace(cfg.trace_path, std::ios::trunc);
  if (!trace) throw IoError("trace: cannot open '" + cfg.trace_path + "'");
  const std::size_t experts = m.mole.empty() ? 0 : m.mole[0].expert_count();
  trace << "step,l_text,l_kd,l_total";
  for (std::size_t e = 0; e < experts; ++e) trace << ",expert" << e << "_frac";
  trace << "\n";

  const StepOptions opts;  // full method
  for (std::uint64_t t = start; t < start + cfg.steps; ++t) {
    const auto idx = batch_indices(t, cfg.batch_size, data.size());
    StepReport rep = train_step(m, data, idx, kd, opt, opts);
    std::uint64_t total_routed = 0;
    for (std::uint64_t u : rep.expert_usage) total_routed += u;
    trace << t << "," << fmt9(rep.l_text) << "," << fmt9(rep.l_kd) << ","
          << fmt9(rep.l_total);
    for (std::uint64_t u : rep.expert_usage)
      trace << ","
            << fmt9(total_routed ? double(u) / double(total_routed) : 0.0);
    trace << "\n";
  }
  trace.flush();
  if (!trace) throw IoError("trace: write failed for '" + cfg.trace_path + "'");
  trace.close();

  Checkpoint ck;
  ck.entries = named_model_params(m);
  for (auto& kv : opt.state_entries()) ck.entries.push_back(std::move(kv));
  ck.step = std::uint32_t(start + cfg.steps);
  ck.fingerprint = config_fingerprint(cfg);
  ck.config_text = canonical_config(cfg);
  save_checkpoint(cfg.checkpoint_path, ck);

  RunSummary summary;
  const auto idx0 = batch_indices(0, cfg.batch_size, data.size());
  BatchLosses final = batch_losses(m, data, idx0, kd, opts);
  summary.l_text = final.text.item();
  summary.l_kd = final.kd.item();
  summary.l_total = final.total.item();
  summary.accuracy = evaluate_accuracy(m, SyntheticDataset(cfg.eval_data()));
  summary.final_step = std::uint32_t(start + cfg.steps);
  summary.trace_path = cfg.trace_path;
  summary.checkpoint_path = cfg.checkpoint_path;
  return summary;
}

std::vector<AblationRow> run_ablation(const TrainConfig& cfg, std::size_t upto) {
  cfg.validate();
  if (upto == 0 || upto > 5)
    throw ConfigError("ablation ladder length must be in [1, 5]");
  SyntheticDataset data(cfg.train_data());
  SyntheticDataset eval(cfg.eval_data());

  KDConfig kd;
  kd.lambda_kd = cfg.lambda_kd;
  kd.clip_fixed_weight = cfg.clip_fixed_weight;
  kd.clip_index = cfg.clip_index();

  std::vector<AblationRow> rows;
  for (std::size_t v = 0; v < upto; ++v) {
    std::mt19937 rng(cfg.seed);  // identical init for every variant
    Model m = build_model(cfg, rng);
    std::vector<std::pair<std::string, Tensor>> trainable;
    apply_stage_flags(m, cfg.stage, trainable);
    OptimizerConfig ocfg;
    ocfg.kind = cfg.optimizer;
    ocfg.lr = cfg.effective_lr();
    Optimizer opt(ocfg, trainable);

    const StepOptions opts = ablation_options(v);
    for (std::uint64_t t = 0; t < cfg.steps; ++t)
      train_step(m, data, batch_indices(t, cfg.batch_size, data.size()), kd, opt,
                 opts);

    AblationRow row;
    row.variant = kAblationVariants[v];
    BatchLosses final =
        batch_losses(m, data, batch_indices(0, cfg.batch_size, data.size()), kd,
                     opts);
    row.final_l_kd = final.kd.item();
    row.accuracy = evaluate_accuracy(m, eval, opts.use_mole);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dvit
