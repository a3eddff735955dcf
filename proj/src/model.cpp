// SPDX-License-Identifier: Apache-2.0
#include "dvit/model.hpp"

#include "dvit/errors.hpp"

namespace dvit {

Model build_model(const TrainConfig& cfg, std::mt19937& rng) {
  cfg.validate();
  Model m;
  m.student_cfg = cfg.student;
  m.student = init_encoder(cfg.student, rng);
  m.mole.reserve(cfg.student.depth);
  for (std::size_t i = 0; i < cfg.student.depth; ++i)
    m.mole.push_back(make_mole_layer(cfg.student.embed_dim, cfg.mole, rng));
  for (const TeacherSpec& spec : cfg.teachers) {
    TeacherBundle t;
    t.cfg = spec.encoder;
    t.is_clip = spec.is_clip;
    t.params = init_encoder(spec.encoder, rng);
    t.adapter = make_adapter(spec.encoder.embed_dim, cfg.student.embed_dim,
                             spec.encoder.grid(), cfg.student.grid(), rng);
    m.teachers.push_back(std::move(t));
  }
  m.classes = cfg.classes;
  m.clip_index = cfg.clip_index();
  m.head_w = Tensor::randn({cfg.student.embed_dim, cfg.classes}, rng, 0.02f);
  m.head_b = Tensor::zeros({cfg.classes});
  return m;
}

std::vector<std::pair<std::string, Tensor>> named_mole_params(
    const std::string& prefix, const std::vector<MoLELayer>& stack) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t b = 0; b < stack.size(); ++b) {
    const std::string bp = prefix + "block" + std::to_string(b) + ".";
    out.emplace_back(bp + "router.weight", stack[b].router.weight);
    out.emplace_back(bp + "router.bias", stack[b].router.bias);
    for (std::size_t e = 0; e < stack[b].experts.size(); ++e) {
      const std::string ep = bp + "expert" + std::to_string(e) + ".";
      out.emplace_back(ep + "down", stack[b].experts[e].down);
      out.emplace_back(ep + "up", stack[b].experts[e].up);
    }
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> named_model_params(const Model& m) {
  std::vector<std::pair<std::string, Tensor>> out =
      named_encoder_params("student", m.student);
  for (auto& kv : named_mole_params("mole.", m.mole)) out.push_back(std::move(kv));
  for (std::size_t i = 0; i < m.teachers.size(); ++i) {
    const std::string ti = "teacher" + std::to_string(i);
    for (auto& kv : named_encoder_params(ti, m.teachers[i].params))
      out.push_back(std::move(kv));
    const std::string ai = "adapter" + std::to_string(i);
    for (auto& kv : named_adapter_params(ai, m.teachers[i].adapter))
      out.push_back(std::move(kv));
  }
  out.emplace_back("head.w", m.head_w);
  out.emplace_back("head.b", m.head_b);
  return out;
}

std::vector<std::string> trainable_set(const std::string& stage, const Model& m) {
  if (stage != "pretrain" && stage != "finetune")
    throw ConfigError("stage must be pretrain or finetune, got '" + stage + "'");
  std::vector<std::string> out;
  for (const auto& [name, t] : named_model_params(m)) {
    (void)t;
    if (name.rfind("teacher", 0) == 0) continue;
    if (stage == "pretrain" && name.rfind("student", 0) == 0) continue;
    out.push_back(name);
  }
  return out;
}

}  // namespace dvit
