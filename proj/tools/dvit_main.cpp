// SPDX-License-Identifier: Apache-2.0
//
// Command-line frontend: distill (train), inspect-params, export-attention,
// ablate and verify. Exit codes: 0 success, 2 usage, 3 configuration,
// 4 numeric failure, 5 I/O.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dvit/checkpoint.hpp"
#include "dvit/errors.hpp"
#include "dvit/model.hpp"
#include "dvit/selfcheck.hpp"
#include "dvit/train.hpp"

namespace fs = std::filesystem;
using namespace dvit;

namespace {

std::string fmt9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Redirect the config's output paths under --out when given.
void apply_out_dir(TrainConfig& cfg, const std::string& out_dir) {
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  cfg.trace_path =
      (fs::path(out_dir) / fs::path(cfg.trace_path).filename()).string();
  cfg.checkpoint_path =
      (fs::path(out_dir) / fs::path(cfg.checkpoint_path).filename()).string();
}

int cmd_distill(const std::string& config_path, const std::string& stage,
                const std::string& resume, const std::string& out_dir) {
  TrainConfig cfg = load_config(config_path);
  if (!stage.empty()) cfg.stage = stage;
  apply_out_dir(cfg, out_dir);
  RunSummary s = run(cfg, resume);
  std::cout << "trace: " << s.trace_path << "\n";
  std::cout << "checkpoint: " << s.checkpoint_path << "\n";
  std::cout << "steps: " << s.final_step << "\n";
  std::cout << "accuracy: " << fmt9(s.accuracy) << "\n";
  std::cout << "L_text=" << fmt9(s.l_text) << " L_kd=" << fmt9(s.l_kd)
            << " L_total=" << fmt9(s.l_total) << "\n";
  return 0;
}

int cmd_inspect_params(const std::string& config_path) {
  TrainConfig cfg = load_config(config_path);
  cfg.validate();
  std::mt19937 rng(cfg.seed);
  Model m = build_model(cfg, rng);

  std::uint64_t student = 0, mole = 0, adapters = 0, head = 0, teachers = 0;
  for (const auto& [name, t] : named_model_params(m)) {
    if (name.rfind("student", 0) == 0) student += t.numel();
    else if (name.rfind("mole", 0) == 0) mole += t.numel();
    else if (name.rfind("adapter", 0) == 0) adapters += t.numel();
    else if (name.rfind("teacher", 0) == 0) teachers += t.numel();
    else head += t.numel();
  }
  const ParamCount pc =
      mole_param_count(cfg.student.depth, cfg.student.embed_dim, cfg.mole, student);
  if (pc.mole != mole)
    throw NumericError("inspect-params: closed form (" + std::to_string(pc.mole) +
                       ") disagrees with enumeration (" + std::to_string(mole) +
                       ")");

  char ratio[16];
  std::snprintf(ratio, sizeof ratio, "%.4f", pc.ratio);
  std::cout << "group          parameters\n";
  std::cout << "student base   " << student << "\n";
  std::cout << "mole           " << mole << "\n";
  std::cout << "adapters       " << adapters << "\n";
  std::cout << "head           " << head << "\n";
  std::cout << "teachers       " << teachers << " (frozen)\n";
  std::cout << "student total  " << pc.total << "\n";
  std::cout << "mole ratio     " << ratio << "\n";
  return 0;
}

void write_pgm(const std::string& path, const Tensor& map) {
  const std::size_t g = map.dim(0);
  float lo = map.at(0), hi = map.at(0);
  for (std::size_t i = 1; i < map.numel(); ++i) {
    lo = std::min(lo, map.at(i));
    hi = std::max(hi, map.at(i));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("export-attention: cannot open '" + path + "'");
  out << "P5\n" << g << " " << g << "\n255\n";
  for (std::size_t i = 0; i < map.numel(); ++i) {
    // Min-max to [0,255]; a constant map has no contrast and renders mid-gray.
    unsigned char px =
        hi > lo ? static_cast<unsigned char>(
                      std::lround(double(map.at(i) - lo) / double(hi - lo) * 255.0))
                : static_cast<unsigned char>(128);
    out.write(reinterpret_cast<const char*>(&px), 1);
  }
  if (!out) throw IoError("export-attention: write failed for '" + path + "'");
}

void write_map_csv(const std::string& path, const Tensor& map) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("export-attention: cannot open '" + path + "'");
  const std::size_t g = map.dim(0);
  for (std::size_t r = 0; r < g; ++r) {
    for (std::size_t c = 0; c < g; ++c)
      out << (c ? "," : "") << fmt9(map.at2(r, c));
    out << "\n";
  }
  if (!out) throw IoError("export-attention: write failed for '" + path + "'");
}

int cmd_export_attention(const std::string& ckpt_path, std::uint32_t image_seed,
                         const std::string& out_dir) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  if (ck.config_text.empty())
    throw ConfigError("checkpoint carries no embedded config");
  TrainConfig cfg = parse_config_text(ck.config_text);
  cfg.validate();

  std::mt19937 rng(cfg.seed);
  Model m = build_model(cfg, rng);
  std::map<std::string, Tensor> by_name(ck.entries.begin(), ck.entries.end());
  for (auto& [name, t] : named_model_params(m)) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw ConfigError("checkpoint is missing parameter '" + name + "'");
    if (it->second.shape() != t.shape())
      throw ConfigError("checkpoint shape mismatch for '" + name + "'");
    Tensor dst = t;
    dst.vec() = it->second.vec();
  }

  DatasetConfig dc = cfg.train_data();
  dc.seed = image_seed;
  dc.count = 1;
  SyntheticDataset ds(dc);
  const Tensor& img = ds.image(0);

  const TeacherBundle& clip = m.teachers[m.clip_index];
  EncoderOutput clip_out = encode(clip.cfg, clip.params, img);
  EncoderOutput student_out = encode(m.student_cfg, m.student, img, &m.mole);
  Tensor clip_map = cls_attention_map(clip_out);
  Tensor student_map = cls_attention_map(student_out);

  fs::create_directories(out_dir.empty() ? "." : out_dir);
  const fs::path base(out_dir.empty() ? "." : out_dir);
  write_pgm((base / "clip_attn.pgm").string(), clip_map);
  write_pgm((base / "student_attn.pgm").string(), student_map);
  write_map_csv((base / "clip_attn.csv").string(), clip_map);
  write_map_csv((base / "student_attn.csv").string(), student_map);
  std::cout << "wrote clip_attn.pgm, student_attn.pgm and raw CSV maps under "
            << base.string() << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& matrix,
               const std::string& out_dir) {
  TrainConfig cfg = load_config(config_path);
  std::size_t upto = 5;
  if (!matrix.empty()) {
    upto = 0;
    for (std::size_t v = 0; v < 5; ++v)
      if (matrix == kAblationVariants[v]) upto = v + 1;
    if (upto == 0)
      throw ConfigError("unknown ladder variant '" + matrix + "'");
  }
  std::vector<AblationRow> rows = run_ablation(cfg, upto);

  fs::path csv_path = "ablation.csv";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    csv_path = fs::path(out_dir) / "ablation.csv";
  }
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw IoError("ablate: cannot open '" + csv_path.string() + "'");
  csv << "variant,final_l_kd,accuracy\n";
  std::cout << "variant,final_l_kd,accuracy\n";
  for (const AblationRow& r : rows) {
    const std::string line =
        r.variant + "," + fmt9(r.final_l_kd) + "," + fmt9(r.accuracy);
    csv << line << "\n";
    std::cout << line << "\n";
  }
  if (!csv) throw IoError("ablate: write failed for '" + csv_path.string() + "'");
  return 0;
}

int cmd_verify() {
  const std::vector<CheckResult> results = run_selfchecks();
  std::size_t failed = 0;
  for (const CheckResult& r : results) {
    std::cout << (r.ok ? "[ ok ] " : "[FAIL] ") << r.name;
    if (!r.ok && !r.detail.empty()) std::cout << " (" << r.detail << ")";
    std::cout << "\n";
    if (!r.ok) ++failed;
  }
  std::cout << results.size() - failed << "/" << results.size()
            << " checks passed\n";
  return failed == 0 ? 0 : 4;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-teacher encoder distillation workbench"};
  app.require_subcommand(1);

  std::string config_path, stage, resume, out_dir, matrix;
  std::uint32_t image_seed = 1;
  std::string ckpt_path;

  CLI::App* distill = app.add_subcommand("distill", "Run the training schedule");
  distill->add_option("--config", config_path, "config file")->required();
  distill->add_option("--stage", stage, "override the config's stage")
      ->check(CLI::IsMember({"pretrain", "finetune"}));
  distill->add_option("--resume", resume, "checkpoint to continue from");
  distill->add_option("--out", out_dir, "directory for trace and checkpoint");

  CLI::App* inspect =
      app.add_subcommand("inspect-params", "Parameter counts and MoLE ratio");
  inspect->add_option("--config", config_path, "config file")->required();

  CLI::App* expat =
      app.add_subcommand("export-attention", "Write class-attention maps");
  expat->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  expat->add_option("--image-seed", image_seed, "seed of the probe image");
  expat->add_option("--out", out_dir, "output directory");

  CLI::App* ablate = app.add_subcommand("ablate", "Run the design ladder");
  ablate->add_option("--config", config_path, "config file")->required();
  ablate->add_option("--matrix", matrix,
                     "run the ladder up to this variant (default: all five)");
  ablate->add_option("--out", out_dir, "output directory");

  CLI::App* verify = app.add_subcommand("verify", "Run the built-in oracle suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (distill->parsed()) return cmd_distill(config_path, stage, resume, out_dir);
    if (inspect->parsed()) return cmd_inspect_params(config_path);
    if (expat->parsed())
      return cmd_export_attention(ckpt_path, image_seed, out_dir);
    if (ablate->parsed()) return cmd_ablate(config_path, matrix, out_dir);
    if (verify->parsed()) return cmd_verify();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 4;
  } catch (const ContractError& e) {
    std::cerr << "contract error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
