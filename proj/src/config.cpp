// SPDX-License-Identifier: Apache-2.0
#include "dvit/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dvit/errors.hpp"

namespace dvit {
namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

[[noreturn]] void fail(std::size_t line, const std::string& msg) {
  throw ConfigError("line " + std::to_string(line) + ": " + msg);
}

std::size_t to_count(const std::string& v, std::size_t line, const std::string& key) {
  try {
    std::size_t pos = 0;
    const unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    fail(line, "key '" + key + "' needs a non-negative integer, got '" + v + "'");
  }
}

float to_float(const std::string& v, std::size_t line, const std::string& key) {
  try {
    std::size_t pos = 0;
    const float f = std::stof(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return f;
  } catch (const std::exception&) {
    fail(line, "key '" + key + "' needs a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& v, std::size_t line, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail(line, "key '" + key + "' needs true or false, got '" + v + "'");
}

std::string fmt_float(float f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", double(f));
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (stage != "pretrain" && stage != "finetune")
    throw ConfigError("stage must be pretrain or finetune, got '" + stage + "'");
  if (optimizer != "adam" && optimizer != "sgd")
    throw ConfigError("optimizer must be adam or sgd, got '" + optimizer + "'");
  if (batch_size == 0) throw ConfigError("batch must be positive");
  if (!(lambda_kd >= 0.0f) || !std::isfinite(lambda_kd))
    throw ConfigError("kd.lambda must be finite and non-negative");
  if (!(clip_fixed_weight > 0.0f) || !(clip_fixed_weight < 1.0f))
    throw ConfigError("kd.clip_weight must lie strictly between 0 and 1");
  if (!(learning_rate >= 0.0f) || !std::isfinite(learning_rate))
    throw ConfigError("lr must be finite and non-negative");
  if (trace_path.empty() || checkpoint_path.empty())
    throw ConfigError("out.trace and out.checkpoint must be non-empty");

  student.validate();
  if (!student.has_cls) throw ConfigError("the student needs a class token");
  train_data().validate();

  if (teachers.empty()) throw ConfigError("at least one teacher is required");
  std::size_t clip_count = 0;
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    const TeacherSpec& t = teachers[i];
    t.encoder.validate();
    if (!t.encoder.has_cls)
      throw ConfigError("teacher" + std::to_string(i) + " needs a class token");
    if (t.encoder.image_size != student.image_size ||
        t.encoder.channels != student.channels)
      throw ConfigError("teacher" + std::to_string(i) +
                        " must consume the student's input geometry");
    if (t.is_clip) {
      ++clip_count;
      // The reference teacher supplies the class-attention weights, so its
      // token grid and width must line up with the student's.
      if (t.encoder.grid() != student.grid())
        throw ConfigError("the reference teacher's grid must equal the student's");
      if (t.encoder.embed_dim != student.embed_dim)
        throw ConfigError(
            "the reference teacher's embed dim must equal the student's");
    }
  }
  if (clip_count != 1)
    throw ConfigError("exactly one teacher must set clip = true, found " +
                      std::to_string(clip_count));

  if (mole.experts == 0) throw ConfigError("mole.experts must be positive");
  if (mole.rank == 0 || mole.rank >= student.embed_dim)
    throw ConfigError("mole.rank must satisfy 1 <= rank < student dim");
}

std::size_t TrainConfig::clip_index() const {
  for (std::size_t i = 0; i < teachers.size(); ++i)
    if (teachers[i].is_clip) return i;
  throw ConfigError("no teacher is flagged clip = true");
}

float TrainConfig::effective_lr() const {
  if (learning_rate > 0.0f) return learning_rate;
  return stage == "pretrain" ? 1e-3f : 1e-4f;
}

DatasetConfig TrainConfig::train_data() const {
  DatasetConfig d;
  d.image_size = student.image_size;
  d.channels = student.channels;
  d.count = dataset_size;
  d.patterns = classes;
  d.seed = seed;
  d.noise = noise;
  return d;
}

DatasetConfig TrainConfig::eval_data() const {
  DatasetConfig d = train_data();
  d.seed = seed + 1000003u;
  d.count = 128;
  return d;
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  cfg.teachers.clear();
  std::map<std::size_t, TeacherSpec> teacher_map;

  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string stripped = trim(raw);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) fail(line, "expected 'key = value'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string val = trim(stripped.substr(eq + 1));
    if (key.empty()) fail(line, "empty key");
    if (val.empty()) fail(line, "empty value for key '" + key + "'");

    if (key == "stage") cfg.stage = val;
    else if (key == "steps") cfg.steps = to_count(val, line, key);
    else if (key == "batch") cfg.batch_size = to_count(val, line, key);
    else if (key == "lr") cfg.learning_rate = to_float(val, line, key);
    else if (key == "optimizer") cfg.optimizer = val;
    else if (key == "seed")
      cfg.seed = static_cast<std::uint32_t>(to_count(val, line, key));
    else if (key == "kd.lambda") cfg.lambda_kd = to_float(val, line, key);
    else if (key == "kd.clip_weight") cfg.clip_fixed_weight = to_float(val, line, key);
    else if (key == "student.image") cfg.student.image_size = to_count(val, line, key);
    else if (key == "student.patch") cfg.student.patch_size = to_count(val, line, key);
    else if (key == "student.channels") cfg.student.channels = to_count(val, line, key);
    else if (key == "student.depth") cfg.student.depth = to_count(val, line, key);
    else if (key == "student.dim") cfg.student.embed_dim = to_count(val, line, key);
    else if (key == "student.heads") cfg.student.num_heads = to_count(val, line, key);
    else if (key == "student.ffn") cfg.student.ffn_hidden = to_count(val, line, key);
    else if (key == "mole.experts") cfg.mole.experts = to_count(val, line, key);
    else if (key == "mole.rank") cfg.mole.rank = to_count(val, line, key);
    else if (key == "data.classes") cfg.classes = to_count(val, line, key);
    else if (key == "data.count") cfg.dataset_size = to_count(val, line, key);
    else if (key == "data.noise") cfg.noise = to_float(val, line, key);
    else if (key == "out.trace") cfg.trace_path = val;
    else if (key == "out.checkpoint") cfg.checkpoint_path = val;
    else if (key.rfind("teacher", 0) == 0) {
      std::size_t pos = 7;
      if (pos >= key.size() || !std::isdigit(static_cast<unsigned char>(key[pos])))
        fail(line, "unknown key '" + key + "'");
      std::size_t idx = 0;
      while (pos < key.size() && std::isdigit(static_cast<unsigned char>(key[pos])))
        idx = idx * 10 + std::size_t(key[pos++] - '0');
      if (pos >= key.size() || key[pos] != '.') fail(line, "unknown key '" + key + "'");
      const std::string field = key.substr(pos + 1);
      auto it = teacher_map.find(idx);
      if (it == teacher_map.end()) {
        TeacherSpec fresh;
        fresh.encoder.depth = 1;  // teachers default to one block
        it = teacher_map.emplace(idx, fresh).first;
      }
      TeacherSpec& t = it->second;
      if (field == "patch") t.encoder.patch_size = to_count(val, line, key);
      else if (field == "dim") t.encoder.embed_dim = to_count(val, line, key);
      else if (field == "heads") t.encoder.num_heads = to_count(val, line, key);
      else if (field == "depth") t.encoder.depth = to_count(val, line, key);
      else if (field == "ffn") t.encoder.ffn_hidden = to_count(val, line, key);
      else if (field == "clip") t.is_clip = to_bool(val, line, key);
      else fail(line, "unknown key '" + key + "'");
    } else {
      fail(line, "unknown key '" + key + "'");
    }
  }

  std::size_t expect = 0;
  for (const auto& [idx, spec] : teacher_map) {
    if (idx != expect)
      throw ConfigError("teacher indices must be contiguous from 0; missing teacher" +
                        std::to_string(expect));
    ++expect;
    cfg.teachers.push_back(spec);
  }
  // Teachers consume the same images as the student.
  for (TeacherSpec& t : cfg.teachers) {
    t.encoder.image_size = cfg.student.image_size;
    t.encoder.channels = cfg.student.channels;
  }
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot read '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_config_text(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string canonical_config(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "stage = " << cfg.stage << "\n";
  out << "steps = " << cfg.steps << "\n";
  out << "batch = " << cfg.batch_size << "\n";
  out << "lr = " << fmt_float(cfg.learning_rate) << "\n";
  out << "optimizer = " << cfg.optimizer << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "kd.lambda = " << fmt_float(cfg.lambda_kd) << "\n";
  out << "kd.clip_weight = " << fmt_float(cfg.clip_fixed_weight) << "\n";
  out << "student.image = " << cfg.student.image_size << "\n";
  out << "student.patch = " << cfg.student.patch_size << "\n";
  out << "student.channels = " << cfg.student.channels << "\n";
  out << "student.depth = " << cfg.student.depth << "\n";
  out << "student.dim = " << cfg.student.embed_dim << "\n";
  out << "student.heads = " << cfg.student.num_heads << "\n";
  out << "student.ffn = " << cfg.student.ffn_hidden << "\n";
  out << "mole.experts = " << cfg.mole.experts << "\n";
  out << "mole.rank = " << cfg.mole.rank << "\n";
  for (std::size_t i = 0; i < cfg.teachers.size(); ++i) {
    const std::string p = "teacher" + std::to_string(i) + ".";
    const EncoderConfig& e = cfg.teachers[i].encoder;
    out << p << "patch = " << e.patch_size << "\n";
    out << p << "dim = " << e.embed_dim << "\n";
    out << p << "heads = " << e.num_heads << "\n";
    out << p << "depth = " << e.depth << "\n";
    out << p << "ffn = " << e.ffn_hidden << "\n";
    out << p << "clip = " << (cfg.teachers[i].is_clip ? "true" : "false") << "\n";
  }
  out << "data.classes = " << cfg.classes << "\n";
  out << "data.count = " << cfg.dataset_size << "\n";
  out << "data.noise = " << fmt_float(cfg.noise) << "\n";
  out << "out.trace = " << cfg.trace_path << "\n";
  out << "out.checkpoint = " << cfg.checkpoint_path << "\n";
  return out.str();
}

std::uint64_t config_fingerprint(const TrainConfig& cfg) {
  std::ostringstream arch;
  arch << "seed=" << cfg.seed << ";student=" << cfg.student.image_size << ","
       << cfg.student.patch_size << "," << cfg.student.channels << ","
       << cfg.student.depth << "," << cfg.student.embed_dim << ","
       << cfg.student.num_heads << "," << cfg.student.ffn_hidden
       << ";mole=" << cfg.mole.experts << "," << cfg.mole.rank
       << ";data=" << cfg.classes << "," << cfg.dataset_size << ","
       << fmt_float(cfg.noise) << ";teachers=";
  for (const TeacherSpec& t : cfg.teachers) {
    arch << t.encoder.patch_size << "," << t.encoder.embed_dim << ","
         << t.encoder.num_heads << "," << t.encoder.depth << ","
         << t.encoder.ffn_hidden << "," << (t.is_clip ? 1 : 0) << ";";
  }
  const std::string s = arch.str();
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace dvit
