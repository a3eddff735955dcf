// SPDX-License-Identifier: Apache-2.0
#include "dvit/selfcheck.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "dvit/adapter.hpp"
#include "dvit/checkpoint.hpp"
#include "dvit/errors.hpp"
#include "dvit/kd.hpp"
#include "dvit/mole.hpp"
#include "dvit/ops.hpp"
#include "dvit/tape.hpp"
#include "dvit/vit.hpp"

namespace dvit {
namespace {

std::string fmtg(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Central finite differences on every element of every parameter against
// tape gradients; returns the worst relative error.
double fd_worst(std::vector<Tensor> params,
                const std::function<Tensor()>& build_loss) {
  std::vector<std::vector<float>> grads;
  {
    Tape tape;
    for (auto& p : params) tape.watch(p);
    tape.backward(build_loss());
    for (auto& p : params) grads.push_back(p.grad());
    for (auto& p : params) p.clear_grad();
  }
  const float h = 1e-3f;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    for (std::size_t c = 0; c < p.numel(); ++c) {
      const float orig = p.data()[c];
      p.data()[c] = orig + h;
      const double x1 = p.data()[c];
      const double f1 = build_loss().item_precise();
      p.data()[c] = orig - h;
      const double x0 = p.data()[c];
      const double f0 = build_loss().item_precise();
      p.data()[c] = orig;
      const double numeric = (f1 - f0) / (x1 - x0);
      const double analytic = grads[k][c];
      const double denom = std::max(1.0, std::max(std::fabs(analytic),
                                                  std::fabs(numeric)));
      worst = std::max(worst, std::fabs(analytic - numeric) / denom);
    }
  }
  return worst;
}

CheckResult grad_check(const std::string& name, std::vector<Tensor> params,
                       const std::function<Tensor()>& build_loss) {
  const double worst = fd_worst(std::move(params), build_loss);
  return {name, worst < 1e-4, worst < 1e-4 ? "" : "max rel err " + fmtg(worst)};
}

}  // namespace

std::vector<CheckResult> run_selfchecks() {
  std::vector<CheckResult> out;
  std::mt19937 rng(2024);

  {
    Tensor a = Tensor::randn({3, 4}, rng, 1.0f).set_requires_grad(true);
    Tensor b = Tensor::randn({4, 2}, rng, 1.0f).set_requires_grad(true);
    Tensor probe = Tensor::randn({3, 2}, rng, 0.5f);
    out.push_back(grad_check("matmul gradient", {a, b}, [&] {
      return sum(mul(matmul(a, b), probe));
    }));
  }
  {
    Tensor x = Tensor::randn({2, 5}, rng, 1.0f).set_requires_grad(true);
    Tensor probe = Tensor::randn({2, 5}, rng, 0.5f);
    out.push_back(grad_check("softmax gradient", {x}, [&] {
      return sum(mul(softmax(x, 1), probe));
    }));
  }
  {
    Tensor x = Tensor::randn({3, 6}, rng, 1.0f).set_requires_grad(true);
    Tensor g = Tensor::randn({6}, rng, 0.3f).set_requires_grad(true);
    Tensor b = Tensor::randn({6}, rng, 0.3f).set_requires_grad(true);
    Tensor probe = Tensor::randn({3, 6}, rng, 0.5f);
    out.push_back(grad_check("layer norm gradient", {x, g, b}, [&] {
      return sum(mul(layer_norm(x, g, b, 1e-5f), probe));
    }));
  }
  {
    const std::size_t mm = 3, n = 4, c = 5;
    Tensor student = Tensor::randn({n, c}, rng, 1.0f);
    std::vector<Tensor> teachers;
    for (std::size_t i = 0; i < mm; ++i)
      teachers.push_back(Tensor::randn({n, c}, rng, 1.0f));
    KDWeights w;
    w.token_w = Tensor({n}, std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f});
    w.teacher_w = Tensor({mm}, std::vector<float>{0.8f, 0.04f, 0.16f});
    const double got = kd_loss(student, teachers, w).item_precise();
    double ref = 0.0;
    for (std::size_t i = 0; i < mm; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double e = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
          const double d = double(student.at2(j, k)) - teachers[i].at2(j, k);
          e += d * d;
        }
        ref += double(w.teacher_w.at(i)) * (double(w.token_w.at(j)) + 1.0 / n) *
               (e / c);
      }
    const bool ok = std::fabs(got - ref) < 1e-6;
    out.push_back({"distillation loss vs loop oracle", ok,
                   ok ? "" : "abs err " + fmtg(std::fabs(got - ref))});
  }
  {
    const std::size_t n = 3, c = 4;
    Tensor student = Tensor::randn({n, c}, rng, 1.0f).set_requires_grad(true);
    Tensor t0 = Tensor::randn({n, c}, rng, 1.0f);
    Tensor t1 = Tensor::randn({n, c}, rng, 1.0f);
    KDWeights w;
    w.token_w = Tensor::full({n}, 1.0f / float(n));
    w.teacher_w = Tensor({2}, std::vector<float>{0.8f, 0.2f});
    out.push_back(grad_check("distillation loss gradient", {student}, [&] {
      return kd_loss(student, {t0, t1}, w);
    }));
  }
  {
    Tensor cls = Tensor::randn({6}, rng, 1.0f);
    Tensor wq = Tensor::randn({6, 6}, rng, 0.3f);
    Tensor wk = Tensor::randn({6, 6}, rng, 0.3f);
    Tensor res = Tensor::randn({5, 6}, rng, 1.0f);
    Tensor tw = token_weights(cls, res, wq, wk);
    std::vector<Tensor> toks = {Tensor::randn({5, 6}, rng, 1.0f),
                                Tensor::randn({5, 6}, rng, 1.0f),
                                Tensor::randn({5, 6}, rng, 1.0f)};
    KDConfig cfg;
    Tensor tew = teacher_weights(cls, toks, cfg);
    double tw_sum = 0.0, eff = 0.0, tew_sum = 0.0;
    for (std::size_t i = 0; i < tw.numel(); ++i) {
      tw_sum += tw.at(i);
      eff += double(tw.at(i)) + 1.0 / double(tw.numel());
    }
    for (std::size_t i = 0; i < tew.numel(); ++i) tew_sum += tew.at(i);
    const bool ok = std::fabs(tw_sum - 1.0) < 1e-6 && std::fabs(eff - 2.0) < 1e-6 &&
                    std::fabs(tew_sum - 1.0) < 1e-6 && tew.at(0) == 0.8f;
    out.push_back({"weight normalization", ok,
                   ok ? ""
                      : "sums " + fmtg(tw_sum) + ", " + fmtg(eff) + ", " +
                            fmtg(tew_sum)});
  }
  {
    EncoderConfig cfg;
    cfg.image_size = 16;
    cfg.patch_size = 4;
    cfg.embed_dim = 16;
    cfg.num_heads = 2;
    cfg.ffn_hidden = 24;
    cfg.depth = 2;
    EncoderParams enc = init_encoder(cfg, rng);
    MoLEConfig mc;
    mc.experts = 3;
    mc.rank = 4;
    std::vector<MoLELayer> stack;
    for (std::size_t i = 0; i < cfg.depth; ++i)
      stack.push_back(make_mole_layer(cfg.embed_dim, mc, rng));
    Tensor img = Tensor::randn({16, 16, 1}, rng, 1.0f);
    EncoderOutput plain = encode(cfg, enc, img);
    EncoderOutput with = encode(cfg, enc, img, &stack);
    bool ok = plain.tokens.numel() == with.tokens.numel();
    for (std::size_t i = 0; ok && i < plain.tokens.numel(); ++i)
      ok = plain.tokens.at(i) == with.tokens.at(i);
    for (std::size_t i = 0; ok && i < plain.cls.numel(); ++i)
      ok = plain.cls.at(i) == with.cls.at(i);
    out.push_back({"identity at initialization", ok,
                   ok ? "" : "fresh experts changed the forward pass"});
  }
  {
    bool ok = true;
    std::uniform_real_distribution<float> u(-6.0f, 6.0f);
    for (int trial = 0; ok && trial < 200; ++trial) {
      Tensor z({7});
      for (std::size_t i = 0; i < 7; ++i) z.data()[i] = u(rng);
      Tensor s = softmax(z, 0);
      std::size_t az = 0, as = 0;
      for (std::size_t i = 1; i < 7; ++i) {
        if (z.at(i) > z.at(az)) az = i;
        if (s.at(i) > s.at(as)) as = i;
      }
      ok = az == as;
    }
    out.push_back({"routing argmax preserved by softmax", ok,
                   ok ? "" : "argmax moved under softmax"});
  }
  {
    Tensor constant = Tensor::full({9, 3}, 2.5f);
    Tensor up = align_grid(constant, 3, 5);
    bool ok = up.dim(0) == 25;
    for (std::size_t i = 0; ok && i < up.numel(); ++i) ok = up.at(i) == 2.5f;
    out.push_back({"grid alignment preserves constants", ok,
                   ok ? "" : "constant map changed under resampling"});
  }
  {
    const std::uint8_t probe[] = {'1', '2', '3', '4', '5', '6', '7', '8', '9'};
    const bool ok = crc32_of(probe, sizeof probe) == 0xCBF43926u;
    out.push_back({"checksum self-test", ok, ok ? "" : "CRC-32 vector mismatch"});
  }
  {
    namespace fs = std::filesystem;
    const std::string path =
        (fs::temp_directory_path() / "dvit_selfcheck.ckpt").string();
    bool ok = true;
    std::string detail;
    try {
      Checkpoint ck;  // entries already name-sorted, matching the load order
      ck.entries.emplace_back("demo.b", Tensor::randn({3}, rng, 1.0f));
      ck.entries.emplace_back("demo.w", Tensor::randn({4, 3}, rng, 1.0f));
      ck.step = 17;
      ck.fingerprint = 0x0123456789ABCDEFull;
      ck.config_text = "demo = true\n";
      save_checkpoint(path, ck);
      Checkpoint back = load_checkpoint(path);
      ok = back.step == ck.step && back.fingerprint == ck.fingerprint &&
           back.config_text == ck.config_text &&
           back.entries.size() == ck.entries.size();
      for (std::size_t e = 0; ok && e < back.entries.size(); ++e) {
        const Tensor& a = back.entries[e].second;
        const Tensor& b = ck.entries[e].second;
        ok = back.entries[e].first == ck.entries[e].first && a.numel() == b.numel();
        for (std::size_t i = 0; ok && i < a.numel(); ++i) ok = a.at(i) == b.at(i);
      }
      if (!ok) detail = "round-trip drift";
      fs::remove(path);
    } catch (const std::exception& e) {
      ok = false;
      detail = e.what();
    }
    out.push_back({"checkpoint round-trip", ok, detail});
  }
  return out;
}

}  // namespace dvit
