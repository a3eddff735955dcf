// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "dvit/kd.hpp"
#include "dvit/ops.hpp"
#include "dvit/tape.hpp"
#include "oracles.hpp"

using namespace dvit;

TEST_CASE("identical token rows give uniform token weights") {
  std::mt19937 rng(5);
  const std::size_t d = 6, n = 4;
  Tensor cls = Tensor::randn({d}, rng, 1.0f);
  Tensor wq = Tensor::randn({d, d}, rng, 0.3f);
  Tensor wk = Tensor::randn({d, d}, rng, 0.3f);
  Tensor row = Tensor::randn({1, d}, rng, 1.0f);
  Tensor res = concat({row, row, row, row}, 0);
  Tensor w = token_weights(cls, res, wq, wk);
  REQUIRE(w.shape() == Shape{n});
  for (std::size_t i = 0; i < n; ++i)
    CHECK(oracles::rel_err(w.data()[i], 1.0 / n) < 1e-6);
}

TEST_CASE("scores 0 and ln 3 weight the tokens 1:3") {
  // d=1 makes the score equal to cls * res_j directly (sqrt(1) = 1).
  Tensor cls({1}, std::vector<float>{1.0f});
  Tensor wq({1, 1}, std::vector<float>{1.0f});
  Tensor wk({1, 1}, std::vector<float>{1.0f});
  Tensor res({2, 1}, std::vector<float>{0.0f, std::log(3.0f)});
  Tensor s = token_weight_scores(cls, res, wq, wk);
  CHECK(oracles::rel_err(s.data()[0], 0.0) < 1e-6);
  CHECK(oracles::rel_err(s.data()[1], std::log(3.0)) < 1e-6);
  Tensor w = token_weights(cls, res, wq, wk);
  CHECK(oracles::rel_err(w.data()[0], 0.25) < 1e-6);
  CHECK(oracles::rel_err(w.data()[1], 0.75) < 1e-6);
}

TEST_CASE("token weights ignore a uniform score shift") {
  // cls = e0 with identity projections: shifting the first channel of every
  // token row shifts every score by the same amount.
  const std::size_t d = 2, n = 3;
  Tensor cls({d}, std::vector<float>{1.0f, 0.0f});
  Tensor eye({d, d}, std::vector<float>{1, 0, 0, 1});
  std::mt19937 rng(7);
  Tensor res = Tensor::randn({n, d}, rng, 1.0f);
  Tensor w0 = token_weights(cls, res, eye, eye);
  Tensor shifted = res.clone();
  for (std::size_t i = 0; i < n; ++i) shifted.data()[i * d] += 2.5f;
  Tensor w1 = token_weights(cls, shifted, eye, eye);
  for (std::size_t i = 0; i < n; ++i)
    CHECK(oracles::rel_err(w0.data()[i], w1.data()[i]) < 1e-5);
}

TEST_CASE("token weights are a distribution and never recorded") {
  std::mt19937 rng(11);
  const std::size_t d = 8, n = 5;
  Tensor cls = Tensor::randn({d}, rng, 1.0f);
  Tensor wq = Tensor::randn({d, d}, rng, 0.3f);
  Tensor wk = Tensor::randn({d, d}, rng, 0.3f);
  Tensor res = oracles::random_tensor({n, d}, rng, 1.0f, true);
  Tape tape;
  tape.watch(res);
  Tensor w = token_weights(cls, res, wq, wk);
  CHECK(!tape.flows(w));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(w.data()[i] > 0.0f);
    CHECK(w.data()[i] < 1.0f);
    total += w.data()[i];
  }
  CHECK(std::fabs(total - 1.0) < 1e-6);
}

TEST_CASE("two teachers split the mass fixed-share to residual") {
  std::mt19937 rng(3);
  const std::size_t d = 4, n = 3;
  Tensor cls = Tensor::randn({d}, rng, 1.0f);
  std::vector<Tensor> toks = {Tensor::randn({n, d}, rng, 1.0f),
                              Tensor::randn({n, d}, rng, 5.0f)};
  KDConfig cfg;  // fixed 0.8 at index 0
  Tensor w = teacher_weights(cls, toks, cfg);
  CHECK(w.data()[0] == 0.8f);
  CHECK(oracles::rel_err(w.data()[1], 0.2) < 1e-6);
}

TEST_CASE("equal non-reference responses share the residual evenly") {
  const std::size_t d = 1, n = 2;
  Tensor cls({d}, std::vector<float>{1.0f});
  Tensor same = Tensor::full({n, d}, 0.7f);
  std::vector<Tensor> toks = {Tensor::full({n, d}, 9.0f), same, same.clone()};
  KDConfig cfg;
  Tensor w = teacher_weights(cls, toks, cfg);
  CHECK(w.data()[0] == 0.8f);
  CHECK(oracles::rel_err(w.data()[1], 0.1) < 1e-6);
  CHECK(oracles::rel_err(w.data()[2], 0.1) < 1e-6);
}

TEST_CASE("response gap of ln 4 splits the residual 1:4") {
  const std::size_t d = 1, n = 2;
  Tensor cls({d}, std::vector<float>{1.0f});
  std::vector<Tensor> toks = {Tensor::full({n, d}, -3.0f), Tensor::full({n, d}, 1.0f),
                              Tensor::full({n, d}, 1.0f + std::log(4.0f))};
  KDConfig cfg;
  Tensor w = teacher_weights(cls, toks, cfg);
  CHECK(w.data()[0] == 0.8f);
  CHECK(oracles::rel_err(w.data()[1], 0.04) < 1e-6);
  CHECK(oracles::rel_err(w.data()[2], 0.16) < 1e-6);
  double total = w.data()[0] + w.data()[1] + w.data()[2];
  CHECK(std::fabs(total - 1.0) < 1e-6);
}

TEST_CASE("non-reference ranking is shift invariant") {
  std::mt19937 rng(17);
  const std::size_t d = 4, n = 5;
  Tensor cls({d}, std::vector<float>{1, 0, 0, 0});
  std::vector<Tensor> toks;
  for (int i = 0; i < 4; ++i) toks.push_back(Tensor::randn({n, d}, rng, 1.0f));
  KDConfig cfg;
  cfg.clip_index = 1;
  Tensor w0 = teacher_weights(cls, toks, cfg);
  // Shift channel 0 of every non-reference teacher's tokens by the same c.
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i == cfg.clip_index) continue;
    for (std::size_t r = 0; r < n; ++r) toks[i].data()[r * d] += 3.25f;
  }
  Tensor w1 = teacher_weights(cls, toks, cfg);
  auto best = [&](const Tensor& w) {
    std::size_t arg = 0;
    float bv = -1.0f;
    for (std::size_t i = 0; i < w.numel(); ++i)
      if (i != cfg.clip_index && w.data()[i] > bv) {
        bv = w.data()[i];
        arg = i;
      }
    return arg;
  };
  CHECK(best(w0) == best(w1));
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(oracles::rel_err(w0.data()[i], w1.data()[i]) < 1e-5);
}

TEST_CASE("single-teacher weighting is rejected as degenerate") {
  Tensor cls({2}, std::vector<float>{1, 0});
  std::vector<Tensor> one = {Tensor::zeros({3, 2})};
  KDConfig cfg;
  CHECK_THROWS_AS(teacher_weights(cls, one, cfg), ConfigError);
  KDConfig bad;
  bad.clip_fixed_weight = 1.0f;
  std::vector<Tensor> two = {Tensor::zeros({3, 2}), Tensor::zeros({3, 2})};
  CHECK_THROWS_AS(teacher_weights(cls, two, bad), ConfigError);
  KDConfig oob;
  oob.clip_index = 5;
  CHECK_THROWS_AS(teacher_weights(cls, two, oob), ContractError);
}

TEST_CASE("hand case: one token, one teacher, gap of two") {
  Tensor student({1, 1}, std::vector<float>{0.0f});
  std::vector<Tensor> teachers = {Tensor({1, 1}, std::vector<float>{2.0f})};
  KDWeights w;
  w.token_w = Tensor({1}, std::vector<float>{1.0f});
  w.teacher_w = Tensor({1}, std::vector<float>{1.0f});
  Tensor loss = kd_loss(student, teachers, w);
  CHECK(loss.item() == 8.0f);  // (1 + 1/1) * (0-2)^2
}

TEST_CASE("loss matches a triple-loop oracle") {
  std::mt19937 rng(23);
  const std::size_t m = 3, n = 4, c = 5;
  Tensor student = Tensor::randn({n, c}, rng, 1.0f);
  std::vector<Tensor> teachers;
  for (std::size_t i = 0; i < m; ++i) teachers.push_back(Tensor::randn({n, c}, rng, 1.0f));
  // Any valid distributions work here.
  KDWeights w;
  w.token_w = Tensor({n}, std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f});
  w.teacher_w = Tensor({m}, std::vector<float>{0.8f, 0.04f, 0.16f});
  Tensor loss = kd_loss(student, teachers, w);

  double ref = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double mse = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double dd = double(student.at2(j, k)) - teachers[i].at2(j, k);
        mse += dd * dd;
      }
      mse /= c;
      ref += double(w.teacher_w.at(i)) * (double(w.token_w.at(j)) + 1.0 / n) * mse;
    }
  CHECK(oracles::rel_err(loss.item_precise(), ref) < 1e-6);
}

TEST_CASE("loss is zero iff students equal every teacher, else positive") {
  std::mt19937 rng(29);
  const std::size_t n = 3, c = 4;
  Tensor student = Tensor::randn({n, c}, rng, 1.0f);
  KDWeights w;
  w.token_w = Tensor::full({n}, 1.0f / n);
  w.teacher_w = Tensor({2}, std::vector<float>{0.8f, 0.2f});
  std::vector<Tensor> equal = {student.clone(), student.clone()};
  CHECK(kd_loss(student, equal, w).item() == 0.0f);

  std::vector<Tensor> off = {student.clone(), student.clone()};
  off[1].data()[5] += 0.01f;
  CHECK(kd_loss(student, off, w).item() > 0.0f);
}

TEST_CASE("uniform weights and one teacher reduce to twice the mean error") {
  std::mt19937 rng(31);
  const std::size_t n = 4, c = 3;
  Tensor student = Tensor::randn({n, c}, rng, 1.0f);
  Tensor teacher = Tensor::randn({n, c}, rng, 1.0f);
  KDWeights w;
  w.token_w = Tensor::full({n}, 1.0f / n);
  w.teacher_w = Tensor({1}, std::vector<float>{1.0f});
  Tensor loss = kd_loss(student, {teacher}, w);
  // Each token weight is 1/n + 1/n, so the loss is 2x the token-mean MSE.
  double mean_mse = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    double mse = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double dd = double(student.at2(j, k)) - teacher.at2(j, k);
      mse += dd * dd;
    }
    mean_mse += mse / c;
  }
  mean_mse /= n;
  CHECK(oracles::rel_err(loss.item_precise(), 2.0 * mean_mse) < 1e-6);

  // The effective token weights sum to 2.
  double eff = 0.0;
  for (std::size_t j = 0; j < n; ++j) eff += double(w.token_w.at(j)) + 1.0 / n;
  CHECK(std::fabs(eff - 2.0) < 1e-6);
}

TEST_CASE("permuting non-reference teachers with their weights changes nothing") {
  std::mt19937 rng(37);
  const std::size_t n = 3, c = 4;
  Tensor student = Tensor::randn({n, c}, rng, 1.0f);
  std::vector<Tensor> teachers;
  for (int i = 0; i < 3; ++i) teachers.push_back(Tensor::randn({n, c}, rng, 1.0f));
  KDWeights w;
  w.token_w = Tensor::full({n}, 1.0f / n);
  w.teacher_w = Tensor({3}, std::vector<float>{0.8f, 0.04f, 0.16f});
  const double base = kd_loss(student, teachers, w).item_precise();

  std::swap(teachers[1], teachers[2]);
  KDWeights wp;
  wp.token_w = w.token_w;
  wp.teacher_w = Tensor({3}, std::vector<float>{0.8f, 0.16f, 0.04f});
  const double perm = kd_loss(student, teachers, wp).item_precise();
  CHECK(oracles::rel_err(base, perm) < 1e-6);
}

TEST_CASE("gradients reach student and teacher token arguments") {
  std::mt19937 rng(41);
  const std::size_t n = 3, c = 4;
  Tensor student = oracles::random_tensor({n, c}, rng, 1.0f, true);
  Tensor t0 = oracles::random_tensor({n, c}, rng, 1.0f, true);
  Tensor t1 = oracles::random_tensor({n, c}, rng, 1.0f, true);
  KDWeights w;
  w.token_w = Tensor({n}, std::vector<float>{0.5f, 0.25f, 0.25f});
  w.teacher_w = Tensor({2}, std::vector<float>{0.8f, 0.2f});
  auto rep = oracles::fd_check(
      {student, t0, t1},
      [&] {
        return kd_loss(student, {t0, t1}, w);
      },
      10, rng);
  INFO(rep.worst);
  CHECK(rep.max_rel < 1e-4);

  // Weight tensors stay gradient-free even inside a taped region.
  Tape tape;
  tape.watch(student);
  Tensor loss = kd_loss(student, {t0.detached(), t1.detached()}, w);
  tape.backward(loss);
  CHECK(student.has_grad());
  CHECK(!w.token_w.has_grad());
  CHECK(!w.teacher_w.has_grad());
}

TEST_CASE("mismatched teacher and weight counts are rejected") {
  Tensor student = Tensor::zeros({2, 2});
  std::vector<Tensor> teachers = {Tensor::zeros({2, 2}), Tensor::zeros({2, 2})};
  KDWeights w;
  w.token_w = Tensor::full({2}, 0.5f);
  w.teacher_w = Tensor({3}, std::vector<float>{0.5f, 0.25f, 0.25f});
  CHECK_THROWS_AS(kd_loss(student, teachers, w), ContractError);
  w.teacher_w = Tensor({2}, std::vector<float>{0.5f, 0.5f});
  w.token_w = Tensor::full({3}, 1.0f / 3);
  CHECK_THROWS_AS(kd_loss(student, teachers, w), ContractError);
  w.token_w = Tensor::full({2}, 0.5f);
  std::vector<Tensor> badshape = {Tensor::zeros({2, 2}), Tensor::zeros({2, 3})};
  CHECK_THROWS_AS(kd_loss(student, badshape, w), ShapeError);
}

TEST_CASE("total combines the terms linearly") {
  KDConfig cfg;  // lambda 0.5
  Tensor text = Tensor::scalar(1.0f);
  Tensor kd = Tensor::scalar(2.0f);
  CHECK(total_loss(text, kd, cfg).item() == 2.0f);
  KDConfig off;
  off.lambda_kd = 0.0f;
  CHECK(total_loss(text, kd, off).item() == text.item());
  KDConfig neg;
  neg.lambda_kd = -1.0f;
  CHECK_THROWS_AS(total_loss(text, kd, neg), ConfigError);
}

TEST_CASE("gradient of the total is the weighted sum of term gradients") {
  std::mt19937 rng(43);
  const std::size_t n = 3, c = 4;
  KDConfig cfg;  // lambda 0.5
  Tensor x = oracles::random_tensor({n, c}, rng, 1.0f, true);
  Tensor target = Tensor::randn({n, c}, rng, 1.0f);
  Tensor teacher = Tensor::randn({n, c}, rng, 1.0f);
  KDWeights w;
  w.token_w = Tensor::full({n}, 1.0f / n);
  w.teacher_w = Tensor({1}, std::vector<float>{1.0f});

  std::vector<float> g_text, g_kd, g_total;
  {
    Tape tape;
    tape.watch(x);
    tape.backward(mse(x, target));
    g_text = x.grad();
  }
  {
    Tape tape;
    tape.watch(x);
    tape.backward(kd_loss(x, {teacher}, w));
    g_kd = x.grad();
  }
  {
    Tape tape;
    tape.watch(x);
    tape.backward(total_loss(mse(x, target), kd_loss(x, {teacher}, w), cfg));
    g_total = x.grad();
  }
  for (std::size_t i = 0; i < g_total.size(); ++i)
    CHECK(oracles::rel_err(g_total[i], double(g_text[i]) + 0.5 * double(g_kd[i])) <
          1e-5);
}
