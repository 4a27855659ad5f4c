// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "sorbet/distill.hpp"

using namespace sorbet;

TEST_CASE("kl loss on known distributions") {
  CHECK(kl_logits_loss({{1.0, 0.0}}, {{0.5, 0.5}}) ==
        doctest::Approx(std::log(2.0)));
  CHECK(kl_logits_loss({{0.25, 0.75}}, {{0.25, 0.75}}) ==
        doctest::Approx(0.0));
  // batch averaging
  CHECK(kl_logits_loss({{1.0, 0.0}, {1.0, 0.0}},
                       {{0.5, 0.5}, {1.0, 1e-12}}) ==
        doctest::Approx(std::log(2.0) / 2.0));
  // zero teacher mass contributes nothing even against tiny student mass
  CHECK(kl_logits_loss({{0.0, 1.0}}, {{1e-300, 1.0}}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(kl_logits_loss({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(kl_logits_loss({{1.0}}, {{1.0, 0.0}}),
                  std::invalid_argument);
  CHECK_THROWS_AS(kl_logits_loss({{1.0, 0.0}}, {{1.0, 0.0}}),
                  std::domain_error);  // zero student probability
}

TEST_CASE("representation loss is a summed squared distance") {
  CHECK(reps_mse_loss({{0.0, 0.0}}, {{1.0, 2.0}}) == doctest::Approx(5.0));
  CHECK(reps_mse_loss({{1.0}, {2.0}}, {{0.0}, {0.0}}) == doctest::Approx(5.0));
  CHECK(reps_mse_loss({{3.0}}, {{3.0}}) == doctest::Approx(0.0));
}

TEST_CASE("combined objective") {
  DistillBatch b;
  b.teacher_probs = {{1.0, 0.0}};
  b.student_probs = {{0.5, 0.5}};
  b.teacher_reps = {{0.0}};
  b.student_reps = {{2.0}};
  CHECK(distill_loss(b) == doctest::Approx(std::log(2.0) + 4.0));
}

TEST_CASE("analytic gradients") {
  DistillBatch b;
  b.teacher_probs = {{0.5, 0.5}, {1.0, 0.0}};
  b.student_probs = {{0.25, 0.75}, {0.5, 0.5}};
  b.teacher_reps = {{1.0, -1.0}};
  b.student_reps = {{2.0, 0.5}};
  const DistillGrads g = distill_grads(b);
  // dq = -p / (q B) with B = 2
  CHECK(g.d_student_probs[0][0] == doctest::Approx(-0.5 / (0.25 * 2)));
  CHECK(g.d_student_probs[0][1] == doctest::Approx(-0.5 / (0.75 * 2)));
  CHECK(g.d_student_probs[1][0] == doctest::Approx(-1.0 / (0.5 * 2)));
  CHECK(g.d_student_probs[1][1] == doctest::Approx(0.0));
  // dr = 2 (r_s - r_t)
  CHECK(g.d_student_reps[0][0] == doctest::Approx(2.0));
  CHECK(g.d_student_reps[0][1] == doctest::Approx(3.0));
}

TEST_CASE("gradients match central finite differences") {
  std::mt19937_64 rng(70);
  auto rand01 = [&] {
    return 0.05 + 0.9 * (static_cast<double>(rng() % 100000) / 99999.0);
  };
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = 1 + rng() % 3, k = 2 + rng() % 4;
    DistillBatch b;
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<double> p(k), q(k);
      double sp = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        p[i] = rand01();
        q[i] = rand01();
        sp += p[i];
        sq += q[i];
      }
      for (std::size_t i = 0; i < k; ++i) {
        p[i] /= sp;
        q[i] /= sq;
      }
      b.teacher_probs.push_back(p);
      b.student_probs.push_back(q);
    }
    b.teacher_reps = {{rand01(), rand01()}};
    b.student_reps = {{rand01(), rand01()}};

    const DistillGrads g = distill_grads(b);
    const double h = 1e-6;
    auto fd_check = [&](double got, double fd) {
      const double rel =
          std::fabs(fd - got) / std::max(std::fabs(fd) + std::fabs(got), 1e-6);
      CHECK(rel < 1e-4);
    };
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < k; ++i) {
        DistillBatch hi = b, lo = b;
        hi.student_probs[r][i] += h;
        lo.student_probs[r][i] -= h;
        fd_check(g.d_student_probs[r][i],
                 (distill_loss(hi) - distill_loss(lo)) / (2 * h));
      }
    for (std::size_t i = 0; i < 2; ++i) {
      DistillBatch hi = b, lo = b;
      hi.student_reps[0][i] += h;
      lo.student_reps[0][i] -= h;
      fd_check(g.d_student_reps[0][i],
               (distill_loss(hi) - distill_loss(lo)) / (2 * h));
    }
  }
}
