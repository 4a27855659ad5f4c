// SPDX-License-Identifier: Apache-2.0
#include "sorbet/distill.hpp"

#include <cmath>
#include <stdexcept>

namespace sorbet {
namespace {

void check_rows(const std::vector<std::vector<double>>& a,
                const std::vector<std::vector<double>>& b,
                const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(what);
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].size() != b[i].size()) throw std::invalid_argument(what);
}

}  // namespace

double kl_logits_loss(const std::vector<std::vector<double>>& teacher_probs,
                      const std::vector<std::vector<double>>& student_probs) {
  check_rows(teacher_probs, student_probs, "probability shape mismatch");
  if (teacher_probs.empty()) throw std::invalid_argument("empty batch");
  long double total = 0.0L;
  for (std::size_t b = 0; b < teacher_probs.size(); ++b) {
    for (std::size_t i = 0; i < teacher_probs[b].size(); ++i) {
      const double p = teacher_probs[b][i];
      const double q = student_probs[b][i];
      if (p < 0.0) throw std::domain_error("negative teacher probability");
      if (!(q > 0.0)) throw std::domain_error("student probability must be > 0");
      if (p > 0.0) total += static_cast<long double>(p) * std::log(p / q);
    }
  }
  return static_cast<double>(total / teacher_probs.size());
}

double reps_mse_loss(const std::vector<std::vector<double>>& teacher_reps,
                     const std::vector<std::vector<double>>& student_reps) {
  check_rows(teacher_reps, student_reps, "representation shape mismatch");
  long double total = 0.0L;
  for (std::size_t b = 0; b < teacher_reps.size(); ++b)
    for (std::size_t i = 0; i < teacher_reps[b].size(); ++i) {
      const long double d = student_reps[b][i] - teacher_reps[b][i];
      total += d * d;
    }
  return static_cast<double>(total);
}

double distill_loss(const DistillBatch& batch) {
  return kl_logits_loss(batch.teacher_probs, batch.student_probs) +
         reps_mse_loss(batch.teacher_reps, batch.student_reps);
}

DistillGrads distill_grads(const DistillBatch& batch) {
  check_rows(batch.teacher_probs, batch.student_probs,
             "probability shape mismatch");
  check_rows(batch.teacher_reps, batch.student_reps,
             "representation shape mismatch");
  if (batch.teacher_probs.empty()) throw std::invalid_argument("empty batch");

  DistillGrads g;
  const double inv_b = 1.0 / static_cast<double>(batch.teacher_probs.size());
  g.d_student_probs.resize(batch.student_probs.size());
  for (std::size_t b = 0; b < batch.student_probs.size(); ++b) {
    g.d_student_probs[b].resize(batch.student_probs[b].size());
    for (std::size_t i = 0; i < batch.student_probs[b].size(); ++i) {
      const double q = batch.student_probs[b][i];
      if (!(q > 0.0)) throw std::domain_error("student probability must be > 0");
      g.d_student_probs[b][i] = -batch.teacher_probs[b][i] / q * inv_b;
    }
  }
  g.d_student_reps.resize(batch.student_reps.size());
  for (std::size_t b = 0; b < batch.student_reps.size(); ++b) {
    g.d_student_reps[b].resize(batch.student_reps[b].size());
    for (std::size_t i = 0; i < batch.student_reps[b].size(); ++i)
      g.d_student_reps[b][i] =
          2.0 * (batch.student_reps[b][i] - batch.teacher_reps[b][i]);
  }
  return g;
}

}  // namespace sorbet
