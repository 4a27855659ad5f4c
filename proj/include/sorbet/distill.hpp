// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

namespace sorbet {

/// One distillation batch against a frozen teacher. Probability rows are
/// post-softmax class distributions (student entries must be positive);
/// representations are flattened per-block feature maps.
struct DistillBatch {
  std::vector<std::vector<double>> teacher_probs;  // [B][K]
  std::vector<std::vector<double>> student_probs;  // [B][K]
  std::vector<std::vector<double>> teacher_reps;   // [blocks][...]
  std::vector<std::vector<double>> student_reps;   // [blocks][...]
};

/// Prediction-branch loss: KL(p || q) = sum_i p_i log(p_i / q_i), averaged
/// over the batch rows. Zero teacher entries contribute nothing.
double kl_logits_loss(const std::vector<std::vector<double>>& teacher_probs,
                      const std::vector<std::vector<double>>& student_probs);

/// Representation-branch loss: the squared Frobenius distance summed over
/// blocks.
double reps_mse_loss(const std::vector<std::vector<double>>& teacher_reps,
                     const std::vector<std::vector<double>>& student_reps);

/// Combined objective: kl_logits_loss + reps_mse_loss.
double distill_loss(const DistillBatch& batch);

/// Gradients of distill_loss with respect to the student quantities, the
/// teacher being frozen. The probability gradient treats each student
/// probability as a free variable: d/dq_i = -p_i / (q_i * B). The
/// representation gradient is 2 (r_s - r_t).
struct DistillGrads {
  std::vector<std::vector<double>> d_student_probs;
  std::vector<std::vector<double>> d_student_reps;
};

DistillGrads distill_grads(const DistillBatch& batch);

}  // namespace sorbet
