// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "sorbet/fixed_tensor.hpp"

namespace sorbet {

/// A distribution whose entries are exact powers of two: value_i =
/// 2^exponents[i]. Produced by the shift-based softmax; downstream consumers
/// (attention, spike quantizers) work directly on the exponents.
struct Pow2Distribution {
  std::vector<int> exponents;

  double value(std::size_t i) const;
  std::vector<double> values() const;
  std::size_t size() const { return exponents.size(); }
};

/// Reference softmax (base e), numerically stabilized. Instrumented as the
/// textbook operator: n exp, n-1 add, n div.
std::vector<double> softmax_ref(std::span<const double> z);

/// Base-2 softmax: 2^{z_i} / sum_j 2^{z_j}. Same counting scheme with
/// base-2 exponentials.
std::vector<double> base2_softmax_ref(std::span<const double> z);

/// Shift-based softmax over one row of fixed-point scores.
///
/// Each score is (optionally) clamped from above, ceiled to an integer
/// exponent e_i, the ceiled powers are summed in a finite-width accumulator,
/// the sum is snapped to a power of two 2^k under k_mode, and the result is
/// the power-of-two distribution 2^{e_i - k}. Division never happens: the
/// normalization is the subtraction e_i - k, realized in hardware as a right
/// shift by k.
///
/// clamp_max, when present, is snapped to the score grid. Cost: n-1 add,
/// n sub, n shift, 1 LUT.
Pow2Distribution ptsoftmax(const FixedTensor& scores,
                           std::optional<FixedScalar> clamp_max,
                           Pow2Round k_mode);

/// Root-mean-square norm reference: x_i / sqrt(mean(x^2)).
std::vector<double> rmsln_ref(std::span<const double> x);

/// Reference layer normalization with affine parameters. Throws on zero
/// variance. Instrumented with a divide-by-sigma decomposition: 3n-2 add,
/// 2n sub, n mul, n+2 div, n square, 1 sqrt.
std::vector<double> layernorm_ref(std::span<const double> x,
                                  std::span<const double> gamma,
                                  std::span<const double> beta);

/// ReLU on fixed-point data. Sign selection only; no counted arithmetic.
FixedTensor relu(const FixedTensor& x);

/// How channels are folded into norm groups for a model with h heads and C
/// channels: `head_groups` makes h groups of C/h channels;
/// `channel_groups` makes C/h groups of h channels.
enum class GroupLayout { head_groups, channel_groups };

/// State for the shift-based power normalization layer. gamma/beta are the
/// affine parameters; psi is the running root-mean-square statistic updated
/// by the training path and frozen for inference. In pow2_scale_mode the
/// per-channel scale gamma/psi is snapped to an exact power of two so the
/// inference path is all shifts and adds.
struct BspnState {
  std::size_t channels = 0;
  std::size_t num_groups = 1;
  GroupLayout layout = GroupLayout::head_groups;
  double momentum_alpha = 0.9;
  bool pow2_scale_mode = true;

  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> psi;

  // Frozen inference parameters (valid when frozen == true).
  bool frozen = false;
  int frozen_frac_bits = kDefaultFracBits;
  std::vector<int> scale_exponents;      // pow2 mode: log2(gamma/psi) snapped
  std::vector<double> scale_factors;     // generic mode: gamma/psi
  std::vector<std::int64_t> beta_mantissas;

  /// Uniform initialization: gamma = 1, beta = 0, psi = 1.
  static BspnState make(std::size_t channels, std::size_t num_heads,
                        GroupLayout layout, bool pow2_scale_mode,
                        double momentum_alpha = 0.9);

  std::size_t group_count() const;
  std::size_t group_size() const;

  /// Precomputes the inference-side scale/offset constants on the given
  /// activation grid. In pow2 mode every gamma/psi must be positive.
  void freeze(int frac_bits);

  void validate() const;
};

struct GroupScaleResult {
  FixedTensor scaled;
  /// One entry per (row, group): the divisor exponent, i.e. the input was
  /// divided by 2^log_scales[...]. All-zero groups get 0.
  std::vector<int> log_scales;
};

/// First half of the shift-based norm: per group, sum |x| in the mantissa
/// domain, snap the sum to a power of two (default: ceil) and divide the
/// group by it via arithmetic shift (floor rounding, binary point
/// unchanged). The last tensor dimension is the channel axis; leading
/// dimensions are treated as rows. Cost per group of n: n-1 add, n shift,
/// 1 LUT.
GroupScaleResult bspn_group_scale(const FixedTensor& x,
                                  std::size_t num_groups,
                                  Pow2Round mode = Pow2Round::ceil);

/// Training-path forward over a batch [B x C] in real arithmetic (offline
/// path; precision is not constrained). Applies group scaling, normalizes by
/// the running psi, applies the affine pair, and updates psi from the batch
/// second moment: psi^2 <- alpha psi^2 + (1-alpha) sigma_B^2. Returns the
/// output snapped back to the input grid.
FixedTensor bspn_forward_train(const FixedTensor& x, BspnState& state);

/// Inference forward on fixed-point data using the frozen constants. In
/// pow2_scale_mode this is shifts and adds only: per row, group scaling
/// (n-1 add, n shift, 1 LUT per group) then a per-channel scale shift and
/// offset add (n shift, n add). Last dimension is the channel axis.
FixedTensor bspn_forward_infer(const FixedTensor& x, const BspnState& state);

}  // namespace sorbet
