// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "sorbet/fixed_tensor.hpp"
#include "sorbet/kernels.hpp"

namespace sorbet {

/// Nearest power-of-two exponent of a positive step size (ties round up).
int pow2_scale(double alpha);

/// Parameters of the elastic activation quantizer
///   q = clip(round((x - beta) / 2^k_alpha), 0, max_level),
/// value = q * 2^k_alpha + beta-grid offset handled by the caller. The step
/// alpha is snapped to the power of two 2^k_alpha so quantization is a
/// subtract, a rounding add and a shift.
struct ElasticParams {
  double alpha = 1.0;  // requested step, before snapping (reported only)
  double beta = 0.0;   // zero offset, snapped to the input grid at use
  int k_alpha = 0;     // snapped step exponent: step = 2^k_alpha
  int bits = 4;
  std::int64_t max_level = 15;

  static ElasticParams from_alpha_beta(double alpha, double beta, int bits,
                                       std::optional<std::int64_t> max_level =
                                           std::nullopt);

  /// Range calibration: beta = min(samples), alpha = span / max_level
  /// (alpha = 1 when the sample range is degenerate).
  static ElasticParams calibrate(std::span<const double> samples, int bits,
                                 std::optional<std::int64_t> max_level =
                                     std::nullopt);
};

/// Integer quantization levels in [0, max_level] (frac_bits 0). Pure integer
/// pipeline: per element one subtract, one rounding add (when the net shift
/// is right), one shift.
FixedTensor elastic_quantize_levels(const FixedTensor& x,
                                    const ElasticParams& p);

/// Quantized values back on the input grid: (level << k_alpha) + beta, with
/// beta snapped to the grid. The grid must be able to represent the step
/// (frac_bits + k_alpha >= 0).
FixedTensor elastic_binarize(const FixedTensor& x, const ElasticParams& p);

/// Quantizes a power-of-two distribution onto the level grid 1/T for a
/// power-of-two T: level_i = clip(round(2^{e_i} * T), 0, T). Exact for
/// e_i >= -log2(T); one shift per element.
FixedTensor quantize_pow2_to_levels(const Pow2Distribution& dist,
                                    std::size_t timesteps);

/// A binary (sign) weight matrix with one power-of-two scale:
/// W = 2^scale_exponent * signs, mapping [... x rows] -> [... x cols].
/// out_bias (empty = none) is added to each output row.
struct BinaryLinear {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> signs;  // row-major, each +1 or -1
  int scale_exponent = 0;
  FixedTensor out_bias;

  int sign(std::size_t r, std::size_t c) const {
    return signs[r * cols + c];
  }
  void validate() const;
};

/// Binarizes a real weight matrix: signs = sign(w) (zeros count as +1) and
/// the scale exponent minimizing the L2 reconstruction error over the five
/// candidates centered on the nearest power of two of mean |w|.
BinaryLinear binarize_weights(std::span<const double> w, std::size_t rows,
                              std::size_t cols);

/// Integer level-domain forward through a binary linear layer: the
/// multiplier-free arithmetic an accumulator array would do, used by the
/// non-spiking quantized stages and as the oracle twin of the spiking
/// matmul. Output conventions (frac placement, bias handling, 64-bit width)
/// match spiking_matmul exactly; values are in units of the caller's level
/// grid. Counts rows*cols multiplies per output row plus the accumulation
/// adds, i.e. the dense-ANN cost this library's spiking path is measured
/// against.
FixedTensor level_matmul(const FixedTensor& levels, const BinaryLinear& w);

/// Level-domain forward against a fixed-point right operand; oracle twin of
/// the fixed-rhs spiking_matmul, same output conventions.
FixedTensor level_matmul(const FixedTensor& levels, const FixedTensor& rhs,
                         int level_exponent);

}  // namespace sorbet
