// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "sorbet/fixed_tensor.hpp"
#include "sorbet/quantize.hpp"

namespace sorbet {

enum class ResetMode { subtract, to_zero };

/// Membrane state of one integrate-and-fire neuron, in fixed point. The
/// membrane time constant is a power of two (tau_m = 2^tau_m_log2) so the
/// leak divides by shift.
struct NeuronState {
  std::int64_t v = 0;       // membrane potential mantissa
  std::int64_t theta = 0;   // firing threshold mantissa, > v_rest
  std::int64_t v_rest = 0;  // resting potential mantissa
  int frac_bits = kDefaultFracBits;
  int tau_m_log2 = 0;  // tau_m in units of the simulation step
  ResetMode reset = ResetMode::subtract;

  void validate() const;
};

/// One discrete-time step of the leaky membrane update
///   v += (i_syn - v + v_rest) >> tau_m_log2,
/// followed by the threshold test. Returns true when the neuron fires;
/// firing subtracts theta (or zeroes v, per reset mode).
bool if_step(NeuronState& s, std::int64_t i_syn);

/// One step of the pure accumulator used by the rate encoder: v += i_syn,
/// fire on v >= theta. Same threshold/reset contract as if_step but without
/// the leak, so a constant drive of theta*q/T over T steps yields exactly q
/// spikes.
bool integrate_fire_step(NeuronState& s, std::int64_t i_syn);

/// A binary spike tensor over T timesteps. Feature shape is the shape of
/// the encoded tensor; bits are stored [t][flat_feature_index].
class SpikeTrain {
 public:
  SpikeTrain(std::size_t timesteps, std::vector<std::size_t> feature_shape);

  std::size_t timesteps() const { return timesteps_; }
  const std::vector<std::size_t>& feature_shape() const {
    return feature_shape_;
  }
  std::size_t feature_size() const { return feature_size_; }

  bool spike(std::size_t t, std::size_t i) const {
    return bits_[t * feature_size_ + i] != 0;
  }
  void set_spike(std::size_t t, std::size_t i, bool v) {
    bits_[t * feature_size_ + i] = v ? 1 : 0;
  }

  std::uint64_t total_spikes() const;
  /// Spikes per neuron per timestep, in [0, 1].
  double rate() const;

  /// Raster dump: one "t,index" line per spike, with a header row.
  void write_raster_csv(std::ostream& os) const;

 private:
  std::size_t timesteps_ = 0;
  std::size_t feature_size_ = 0;
  std::vector<std::size_t> feature_shape_;
  std::vector<std::uint8_t> bits_;
};

/// Deterministic rate coding of an integer level tensor (frac_bits must be
/// 0, levels in [0, T]): level q emits a spike in each of the first q
/// timesteps, so the spike count equals the level exactly.
SpikeTrain encode_rate(const FixedTensor& levels, std::size_t timesteps);

/// Inverse of encode_rate up to spike timing: per-neuron spike counts as an
/// integer tensor.
FixedTensor decode_counts(const SpikeTrain& train);

/// Spiking matmul against binary weights. The train encodes rows of shape
/// [... x m]; w is [m x p]. For each spike at (t, ..., i) the signed weight
/// row i is accumulated into the output row: exactly (total spikes) * p
/// signed additions and no multiplications. The weight scale 2^w.scale_exponent
/// is folded in by shift (p shifts per output row), and w.out_bias, when
/// present, is added per output element. Result is a 64-bit-wide tensor of
/// shape [... x p] whose values are sum_i levels_i * (+-2^scale) (times the
/// caller's level grid, which is tracked outside).
FixedTensor spiking_matmul(const SpikeTrain& train, const BinaryLinear& w);

/// Spiking matmul against a fixed-point right operand [m x p]: spikes
/// accumulate rhs mantissa rows, again (total spikes) * p additions, no
/// multiplies. level_exponent is the log2 of the encoded tensor's level
/// grid; the result's binary point absorbs it (frac = rhs.frac -
/// level_exponent, left-shifting mantissas if that would be negative).
FixedTensor spiking_matmul(const SpikeTrain& train, const FixedTensor& rhs,
                           int level_exponent);

}  // namespace sorbet
