// SPDX-License-Identifier: Apache-2.0
#include "sorbet/spiking.hpp"

#include <ostream>
#include <stdexcept>

#include "sorbet/detail/bits.hpp"
#include "sorbet/op_counter.hpp"

namespace sorbet {
namespace {

std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t r;
  if (__builtin_add_overflow(a, b, &r))
    throw std::overflow_error("accumulator overflow");
  return r;
}

bool threshold_and_reset(NeuronState& s) {
  if (s.v < s.theta) return false;
  if (s.reset == ResetMode::subtract)
    s.v -= s.theta;
  else
    s.v = 0;
  return true;
}

}  // namespace

void NeuronState::validate() const {
  if (theta <= v_rest)
    throw std::logic_error("threshold must exceed resting potential");
  if (tau_m_log2 < 0 || tau_m_log2 > 62)
    throw std::logic_error("tau_m_log2 out of range");
  if (frac_bits < 0 || frac_bits > 62)
    throw std::logic_error("frac_bits out of range");
}

bool if_step(NeuronState& s, std::int64_t i_syn) {
  s.validate();
  // dv = (I - V + V_rest) / tau_m, the leak division done by shift.
  std::int64_t drive = checked_add(i_syn, -s.v);
  drive = checked_add(drive, s.v_rest);
  s.v = checked_add(s.v, drive >> s.tau_m_log2);
  return threshold_and_reset(s);
}

bool integrate_fire_step(NeuronState& s, std::int64_t i_syn) {
  s.validate();
  s.v = checked_add(s.v, i_syn);
  return threshold_and_reset(s);
}

SpikeTrain::SpikeTrain(std::size_t timesteps,
                       std::vector<std::size_t> feature_shape)
    : timesteps_(timesteps), feature_shape_(std::move(feature_shape)) {
  if (timesteps == 0) throw std::invalid_argument("timesteps must be >= 1");
  feature_size_ = 1;
  for (std::size_t d : feature_shape_) feature_size_ *= d;
  bits_.assign(timesteps_ * feature_size_, 0);
}

std::uint64_t SpikeTrain::total_spikes() const {
  std::uint64_t n = 0;
  for (std::uint8_t b : bits_) n += b;
  return n;
}

double SpikeTrain::rate() const {
  if (bits_.empty()) return 0.0;
  return static_cast<double>(total_spikes()) /
         static_cast<double>(bits_.size());
}

void SpikeTrain::write_raster_csv(std::ostream& os) const {
  os << "t,index\n";
  for (std::size_t t = 0; t < timesteps_; ++t)
    for (std::size_t i = 0; i < feature_size_; ++i)
      if (spike(t, i)) os << t << ',' << i << '\n';
}

SpikeTrain encode_rate(const FixedTensor& levels, std::size_t timesteps) {
  if (levels.frac_bits() != 0)
    throw std::invalid_argument("rate coding expects integer levels");
  SpikeTrain train(timesteps, levels.shape());
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const std::int64_t q = levels.mantissa(i);
    if (q < 0 || q > static_cast<std::int64_t>(timesteps))
      throw std::domain_error("level exceeds encoding capacity");
    for (std::int64_t t = 0; t < q; ++t) train.set_spike(t, i, true);
  }
  return train;
}

FixedTensor decode_counts(const SpikeTrain& train) {
  FixedTensor out(train.feature_shape(), 0, 64);
  for (std::size_t i = 0; i < train.feature_size(); ++i) {
    std::int64_t n = 0;
    for (std::size_t t = 0; t < train.timesteps(); ++t)
      if (train.spike(t, i)) ++n;
    out.set_mantissa(i, n);
  }
  return out;
}

FixedTensor spiking_matmul(const SpikeTrain& train, const BinaryLinear& w) {
  w.validate();
  const auto& fs = train.feature_shape();
  if (fs.empty() || fs.back() != w.rows)
    throw std::invalid_argument("inner dimension mismatch");
  const std::size_t m = w.rows, p = w.cols;
  const std::size_t batch = train.feature_size() / m;

  std::vector<std::size_t> out_shape = fs;
  out_shape.back() = p;
  std::vector<std::int64_t> acc(batch * p, 0);

  std::uint64_t spikes = 0;
  for (std::size_t t = 0; t < train.timesteps(); ++t) {
    for (std::size_t i = 0; i < train.feature_size(); ++i) {
      if (!train.spike(t, i)) continue;
      ++spikes;
      const std::size_t b = i / m, k = i % m;
      std::int64_t* row = acc.data() + b * p;
      const std::int8_t* sg = w.signs.data() + k * p;
      for (std::size_t j = 0; j < p; ++j)
        row[j] = checked_add(row[j], sg[j]);
    }
  }
  ops::add(spikes * p);

  const int fo = w.scale_exponent < 0 ? -w.scale_exponent : 0;
  const int up = w.scale_exponent > 0 ? w.scale_exponent : 0;
  FixedTensor out(out_shape, fo, 64);
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.set_mantissa(i, detail::scale_shift(acc[i], up));
  ops::shift(acc.size());

  if (w.out_bias.size() != 0) {
    const int delta = fo - w.out_bias.frac_bits();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < p; ++j)
        out.set_mantissa(b * p + j,
                         checked_add(out.mantissa(b * p + j),
                                     detail::scale_shift(
                                         w.out_bias.mantissa(j), delta)));
    ops::add(acc.size());
  }
  return out;
}

FixedTensor spiking_matmul(const SpikeTrain& train, const FixedTensor& rhs,
                           int level_exponent) {
  if (rhs.rank() != 2) throw std::invalid_argument("rhs must be 2-D");
  const auto& fs = train.feature_shape();
  const std::size_t m = rhs.shape()[0], p = rhs.shape()[1];
  if (fs.empty() || fs.back() != m)
    throw std::invalid_argument("inner dimension mismatch");
  const std::size_t batch = train.feature_size() / m;

  std::vector<std::size_t> out_shape = fs;
  out_shape.back() = p;
  std::vector<std::int64_t> acc(batch * p, 0);

  std::uint64_t spikes = 0;
  for (std::size_t t = 0; t < train.timesteps(); ++t) {
    for (std::size_t i = 0; i < train.feature_size(); ++i) {
      if (!train.spike(t, i)) continue;
      ++spikes;
      const std::size_t b = i / m, k = i % m;
      std::int64_t* row = acc.data() + b * p;
      for (std::size_t j = 0; j < p; ++j)
        row[j] = checked_add(row[j], rhs.mantissa(k * p + j));
    }
  }
  ops::add(spikes * p);

  const int fo_raw = rhs.frac_bits() - level_exponent;
  const int fo = fo_raw >= 0 ? fo_raw : 0;
  const int up = fo_raw >= 0 ? 0 : -fo_raw;
  FixedTensor out(out_shape, fo, 64);
  for (std::size_t i = 0; i < acc.size(); ++i)
    out.set_mantissa(i, detail::scale_shift(acc[i], up));
  ops::shift(acc.size());
  return out;
}

}  // namespace sorbet
