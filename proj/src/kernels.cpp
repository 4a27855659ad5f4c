// SPDX-License-Identifier: Apache-2.0
#include "sorbet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sorbet/detail/bits.hpp"
#include "sorbet/op_counter.hpp"

namespace sorbet {
namespace {

using detail::abs_checked;
using detail::scale_shift;

std::size_t row_count(const FixedTensor& x, std::size_t channels) {
  if (x.rank() == 0 || x.shape().back() != channels)
    throw std::invalid_argument("last dimension must be the channel axis");
  return x.size() / channels;
}

int pow2_round_real(double ratio) {
  // Nearest-power-of-two exponent of a positive real; half-way rounds up.
  int e = 0;
  const double f = std::frexp(ratio, &e);  // ratio = f * 2^e, f in [0.5, 1)
  return f >= std::sqrt(0.5) ? e : e - 1;
}

}  // namespace

double Pow2Distribution::value(std::size_t i) const {
  return std::ldexp(1.0, exponents[i]);
}

std::vector<double> Pow2Distribution::values() const {
  std::vector<double> out(exponents.size());
  for (std::size_t i = 0; i < exponents.size(); ++i) out[i] = value(i);
  return out;
}

std::vector<double> softmax_ref(std::span<const double> z) {
  if (z.empty()) throw std::invalid_argument("softmax of empty row");
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - m);
    sum += out[i];
  }
  ops::exp(z.size());
  ops::add(z.size() - 1);
  for (double& v : out) v /= sum;
  ops::div(z.size());
  return out;
}

std::vector<double> base2_softmax_ref(std::span<const double> z) {
  if (z.empty()) throw std::invalid_argument("softmax of empty row");
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> out(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp2(z[i] - m);
    sum += out[i];
  }
  ops::exp(z.size());
  ops::add(z.size() - 1);
  for (double& v : out) v /= sum;
  ops::div(z.size());
  return out;
}

Pow2Distribution ptsoftmax(const FixedTensor& scores,
                           std::optional<FixedScalar> clamp_max,
                           Pow2Round k_mode) {
  if (scores.rank() != 1 || scores.size() == 0)
    throw std::invalid_argument("ptsoftmax expects one non-empty row");
  const std::size_t n = scores.size();
  const int f = scores.frac_bits();

  std::int64_t clamp_m = std::numeric_limits<std::int64_t>::max();
  if (clamp_max) {
    // Snap the clamp constant onto the score grid.
    clamp_m = FixedScalar::from_real(clamp_max->real(), f).mantissa;
  }

  // Ceil each (clamped) score to an integer exponent.
  std::vector<std::int64_t> e(n);
  const std::int64_t bias = (std::int64_t{1} << f) - 1;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t m = std::min(scores.mantissa(i), clamp_m);
    std::int64_t biased;
    if (__builtin_add_overflow(m, bias, &biased))
      throw std::overflow_error("score ceil overflow");
    e[i] = biased >> f;
  }
  const auto [emin_it, emax_it] = std::minmax_element(e.begin(), e.end());
  const std::int64_t e_min = *emin_it, e_max = *emax_it;

  // Accumulate sum 2^{e_i} in a 64-bit register. The binary point f_A is
  // placed so the largest term plus carry headroom fits; terms that fall off
  // the bottom of the register vanish, exactly as a finite-width datapath
  // would drop them.
  const int clog = ceil_log2(n);
  std::int64_t f_a = std::min(-e_min, std::int64_t{62} - clog - e_max);
  f_a = std::max(f_a, -e_max);

  std::int64_t a_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t s = e[i] + f_a;
    if (s >= 0) a_sum += std::int64_t{1} << s;
  }
  ops::add(n - 1);

  // Normalizer: nearest power of two of the accumulated sum (one LUT).
  const Pow2Exponent ka = pow2_lut(FixedScalar{a_sum, 0}, k_mode);
  const std::int64_t k = ka.k - f_a;

  Pow2Distribution out;
  out.exponents.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t ex = e[i] - k;
    if (ex < std::numeric_limits<int>::min() ||
        ex > std::numeric_limits<int>::max())
      throw std::overflow_error("ptsoftmax exponent out of range");
    out.exponents[i] = static_cast<int>(ex);
  }
  ops::sub(n);    // e_i - k
  ops::shift(n);  // the normalizing right shift of each entry
  return out;
}

std::vector<double> rmsln_ref(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("rmsln of empty row");
  long double acc = 0.0L;
  for (double v : x) acc += static_cast<long double>(v) * v;
  ops::square(x.size());
  ops::add(x.size() - 1);
  const long double ms = acc / static_cast<long double>(x.size());
  ops::div(1);
  if (ms == 0.0L) throw std::domain_error("rmsln of zero vector");
  const long double rms = std::sqrt(ms);
  ops::sqrt(1);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = static_cast<double>(x[i] / rms);
  ops::div(x.size());
  return out;
}

std::vector<double> layernorm_ref(std::span<const double> x,
                                  std::span<const double> gamma,
                                  std::span<const double> beta) {
  const std::size_t n = x.size();
  if (n == 0) throw std::invalid_argument("layernorm of empty row");
  if (gamma.size() != n || beta.size() != n)
    throw std::invalid_argument("affine parameter size mismatch");

  long double sum = 0.0L;
  for (double v : x) sum += v;
  ops::add(n - 1);
  const long double mean = sum / static_cast<long double>(n);
  ops::div(1);

  long double var_acc = 0.0L;
  for (double v : x) {
    const long double d = v - mean;
    var_acc += d * d;
  }
  ops::sub(n);
  ops::square(n);
  ops::add(n - 1);
  const long double var = var_acc / static_cast<long double>(n);
  ops::div(1);
  if (var == 0.0L) throw std::domain_error("layernorm of zero-variance row");
  const long double sigma = std::sqrt(var);
  ops::sqrt(1);

  // Streaming second pass: re-derive the centered value rather than
  // buffering it, divide by sigma, then apply the affine pair.
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const long double d = x[i] - mean;
    out[i] = static_cast<double>(gamma[i] * (d / sigma) + beta[i]);
  }
  ops::sub(n);
  ops::div(n);
  ops::mul(n);
  ops::add(n);
  return out;
}

FixedTensor relu(const FixedTensor& x) {
  FixedTensor out(x.shape(), x.frac_bits(), x.mantissa_bits());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.set_mantissa(i, std::max<std::int64_t>(x.mantissa(i), 0));
  return out;
}

BspnState BspnState::make(std::size_t channels, std::size_t num_heads,
                          GroupLayout layout, bool pow2_scale_mode,
                          double momentum_alpha) {
  if (channels == 0 || num_heads == 0 || channels % num_heads != 0)
    throw std::invalid_argument("channels must be a positive multiple of heads");
  BspnState s;
  s.channels = channels;
  s.layout = layout;
  s.num_groups =
      layout == GroupLayout::head_groups ? num_heads : channels / num_heads;
  s.momentum_alpha = momentum_alpha;
  s.pow2_scale_mode = pow2_scale_mode;
  s.gamma.assign(channels, 1.0);
  s.beta.assign(channels, 0.0);
  s.psi.assign(channels, 1.0);
  s.validate();
  return s;
}

std::size_t BspnState::group_count() const { return num_groups; }

std::size_t BspnState::group_size() const { return channels / num_groups; }

void BspnState::validate() const {
  if (channels == 0 || num_groups == 0 || channels % num_groups != 0)
    throw std::logic_error("invalid norm group layout");
  if (gamma.size() != channels || beta.size() != channels ||
      psi.size() != channels)
    throw std::logic_error("norm parameter size mismatch");
  if (momentum_alpha < 0.0 || momentum_alpha > 1.0)
    throw std::logic_error("momentum must be in [0, 1]");
}

void BspnState::freeze(int frac_bits) {
  validate();
  scale_exponents.clear();
  scale_factors.clear();
  beta_mantissas.clear();
  for (std::size_t c = 0; c < channels; ++c) {
    if (!(psi[c] > 0.0)) throw std::domain_error("psi must be positive");
    const double ratio = gamma[c] / psi[c];
    if (pow2_scale_mode) {
      if (!(ratio > 0.0))
        throw std::domain_error(
            "pow2 scale mode needs positive gamma/psi per channel");
      scale_exponents.push_back(pow2_round_real(ratio));
    } else {
      scale_factors.push_back(ratio);
    }
    beta_mantissas.push_back(
        FixedScalar::from_real(beta[c], frac_bits).mantissa);
  }
  frozen_frac_bits = frac_bits;
  frozen = true;
}

GroupScaleResult bspn_group_scale(const FixedTensor& x,
                                  std::size_t num_groups,
                                  Pow2Round mode) {
  if (x.rank() == 0 || x.size() == 0)
    throw std::invalid_argument("group scale of empty tensor");
  const std::size_t channels = x.shape().back();
  if (num_groups == 0 || channels % num_groups != 0)
    throw std::invalid_argument("channels not divisible into groups");
  const std::size_t gsize = channels / num_groups;
  const std::size_t rows = x.size() / channels;

  GroupScaleResult res{FixedTensor(x.shape(), x.frac_bits(), x.mantissa_bits()),
                       {}};
  res.log_scales.reserve(rows * num_groups);

  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t g = 0; g < num_groups; ++g) {
      const std::size_t base = r * channels + g * gsize;
      std::int64_t s_m = 0;
      for (std::size_t j = 0; j < gsize; ++j) {
        if (__builtin_add_overflow(s_m, abs_checked(x.mantissa(base + j)),
                                   &s_m))
          throw std::overflow_error("group L1 sum overflow");
      }
      ops::add(gsize - 1);

      int ls = 0;
      if (s_m > 0) {
        ls = pow2_lut(FixedScalar{s_m, x.frac_bits()}, mode).k;
      } else {
        // All-zero group: no scaling, but the lookup slot is still spent.
        ops::lut(1);
      }
      res.log_scales.push_back(ls);

      for (std::size_t j = 0; j < gsize; ++j)
        res.scaled.set_mantissa(base + j,
                                scale_shift(x.mantissa(base + j), -ls));
      ops::shift(gsize);
    }
  }
  return res;
}

FixedTensor bspn_forward_train(const FixedTensor& x, BspnState& state) {
  state.validate();
  if (x.rank() != 2) throw std::invalid_argument("training batch must be 2-D");
  const std::size_t batch = x.shape()[0];
  const std::size_t channels = state.channels;
  if (x.shape()[1] != channels)
    throw std::invalid_argument("channel count mismatch");
  if (batch == 0) throw std::domain_error("empty training batch");
  for (double p : state.psi)
    if (!(p > 0.0)) throw std::domain_error("psi must be positive");

  const std::size_t gsize = state.group_size();
  const int f = x.frac_bits();

  // Offline path: real arithmetic throughout, uninstrumented.
  std::vector<double> scaled(x.size());
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t g = 0; g < state.num_groups; ++g) {
      const std::size_t base = r * channels + g * gsize;
      std::int64_t s_m = 0;
      for (std::size_t j = 0; j < gsize; ++j) {
        if (__builtin_add_overflow(s_m, abs_checked(x.mantissa(base + j)),
                                   &s_m))
          throw std::overflow_error("group L1 sum overflow");
      }
      int ls = 0;
      if (s_m > 0)
        ls = nearest_pow2_exponent(FixedScalar{s_m, f}, Pow2Round::ceil).k;
      for (std::size_t j = 0; j < gsize; ++j)
        scaled[base + j] = std::ldexp(x.real(base + j), -ls);
    }
  }

  std::vector<double> out(x.size());
  for (std::size_t c = 0; c < channels; ++c) {
    long double second = 0.0L;
    for (std::size_t r = 0; r < batch; ++r) {
      const long double y = scaled[r * channels + c];
      second += y * y;
    }
    const double sigma_sq =
        static_cast<double>(second / static_cast<long double>(batch));
    for (std::size_t r = 0; r < batch; ++r) {
      const double xhat = scaled[r * channels + c] / state.psi[c];
      out[r * channels + c] = state.gamma[c] * xhat + state.beta[c];
    }
    const double a = state.momentum_alpha;
    state.psi[c] =
        std::sqrt(a * state.psi[c] * state.psi[c] + (1.0 - a) * sigma_sq);
  }
  return FixedTensor::from_reals(out, x.shape(), f, x.mantissa_bits());
}

FixedTensor bspn_forward_infer(const FixedTensor& x, const BspnState& state) {
  state.validate();
  if (!state.frozen)
    throw std::logic_error("inference before freeze()");
  if (x.frac_bits() != state.frozen_frac_bits)
    throw std::invalid_argument("input grid does not match frozen constants");
  const std::size_t channels = state.channels;
  const std::size_t rows = row_count(x, channels);

  GroupScaleResult gs = bspn_group_scale(x, state.num_groups, Pow2Round::ceil);

  FixedTensor out(x.shape(), x.frac_bits(), x.mantissa_bits());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      std::int64_t m = gs.scaled.mantissa(i);
      if (state.pow2_scale_mode) {
        m = scale_shift(m, state.scale_exponents[c]);
      } else {
        m = std::llround(static_cast<double>(m) * state.scale_factors[c]);
      }
      std::int64_t o;
      if (__builtin_add_overflow(m, state.beta_mantissas[c], &o))
        throw std::overflow_error("norm offset overflow");
      out.set_mantissa(i, o);
    }
    if (state.pow2_scale_mode)
      ops::shift(channels);
    else
      ops::mul(channels);
    ops::add(channels);
  }
  return out;
}

}  // namespace sorbet
