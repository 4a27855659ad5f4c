// SPDX-License-Identifier: Apache-2.0
#include "sorbet/quantize.hpp"

#include <algorithm>
#include <cmath>
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

}  // namespace

int pow2_scale(double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw std::domain_error("step size must be positive and finite");
  int e = 0;
  const double f = std::frexp(alpha, &e);  // alpha = f * 2^e, f in [0.5, 1)
  return f >= std::sqrt(0.5) ? e : e - 1;
}

ElasticParams ElasticParams::from_alpha_beta(
    double alpha, double beta, int bits, std::optional<std::int64_t> max_level) {
  if (bits < 1 || bits > 62) throw std::invalid_argument("bits out of range");
  ElasticParams p;
  p.alpha = alpha;
  p.beta = beta;
  p.k_alpha = pow2_scale(alpha);
  p.bits = bits;
  p.max_level = max_level.value_or((std::int64_t{1} << bits) - 1);
  if (p.max_level < 1) throw std::invalid_argument("max_level must be >= 1");
  return p;
}

ElasticParams ElasticParams::calibrate(std::span<const double> samples,
                                       int bits,
                                       std::optional<std::int64_t> max_level) {
  if (samples.empty()) throw std::invalid_argument("empty calibration set");
  const auto [mn, mx] = std::minmax_element(samples.begin(), samples.end());
  const std::int64_t levels =
      max_level.value_or((std::int64_t{1} << bits) - 1);
  const double span = *mx - *mn;
  const double alpha = span > 0.0 ? span / static_cast<double>(levels) : 1.0;
  return from_alpha_beta(alpha, *mn, bits, levels);
}

FixedTensor elastic_quantize_levels(const FixedTensor& x,
                                    const ElasticParams& p) {
  const int f = x.frac_bits();
  const int s = f + p.k_alpha;
  const std::int64_t m_beta = FixedScalar::from_real(p.beta, f).mantissa;

  FixedTensor out(x.shape(), 0, 64);
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t d = checked_add(x.mantissa(i), -m_beta);
    std::int64_t q;
    if (s >= 1) {
      // round-half-up realized as a bias add plus arithmetic shift
      q = checked_add(d, std::int64_t{1} << (s - 1)) >> s;
    } else if (s == 0) {
      q = d;
    } else {
      q = detail::scale_shift(d, -s);
    }
    out.set_mantissa(i, std::clamp<std::int64_t>(q, 0, p.max_level));
  }
  ops::sub(n);
  if (s >= 1) {
    ops::add(n);
    ops::shift(n);
  } else if (s < 0) {
    ops::shift(n);
  }
  return out;
}

FixedTensor elastic_binarize(const FixedTensor& x, const ElasticParams& p) {
  const int up = x.frac_bits() + p.k_alpha;
  if (up < 0)
    throw std::invalid_argument("grid cannot represent the quantizer step");
  const FixedTensor levels = elastic_quantize_levels(x, p);
  FixedTensor out(x.shape(), x.frac_bits(), x.mantissa_bits());
  for (std::size_t i = 0; i < x.size(); ++i)
    out.set_mantissa(i, detail::scale_shift(levels.mantissa(i), up));
  ops::shift(x.size());
  return out;
}

FixedTensor quantize_pow2_to_levels(const Pow2Distribution& dist,
                                    std::size_t timesteps) {
  if (timesteps == 0 || (timesteps & (timesteps - 1)) != 0)
    throw std::invalid_argument("level grid needs a power-of-two step count");
  const int lg = floor_log2(timesteps);
  const auto t_max = static_cast<std::int64_t>(timesteps);

  FixedTensor out({dist.size()}, 0, 64);
  for (std::size_t i = 0; i < dist.size(); ++i) {
    const std::int64_t s = static_cast<std::int64_t>(dist.exponents[i]) + lg;
    std::int64_t q;
    if (s >= 0)
      q = s >= 62 ? t_max : std::min<std::int64_t>(std::int64_t{1} << s, t_max);
    else
      q = (s == -1) ? 1 : 0;  // round-half-up of 2^s
    out.set_mantissa(i, q);
  }
  ops::shift(dist.size());
  return out;
}

void BinaryLinear::validate() const {
  if (rows == 0 || cols == 0 || signs.size() != rows * cols)
    throw std::logic_error("binary weight shape mismatch");
  for (std::int8_t s : signs)
    if (s != 1 && s != -1) throw std::logic_error("weight sign must be +-1");
  if (out_bias.size() != 0 && out_bias.size() != cols)
    throw std::logic_error("bias size mismatch");
}

BinaryLinear binarize_weights(std::span<const double> w, std::size_t rows,
                              std::size_t cols) {
  if (rows == 0 || cols == 0 || w.size() != rows * cols)
    throw std::invalid_argument("weight shape mismatch");
  long double l1 = 0.0L;
  for (double v : w) l1 += std::fabs(v);
  if (l1 == 0.0L) throw std::domain_error("all-zero weight matrix");

  const double mean_abs = static_cast<double>(l1 / w.size());
  const int k_center = pow2_scale(mean_abs);

  // Scan the neighborhood of the log-nearest scale for the L2 minimizer.
  int best_k = k_center;
  long double best_err = -1.0L;
  for (int k = k_center - 2; k <= k_center + 2; ++k) {
    const long double a = std::ldexp(1.0L, k);
    long double err = 0.0L;
    for (double v : w) {
      const long double d = std::fabs(static_cast<long double>(v)) - a;
      err += d * d;
    }
    if (best_err < 0.0L || err < best_err) {
      best_err = err;
      best_k = k;
    }
  }

  BinaryLinear out;
  out.rows = rows;
  out.cols = cols;
  out.scale_exponent = best_k;
  out.signs.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i)
    out.signs[i] = w[i] < 0.0 ? -1 : 1;
  return out;
}

FixedTensor level_matmul(const FixedTensor& levels, const BinaryLinear& w) {
  w.validate();
  if (levels.frac_bits() != 0)
    throw std::invalid_argument("level tensor must be integer");
  if (levels.rank() == 0 || levels.shape().back() != w.rows)
    throw std::invalid_argument("inner dimension mismatch");
  const std::size_t m = w.rows, p = w.cols;
  const std::size_t batch = levels.size() / m;

  std::vector<std::size_t> out_shape = levels.shape();
  out_shape.back() = p;

  const int fo = w.scale_exponent < 0 ? -w.scale_exponent : 0;
  const int up = w.scale_exponent > 0 ? w.scale_exponent : 0;
  FixedTensor out(out_shape, fo, 64);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < p; ++j) {
      std::int64_t a = 0;
      for (std::size_t k = 0; k < m; ++k) {
        const std::int64_t lvl = levels.mantissa(b * m + k);
        a = checked_add(a, w.sign(k, j) > 0 ? lvl : -lvl);
      }
      a = detail::scale_shift(a, up);
      if (w.out_bias.size() != 0)
        a = checked_add(a, detail::scale_shift(
                               w.out_bias.mantissa(j),
                               fo - w.out_bias.frac_bits()));
      out.set_mantissa(b * p + j, a);
    }
  }
  // Dense-ANN accounting: one MAC per (row, inner, col).
  ops::mul(batch * m * p);
  ops::add(batch * (m - 1) * p);
  ops::shift(batch * p);
  if (w.out_bias.size() != 0) ops::add(batch * p);
  return out;
}

FixedTensor level_matmul(const FixedTensor& levels, const FixedTensor& rhs,
                         int level_exponent) {
  if (rhs.rank() != 2) throw std::invalid_argument("rhs must be 2-D");
  if (levels.frac_bits() != 0)
    throw std::invalid_argument("level tensor must be integer");
  const std::size_t m = rhs.shape()[0], p = rhs.shape()[1];
  if (levels.rank() == 0 || levels.shape().back() != m)
    throw std::invalid_argument("inner dimension mismatch");
  const std::size_t batch = levels.size() / m;

  std::vector<std::size_t> out_shape = levels.shape();
  out_shape.back() = p;

  const int fo_raw = rhs.frac_bits() - level_exponent;
  const int fo = fo_raw >= 0 ? fo_raw : 0;
  const int up = fo_raw >= 0 ? 0 : -fo_raw;
  FixedTensor out(out_shape, fo, 64);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < p; ++j) {
      std::int64_t a = 0;
      for (std::size_t k = 0; k < m; ++k) {
        std::int64_t prod;
        if (__builtin_mul_overflow(levels.mantissa(b * m + k),
                                   rhs.mantissa(k * p + j), &prod))
          throw std::overflow_error("accumulator overflow");
        a = checked_add(a, prod);
      }
      out.set_mantissa(b * p + j, detail::scale_shift(a, up));
    }
  }
  ops::mul(batch * m * p);
  ops::add(batch * (m - 1) * p);
  ops::shift(batch * p);
  return out;
}

}  // namespace sorbet
