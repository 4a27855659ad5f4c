// SPDX-License-Identifier: Apache-2.0
#include "sorbet/fixed_tensor.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sorbet/op_counter.hpp"

namespace sorbet {
namespace {

std::atomic<std::uint64_t> g_lut_fallbacks{0};

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check_width(int bits) {
  if (bits < 2 || bits > 64)
    throw std::invalid_argument("mantissa width must be in [2, 64]");
}

void check_frac(int frac_bits) {
  if (frac_bits < 0 || frac_bits > 62)
    throw std::invalid_argument("frac_bits must be in [0, 62]");
}

// Exact power-of-two decision on a positive integer mantissa. Returns the
// exponent before the binary-point correction.
int mantissa_pow2_exponent(std::int64_t m, Pow2Round mode) {
  const int p = floor_log2(static_cast<std::uint64_t>(m));
  const bool exact = (m & (m - 1)) == 0;
  if (exact) return p;
  if (mode == Pow2Round::ceil) return p + 1;
  // round_nearest: round up iff log2(m) - p >= 0.5, i.e. m^2 >= 2^(2p+1).
  // 2^(2p+1) is never a perfect square, so the midpoint cannot occur; the
  // >= keeps the documented ties-up behaviour anyway.
  const unsigned __int128 sq =
      static_cast<unsigned __int128>(m) * static_cast<unsigned __int128>(m);
  const unsigned __int128 mid = static_cast<unsigned __int128>(1)
                                << (2 * p + 1);
  return sq >= mid ? p + 1 : p;
}

enum class LutEntry : std::uint8_t { down, up, exact };

struct LutTables {
  LutEntry ceil[256];
  LutEntry nearest[256];
};

const LutTables& lut_tables() {
  static const LutTables tables = [] {
    LutTables t{};
    const long double boundary = std::sqrt(2.0L) - 1.0L;  // irrational
    for (int i = 0; i < 256; ++i) {
      t.ceil[i] = (i == 0) ? LutEntry::exact : LutEntry::up;
      const long double lo = static_cast<long double>(i) / 256.0L;
      const long double hi = static_cast<long double>(i + 1) / 256.0L;
      if (hi <= boundary)
        t.nearest[i] = LutEntry::down;
      else if (lo >= boundary)
        t.nearest[i] = LutEntry::up;
      else
        t.nearest[i] = LutEntry::exact;
    }
    return t;
  }();
  return tables;
}

}  // namespace

double Pow2Exponent::value() const { return std::ldexp(1.0, k); }

FixedScalar FixedScalar::from_real(double x, int frac_bits) {
  check_frac(frac_bits);
  if (!std::isfinite(x)) throw std::domain_error("non-finite value");
  const double scaled = std::ldexp(x, frac_bits);
  if (scaled < static_cast<double>(std::numeric_limits<std::int64_t>::min()) ||
      scaled > static_cast<double>(std::numeric_limits<std::int64_t>::max()))
    throw std::overflow_error("value out of fixed-point range");
  return FixedScalar{std::llround(scaled), frac_bits};
}

double FixedScalar::real() const {
  return std::ldexp(static_cast<double>(mantissa), -frac_bits);
}

FixedTensor::FixedTensor(std::vector<std::size_t> shape, int frac_bits,
                         int mantissa_bits)
    : mantissas_(shape_product(shape), 0),
      shape_(std::move(shape)),
      frac_bits_(frac_bits),
      mantissa_bits_(mantissa_bits) {
  check_frac(frac_bits);
  check_width(mantissa_bits);
}

FixedTensor FixedTensor::from_mantissas(std::vector<std::int64_t> mantissas,
                                        std::vector<std::size_t> shape,
                                        int frac_bits, int mantissa_bits) {
  if (shape_product(shape) != mantissas.size())
    throw std::invalid_argument("shape does not match element count");
  FixedTensor t(std::move(shape), frac_bits, mantissa_bits);
  for (std::int64_t m : mantissas) t.check_range(m);
  t.mantissas_ = std::move(mantissas);
  return t;
}

FixedTensor FixedTensor::from_reals(std::span<const double> reals,
                                    std::vector<std::size_t> shape,
                                    int frac_bits, int mantissa_bits) {
  if (shape_product(shape) != reals.size())
    throw std::invalid_argument("shape does not match element count");
  FixedTensor t(std::move(shape), frac_bits, mantissa_bits);
  for (std::size_t i = 0; i < reals.size(); ++i) {
    const FixedScalar s = FixedScalar::from_real(reals[i], frac_bits);
    t.set_mantissa(i, s.mantissa);
  }
  return t;
}

void FixedTensor::set_mantissa(std::size_t i, std::int64_t v) {
  check_range(v);
  mantissas_[i] = v;
}

double FixedTensor::real(std::size_t i) const {
  return std::ldexp(static_cast<double>(mantissas_[i]), -frac_bits_);
}

std::vector<double> FixedTensor::to_reals() const {
  std::vector<double> out(size());
  for (std::size_t i = 0; i < size(); ++i) out[i] = real(i);
  return out;
}

std::int64_t FixedTensor::min_mantissa() const {
  if (mantissa_bits_ == 64) return std::numeric_limits<std::int64_t>::min();
  return -(std::int64_t{1} << (mantissa_bits_ - 1));
}

std::int64_t FixedTensor::max_mantissa() const {
  if (mantissa_bits_ == 64) return std::numeric_limits<std::int64_t>::max();
  return (std::int64_t{1} << (mantissa_bits_ - 1)) - 1;
}

void FixedTensor::check_range(std::int64_t v) const {
  if (v < min_mantissa() || v > max_mantissa())
    throw std::overflow_error("mantissa exceeds declared width");
}

int floor_log2(std::uint64_t m) {
  if (m == 0) throw std::domain_error("floor_log2 of zero");
  return 63 - std::countl_zero(m);
}

int ceil_log2(std::uint64_t n) {
  if (n == 0) throw std::domain_error("ceil_log2 of zero");
  return (n == 1) ? 0 : floor_log2(n - 1) + 1;
}

Pow2Exponent nearest_pow2_exponent(FixedScalar x, Pow2Round mode) {
  if (x.mantissa <= 0)
    throw std::domain_error("power-of-two exponent of non-positive value");
  return Pow2Exponent{mantissa_pow2_exponent(x.mantissa, mode) - x.frac_bits};
}

Pow2Exponent pow2_lut(FixedScalar x, Pow2Round mode) {
  if (x.mantissa <= 0)
    throw std::domain_error("power-of-two exponent of non-positive value");
  ops::lut(1);
  const std::int64_t m = x.mantissa;
  if (m > (std::int64_t{1} << 24)) {
    // Outside the table's design range; exact path, flagged for diagnostics.
    g_lut_fallbacks.fetch_add(1, std::memory_order_relaxed);
    return Pow2Exponent{mantissa_pow2_exponent(m, mode) - x.frac_bits};
  }
  const int p = floor_log2(static_cast<std::uint64_t>(m));
  // Top 8 bits of the fraction part (m / 2^p - 1). For p < 8 the shift is
  // exact, so the low bits of the index are zero.
  const int idx = static_cast<int>(
      (p >= 8 ? (m >> (p - 8)) : (m << (8 - p))) & 0xFF);
  const LutTables& t = lut_tables();
  const LutEntry e =
      (mode == Pow2Round::ceil) ? t.ceil[idx] : t.nearest[idx];
  int k;
  switch (e) {
    case LutEntry::down:
      k = p;
      break;
    case LutEntry::up:
      k = p + 1;
      break;
    default:
      // Bucket straddles the rounding boundary; resolve exactly.
      k = mantissa_pow2_exponent(m, mode);
      break;
  }
  return Pow2Exponent{k - x.frac_bits};
}

std::uint64_t pow2_lut_fallback_count() {
  return g_lut_fallbacks.load(std::memory_order_relaxed);
}

void reset_pow2_lut_fallback_count() {
  g_lut_fallbacks.store(0, std::memory_order_relaxed);
}

FixedTensor shift_div(const FixedTensor& x, Pow2Exponent k) {
  FixedTensor out(x.shape(), x.frac_bits(), x.mantissa_bits());
  ops::shift(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::int64_t m = x.mantissa(i);
    std::int64_t r;
    if (k.k >= 0) {
      // Arithmetic right shift: floor division by 2^k.
      r = m >> (k.k >= 63 ? 63 : k.k);
    } else {
      const int up = -k.k;
      const std::uint64_t mag =
          m < 0 ? std::uint64_t{0} - static_cast<std::uint64_t>(m)
                : static_cast<std::uint64_t>(m);
      if (up >= 63 || (m != 0 && floor_log2(mag) + up >= 63))
        throw std::overflow_error("left shift overflow in shift_div");
      r = m << up;
    }
    out.set_mantissa(i, r);
  }
  return out;
}

}  // namespace sorbet
