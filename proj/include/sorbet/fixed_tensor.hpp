// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace sorbet {

inline constexpr int kDefaultMantissaBits = 32;
inline constexpr int kDefaultFracBits = 8;

/// Rounding mode used when snapping a positive value to a power of two.
/// `ceil` picks the smallest power >= x; `round_nearest` minimizes
/// |log2(x) - k| and rounds the exact midpoint up.
enum class Pow2Round { ceil, round_nearest };

/// An exact power of two, 2^k. k may be negative.
struct Pow2Exponent {
  int k = 0;
  double value() const;
  friend bool operator==(const Pow2Exponent&, const Pow2Exponent&) = default;
};

/// A scalar fixed-point value: mantissa * 2^-frac_bits.
struct FixedScalar {
  std::int64_t mantissa = 0;
  int frac_bits = 0;

  /// Rounds x to the nearest representable grid point.
  static FixedScalar from_real(double x, int frac_bits);
  double real() const;
};

/// Dense tensor of fixed-point values sharing one binary point. Values are
/// mantissa * 2^-frac_bits; mantissas are stored in int64 but must fit the
/// declared signed width (mantissa_bits). Anything that would leave that
/// range is an error, never a silent wraparound.
class FixedTensor {
 public:
  FixedTensor() = default;
  FixedTensor(std::vector<std::size_t> shape, int frac_bits,
              int mantissa_bits = kDefaultMantissaBits);

  static FixedTensor from_mantissas(std::vector<std::int64_t> mantissas,
                                    std::vector<std::size_t> shape,
                                    int frac_bits,
                                    int mantissa_bits = kDefaultMantissaBits);
  /// Rounds each real to the nearest grid point (ties away from zero).
  static FixedTensor from_reals(std::span<const double> reals,
                                std::vector<std::size_t> shape, int frac_bits,
                                int mantissa_bits = kDefaultMantissaBits);
  static FixedTensor from_reals(std::initializer_list<double> reals,
                                std::vector<std::size_t> shape, int frac_bits,
                                int mantissa_bits = kDefaultMantissaBits) {
    return from_reals(std::span<const double>(reals.begin(), reals.size()),
                      std::move(shape), frac_bits, mantissa_bits);
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return mantissas_.size(); }
  int frac_bits() const { return frac_bits_; }
  int mantissa_bits() const { return mantissa_bits_; }

  std::int64_t mantissa(std::size_t i) const { return mantissas_[i]; }
  void set_mantissa(std::size_t i, std::int64_t v);
  std::span<const std::int64_t> mantissas() const { return mantissas_; }

  double real(std::size_t i) const;
  std::vector<double> to_reals() const;

  /// Smallest/largest mantissa the declared width can hold.
  std::int64_t min_mantissa() const;
  std::int64_t max_mantissa() const;

 private:
  void check_range(std::int64_t v) const;

  std::vector<std::int64_t> mantissas_;
  std::vector<std::size_t> shape_;
  int frac_bits_ = 0;
  int mantissa_bits_ = kDefaultMantissaBits;
};

/// floor(log2(m)) for m > 0.
int floor_log2(std::uint64_t m);

/// ceil(log2(n)) for n > 0 (0 for n == 1).
int ceil_log2(std::uint64_t n);

/// Power-of-two exponent of a positive scalar under the given rounding mode.
/// Exact: the nearest/ceil decision is made on the integer mantissa, with the
/// round_nearest midpoint test done as a widened integer compare, so no
/// floating-point log is involved.
Pow2Exponent nearest_pow2_exponent(FixedScalar x, Pow2Round mode);

/// Table-driven variant of nearest_pow2_exponent: leading-zero count plus a
/// 256-entry lookup on the top fraction bits. Buckets that straddle a
/// rounding boundary fall back to the exact integer test. Mantissas above
/// 2^24 are outside the table's design range and take the exact path while
/// bumping a fallback counter. Always agrees bit-exactly with
/// nearest_pow2_exponent and records one LUT access.
Pow2Exponent pow2_lut(FixedScalar x, Pow2Round mode);

std::uint64_t pow2_lut_fallback_count();
void reset_pow2_lut_fallback_count();

/// Divides every element by 2^k.k via arithmetic shift (floor, i.e. rounding
/// toward -inf). Negative k left-shifts and checks for overflow. Records one
/// shift event per element regardless of k.
FixedTensor shift_div(const FixedTensor& x, Pow2Exponent k);

}  // namespace sorbet
