// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>

#include "sorbet/fixed_tensor.hpp"

namespace sorbet::detail {

inline std::int64_t abs_checked(std::int64_t m) {
  if (m == std::numeric_limits<std::int64_t>::min())
    throw std::overflow_error("magnitude overflow");
  return m < 0 ? -m : m;
}

/// m * 2^k with floor semantics for k < 0 (arithmetic shift) and an overflow
/// check for k > 0.
inline std::int64_t scale_shift(std::int64_t m, int k) {
  if (k <= 0) {
    const int down = -k;
    return m >> (down >= 63 ? 63 : down);
  }
  if (m == 0) return 0;
  if (k >= 63 || floor_log2(static_cast<std::uint64_t>(abs_checked(m))) + k >= 63)
    throw std::overflow_error("shift overflow");
  return m << k;
}

}  // namespace sorbet::detail
