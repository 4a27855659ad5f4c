// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace sorbet {

/// Operation tally for one measurement scope. The columns mirror the kernel
/// cost table: +, -, x, /, e^x (base e or 2 share one column), x^2, sqrt(x),
/// >>, LUT.
struct OpCounter {
  std::uint64_t add = 0;
  std::uint64_t sub = 0;
  std::uint64_t mul = 0;
  std::uint64_t div = 0;
  std::uint64_t exp = 0;
  std::uint64_t square = 0;
  std::uint64_t sqrt = 0;
  std::uint64_t shift = 0;
  std::uint64_t lut = 0;

  OpCounter& operator+=(const OpCounter& o) {
    add += o.add;
    sub += o.sub;
    mul += o.mul;
    div += o.div;
    exp += o.exp;
    square += o.square;
    sqrt += o.sqrt;
    shift += o.shift;
    lut += o.lut;
    return *this;
  }

  friend bool operator==(const OpCounter&, const OpCounter&) = default;

  std::uint64_t total() const {
    return add + sub + mul + div + exp + square + sqrt + shift + lut;
  }
};

namespace ops {

/// Global toggle. measure() refuses to run while counting is disabled.
bool counting_enabled();
void set_counting_enabled(bool enabled);

/// RAII measurement scope. Scopes are per-thread and nest; an event is
/// credited to every scope active on the current thread, so an outer scope
/// sees the sum of everything its callees did.
class CounterScope {
 public:
  CounterScope();
  ~CounterScope();
  CounterScope(const CounterScope&) = delete;
  CounterScope& operator=(const CounterScope&) = delete;

  const OpCounter& counts() const { return counts_; }

 private:
  OpCounter counts_;
};

// Event emitters, called by instrumented kernels.
void add(std::uint64_t n = 1);
void sub(std::uint64_t n = 1);
void mul(std::uint64_t n = 1);
void div(std::uint64_t n = 1);
void exp(std::uint64_t n = 1);
void square(std::uint64_t n = 1);
void sqrt(std::uint64_t n = 1);
void shift(std::uint64_t n = 1);
void lut(std::uint64_t n = 1);

}  // namespace ops
}  // namespace sorbet
