// SPDX-License-Identifier: Apache-2.0
#include "sorbet/op_counter.hpp"

#include <atomic>
#include <vector>

namespace sorbet::ops {
namespace {

std::atomic<bool> g_enabled{true};

// Active scopes on this thread, innermost last.
thread_local std::vector<OpCounter*> t_stack;

inline void record(std::uint64_t OpCounter::*field, std::uint64_t n) {
  if (t_stack.empty() || !g_enabled.load(std::memory_order_relaxed)) return;
  for (OpCounter* c : t_stack) (*c).*field += n;
}

}  // namespace

bool counting_enabled() { return g_enabled.load(std::memory_order_relaxed); }
void set_counting_enabled(bool enabled) {
  g_enabled.store(enabled, std::memory_order_relaxed);
}

CounterScope::CounterScope() { t_stack.push_back(&counts_); }
CounterScope::~CounterScope() { t_stack.pop_back(); }

void add(std::uint64_t n) { record(&OpCounter::add, n); }
void sub(std::uint64_t n) { record(&OpCounter::sub, n); }
void mul(std::uint64_t n) { record(&OpCounter::mul, n); }
void div(std::uint64_t n) { record(&OpCounter::div, n); }
void exp(std::uint64_t n) { record(&OpCounter::exp, n); }
void square(std::uint64_t n) { record(&OpCounter::square, n); }
void sqrt(std::uint64_t n) { record(&OpCounter::sqrt, n); }
void shift(std::uint64_t n) { record(&OpCounter::shift, n); }
void lut(std::uint64_t n) { record(&OpCounter::lut, n); }

}  // namespace sorbet::ops
