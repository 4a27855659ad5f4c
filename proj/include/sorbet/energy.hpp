// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include "sorbet/op_counter.hpp"

namespace sorbet {

enum class KernelKind { softmax, ptsoftmax, layernorm, bspn };

std::string kernel_kind_name(KernelKind k);

/// Published per-row operation counts for each kernel over n elements. The
/// norm rows assume a single norm group. These are the accounting
/// reference; instrumented kernels are checked against them (the layernorm
/// multiply column is the one known divergence: a
/// divide-by-sigma implementation measures n multiplies, the table lists 2n).
OpCounter table_cost(KernelKind kind, std::uint64_t n);

/// Relative energy weights per operation class, in adder-energy units. The
/// default ratio folds every multiplier-class op (mul/div/exp/square/sqrt)
/// to 5.1 adder units and keeps shift/LUT at adder cost.
struct EnergyModel {
  double add = 1.0;
  double sub = 1.0;
  double mul = 5.1;
  double div = 5.1;
  double exp = 5.1;
  double square = 5.1;
  double sqrt = 5.1;
  double shift = 1.0;
  double lut = 1.0;

  double cost(const OpCounter& c) const;
};

/// Energy of one tabulated kernel row under the given weights.
double kernel_energy(const EnergyModel& em, KernelKind kind, std::uint64_t n);

/// Spike rate at which T-step accumulation costs as much as one dense
/// multiply pass: rate* = ratio / T. Below it the spiking network wins.
double break_even_rate(std::size_t timesteps, double mul_add_ratio);

/// Addition count of the spiking network relative to a dense baseline of
/// n_bert_macs multiply-accumulates: T * rate * n_bert_macs.
double n_sorbet_ops(std::size_t timesteps, double spike_rate,
                    double n_bert_macs);

/// Per-encoder-stack energy delta from swapping kernels: `layers` copies of
/// one softmax swap, two norm swaps, and one (gelu + tanh -> 2 relu)
/// activation swap per layer. Positive means the swap saves energy.
struct EnergyDelta {
  double softmax_term = 0.0;
  double norm_term = 0.0;
  double activation_term = 0.0;
  double total = 0.0;
};

EnergyDelta encoder_energy_delta(std::size_t layers, double e_softmax,
                                 double e_ptsoftmax, double e_layernorm,
                                 double e_bspn, double e_gelu, double e_tanh,
                                 double e_relu);

/// Runs f under a fresh counting scope and returns what it did. Refuses to
/// run when counting is globally disabled (the numbers would be silently
/// wrong).
template <typename F>
OpCounter measure(F&& f) {
  if (!ops::counting_enabled())
    throw std::logic_error("operation counting is disabled");
  ops::CounterScope scope;
  std::forward<F>(f)();
  return scope.counts();
}

}  // namespace sorbet
