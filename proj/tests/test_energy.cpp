// SPDX-License-Identifier: Apache-2.0
#include <stdexcept>

#include <doctest.h>

#include "sorbet/energy.hpp"

using namespace sorbet;

TEST_CASE("tabulated kernel costs at n = 64") {
  const OpCounter sm = table_cost(KernelKind::softmax, 64);
  CHECK(sm.add == 63);
  CHECK(sm.div == 64);
  CHECK(sm.exp == 64);
  CHECK(sm.sub + sm.mul + sm.square + sm.sqrt + sm.shift + sm.lut == 0);

  const OpCounter pt = table_cost(KernelKind::ptsoftmax, 64);
  CHECK(pt.add == 63);
  CHECK(pt.sub == 64);
  CHECK(pt.shift == 64);
  CHECK(pt.lut == 1);
  CHECK(pt.mul + pt.div + pt.exp + pt.square + pt.sqrt == 0);

  const OpCounter ln = table_cost(KernelKind::layernorm, 64);
  CHECK(ln.add == 3 * 64 - 2);
  CHECK(ln.sub == 2 * 64);
  CHECK(ln.mul == 2 * 64);
  CHECK(ln.div == 64 + 2);
  CHECK(ln.square == 64);
  CHECK(ln.sqrt == 1);
  CHECK(ln.shift + ln.lut == 0);

  const OpCounter bn = table_cost(KernelKind::bspn, 64);
  CHECK(bn.add == 2 * 64 - 1);
  CHECK(bn.shift == 2 * 64);
  CHECK(bn.lut == 1);
  CHECK(bn.sub + bn.mul + bn.div + bn.exp + bn.square + bn.sqrt == 0);
}

TEST_CASE("degenerate single-element rows") {
  const OpCounter pt = table_cost(KernelKind::ptsoftmax, 1);
  CHECK(pt.add == 0);
  CHECK(pt.sub == 1);
  CHECK(pt.shift == 1);
  CHECK(pt.lut == 1);
  const OpCounter bn = table_cost(KernelKind::bspn, 1);
  CHECK(bn.add == 1);
  CHECK(bn.shift == 2);
  CHECK_THROWS_AS(table_cost(KernelKind::softmax, 0), std::invalid_argument);
}

TEST_CASE("kernel names") {
  CHECK(kernel_kind_name(KernelKind::softmax) == "softmax");
  CHECK(kernel_kind_name(KernelKind::ptsoftmax) == "ptsoftmax");
  CHECK(kernel_kind_name(KernelKind::layernorm) == "layernorm");
  CHECK(kernel_kind_name(KernelKind::bspn) == "bspn");
}

TEST_CASE("energy weighting folds multiplier-class ops to 5.1") {
  const EnergyModel em;
  OpCounter c;
  c.add = 10;
  c.mul = 2;
  c.sqrt = 1;
  c.shift = 4;
  c.lut = 1;
  CHECK(em.cost(c) == doctest::Approx(10 + 2 * 5.1 + 5.1 + 4 + 1));
  // shift-based softmax at n=64 costs 192 adder units
  CHECK(kernel_energy(em, KernelKind::ptsoftmax, 64) ==
        doctest::Approx(63 + 64 + 64 + 1));
  // its textbook counterpart pays the multiplier ratio
  CHECK(kernel_energy(em, KernelKind::softmax, 64) ==
        doctest::Approx(63 + 5.1 * 128));
}

TEST_CASE("break-even spike rate") {
  CHECK(break_even_rate(16, 5.1) == doctest::Approx(0.31875));
  CHECK(break_even_rate(16, 5.1) >= 0.318);
  CHECK(break_even_rate(16, 5.1) <= 0.32);
  CHECK(break_even_rate(32, 5.1) == doctest::Approx(0.159375));
  CHECK(break_even_rate(1, 5.1) == doctest::Approx(5.1));
  CHECK_THROWS_AS(break_even_rate(0, 5.1), std::invalid_argument);
  CHECK_THROWS_AS(break_even_rate(16, 0.0), std::domain_error);
}

TEST_CASE("accumulation count relative to the dense baseline") {
  CHECK(n_sorbet_ops(16, 0.13, 1000.0) == doctest::Approx(2080.0));
  CHECK(n_sorbet_ops(16, 0.0, 1000.0) == doctest::Approx(0.0));
  // at the break-even rate the addition budget equals one multiply
  CHECK(n_sorbet_ops(16, 0.32, 1.0) == doctest::Approx(5.12));
  CHECK_THROWS_AS(n_sorbet_ops(16, 1.5, 1.0), std::domain_error);
  CHECK_THROWS_AS(n_sorbet_ops(16, 0.5, -1.0), std::domain_error);
}

TEST_CASE("kernel-swap energy delta") {
  // identical pairs cancel exactly
  const EnergyDelta zero = encoder_energy_delta(12, 5.0, 5.0, 7.0, 7.0, 3.0,
                                                2.0, 2.5);
  CHECK(zero.total == doctest::Approx(0.0));

  // hand-expanded totals under unit op energies at n = 64
  EnergyModel unit;
  unit.mul = unit.div = unit.exp = unit.square = unit.sqrt = 1.0;
  const double sm = table_cost(KernelKind::softmax, 64).total();
  const double pt = table_cost(KernelKind::ptsoftmax, 64).total();
  const double ln = table_cost(KernelKind::layernorm, 64).total();
  const double bn = table_cost(KernelKind::bspn, 64).total();
  CHECK(unit.cost(table_cost(KernelKind::softmax, 64)) == doctest::Approx(sm));
  const EnergyDelta d =
      encoder_energy_delta(12, sm, pt, ln, bn, 10.0, 8.0, 3.0);
  CHECK(d.softmax_term == doctest::Approx(12 * (sm - pt)));
  CHECK(d.norm_term == doctest::Approx(2 * 12 * (ln - bn)));
  CHECK(d.activation_term == doctest::Approx(12 * (10.0 + 8.0 - 2 * 3.0)));
  CHECK(d.total ==
        doctest::Approx(d.softmax_term + d.norm_term + d.activation_term));

  // linearity in the layer count
  const EnergyDelta d2 =
      encoder_energy_delta(24, sm, pt, ln, bn, 10.0, 8.0, 3.0);
  CHECK(d2.total == doctest::Approx(2 * d.total));
}
